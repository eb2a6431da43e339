"""Pareto dominance, nondominated sorting and crowding distance (minimisation)."""

from __future__ import annotations

import numpy as np


def dominance_matrix(F: np.ndarray, penalize_invalid: bool = False, valid_col: int = 0) -> np.ndarray:
    """``D[a, b]`` is True when row ``a`` dominates row ``b``.

    With ``penalize_invalid`` every row whose ``valid_col`` entry is zero
    dominates every row where it is positive, whatever the other objectives.
    """
    F = np.asarray(F, dtype=float)
    le = (F[:, None, :] <= F[None, :, :]).all(axis=2)
    lt = (F[:, None, :] < F[None, :, :]).any(axis=2)
    D = le & lt
    if penalize_invalid:
        valid = F[:, valid_col] <= 0
        cross = valid[:, None] != valid[None, :]
        D = np.where(cross, valid[:, None] & ~valid[None, :], D)
    return D


def nondominated_sort(F: np.ndarray, penalize_invalid: bool = False) -> list[np.ndarray]:
    """Fronts as arrays of row indices, best front first, each in index order."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    if n == 0:
        return []
    D = dominance_matrix(F, penalize_invalid)
    dominated_by = D.sum(axis=0)
    remaining = np.ones(n, dtype=bool)
    fronts = []
    while remaining.any():
        front = np.flatnonzero(remaining & (dominated_by == 0))
        fronts.append(front)
        remaining[front] = False
        dominated_by = dominated_by - D[front].sum(axis=0)
    return fronts


def nondominated_mask(F: np.ndarray) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return ~dominance_matrix(F).any(axis=0)


def is_antichain(F: np.ndarray) -> bool:
    """Brute-force check that no row dominates another."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    for a in range(F.shape[0]):
        for b in range(F.shape[0]):
            if a != b and np.all(F[a] <= F[b]) and np.any(F[a] < F[b]):
                return False
    return True


def crowding_distance(F: np.ndarray) -> np.ndarray:
    """NSGA-II crowding distance.

    Per objective, boundary points get infinity and interior points add the
    normalised gap between their neighbours. Constant objectives are skipped.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n, k = F.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for j in range(k):
        order = np.argsort(F[:, j], kind="stable")
        col = F[order, j]
        span = col[-1] - col[0]
        if span <= 0:
            continue
        dist[order[0]] = dist[order[-1]] = np.inf
        gaps = (col[2:] - col[:-2]) / span
        dist[order[1:-1]] += gaps
    return dist


def crowding_order(F: np.ndarray) -> np.ndarray:
    """Row order by decreasing crowding distance (stable on ties)."""
    return np.argsort(-crowding_distance(F), kind="stable")
