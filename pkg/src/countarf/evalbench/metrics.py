"""Front-quality and rank statistics used to score counterfactual sets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..pareto import nondominated_mask


def hypervolume(points, ref=None) -> float:
    """Exact dominated hypervolume of ``points`` (minimisation) w.r.t. ``ref``.

    Points not strictly better than ``ref`` in every coordinate add nothing
    and are dropped. The measure is computed by slicing along the last
    objective and recursing on the remaining ones.
    """
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return 0.0
    P = np.atleast_2d(P)
    ref = np.ones(P.shape[1]) if ref is None else np.asarray(ref, dtype=float)
    P = P[(P < ref).all(axis=1)]
    if P.shape[0] == 0:
        return 0.0
    return float(_hv(P[nondominated_mask(P)], ref))


def _hv(P: np.ndarray, ref: np.ndarray) -> float:
    d = P.shape[1]
    if d == 1:
        return ref[0] - P[:, 0].min()
    if d == 2:
        P = P[np.lexsort((P[:, 1], P[:, 0]))]
        xs = np.append(P[:, 0], ref[0])
        ymin = np.minimum.accumulate(P[:, 1])
        return float(np.sum(np.diff(xs) * (ref[1] - ymin)))
    P = P[np.argsort(P[:, -1], kind="stable")]
    z = np.append(P[:, -1], ref[-1])
    vol = 0.0
    for i in range(P.shape[0]):
        depth = z[i + 1] - z[i]
        if depth <= 0:
            continue
        S = P[: i + 1, :-1]
        vol += _hv(S[nondominated_mask(S)], ref[:-1]) * depth
    return vol


def hypervolume_mc(points, ref=None, n_samples: int = 1_000_000, seed=0, lower=None) -> float:
    """Monte-Carlo hypervolume over the box ``[lower, ref]`` (default unit box)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    d = P.shape[1]
    ref = np.ones(d) if ref is None else np.asarray(ref, dtype=float)
    lower = np.zeros(d) if lower is None else np.asarray(lower, dtype=float)
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 100_000
    for s in range(0, n_samples, chunk):
        m = min(chunk, n_samples - s)
        U = lower + rng.random((m, d)) * (ref - lower)
        dom = np.zeros(m, dtype=bool)
        for p in P:
            dom |= (U >= p).all(axis=1)
        hits += int(dom.sum())
    return hits / n_samples * float(np.prod(ref - lower))


def eaf_median(runs, level: float = 0.5) -> np.ndarray:
    """Minimal points of the 2-D attainment surface reached by ``level`` of runs.

    A point is attained by a run when some point of that run weakly
    dominates it; the surface is attained by at least ``ceil(level * n)``
    of the ``n`` runs.
    """
    runs = [np.atleast_2d(np.asarray(r, dtype=float)).reshape(-1, 2) for r in runs]
    if not runs:
        raise ValueError("need at least one run")
    k = max(1, math.ceil(level * len(runs) - 1e-12))
    allp = np.vstack([r for r in runs if r.size] or [np.empty((0, 2))])
    if allp.shape[0] == 0:
        return np.empty((0, 2))
    xs = np.unique(allp[:, 0])
    best = np.full((len(runs), xs.size), np.inf)
    for i, r in enumerate(runs):
        if r.size == 0:
            continue
        r = r[np.argsort(r[:, 0], kind="stable")]
        run_min = np.minimum.accumulate(r[:, 1])
        pos = np.searchsorted(r[:, 0], xs, side="right") - 1
        best[i] = np.where(pos >= 0, run_min[np.maximum(pos, 0)], np.inf)
    yk = np.sort(best, axis=0)[k - 1] if len(runs) >= k else np.full(xs.size, np.inf)
    out = []
    current = np.inf
    for x, y in zip(xs, yk):
        if y < current:
            out.append((x, y))
            current = y
    return np.array(out).reshape(-1, 2)


def rank_average(a) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    a = np.asarray(a, dtype=float)
    order = np.argsort(a, kind="stable")
    sa = a[order]
    ranks = np.empty(a.size)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


class UndefinedCorrelation(ValueError):
    pass


def spearman_rho(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman_rho needs two 1-D sequences of equal length")
    if a.size < 2:
        raise ValueError("spearman_rho needs at least two observations")
    ra, rb = rank_average(a), rank_average(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        raise UndefinedCorrelation("zero rank variance")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of the positive differences
    n: int  # non-zero differences
    z: float
    p_two_sided: float
    p_greater: float
    p_less: float


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(diffs) -> WilcoxonResult:
    """Signed-rank test with the normal approximation.

    Zeros are dropped, tied magnitudes share average ranks (with the usual
    variance correction) and a continuity correction of 0.5 is applied.
    ``p_greater`` tests for differences shifted above zero.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 0, 0.0, 1.0, 1.0, 1.0)
    r = rank_average(np.abs(d))
    w_plus = float(r[d > 0].sum())
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0:
        return WilcoxonResult(w_plus, n, 0.0, 1.0, 1.0, 1.0)
    sd = math.sqrt(var)
    dev = w_plus - mean
    z = dev / sd
    p_two = min(1.0, 2.0 * _norm_sf(max(abs(dev) - 0.5, 0.0) / sd))
    p_greater = _norm_sf((dev - 0.5) / sd)
    p_less = 1.0 - _norm_sf((dev + 0.5) / sd)
    return WilcoxonResult(w_plus, n, z, p_two, p_greater, p_less)


def sign_test_p(n_positive: int, n: int) -> float:
    """One-sided exact binomial sign test P(X >= n_positive), X ~ Bin(n, 1/2)."""
    return sum(math.comb(n, k) for k in range(n_positive, n + 1)) / 2.0**n
