"""Candidate containers and the output rule shared by both counterfactual searches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import ObjectiveVector
from .pareto import nondominated_mask


def default_m_max(p: int) -> int:
    """Maximum number of changed features: ``min(ceil(sqrt(p) + 3), p)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return min(math.ceil(math.sqrt(p) + 3), p)


@dataclass(frozen=True)
class Candidate:
    instance: np.ndarray
    objectives: ObjectiveVector
    changed: frozenset
    prediction: float


@dataclass
class CounterfactualSet:
    """Returned counterfactuals plus run metadata."""

    candidates: list[Candidate]
    n_evaluated: int = 0
    warnings: list[str] = field(default_factory=list)
    condition_log: list = field(default_factory=list)
    generations: int = 0

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    @property
    def X(self) -> np.ndarray:
        if not self.candidates:
            return np.empty((0, 0))
        return np.stack([c.instance for c in self.candidates])

    @property
    def F(self) -> np.ndarray:
        return np.array([c.objectives.as_array() for c in self.candidates]).reshape(-1, 4)

    @property
    def predictions(self) -> np.ndarray:
        return np.array([c.prediction for c in self.candidates])


def unique_rows(X: np.ndarray) -> np.ndarray:
    """Indices of the first occurrence of every distinct row, in input order."""
    if X.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    _, first = np.unique(X, axis=0, return_index=True)
    return np.sort(first)


def finalize(X, F, preds, x_star, in_des) -> list[Candidate]:
    """Valid, unique, non-``x_star``, mutually nondominated candidates."""
    X = np.asarray(X, dtype=float)
    keep = np.flatnonzero(in_des & ~(X == x_star[None, :]).all(axis=1))
    X, F, preds = X[keep], F[keep], preds[keep]
    u = unique_rows(X)
    X, F, preds = X[u], F[u], preds[u]
    nd = nondominated_mask(F) if X.shape[0] else np.zeros(0, dtype=bool)
    out = []
    for i in np.flatnonzero(nd):
        out.append(
            Candidate(
                instance=X[i].copy(),
                objectives=ObjectiveVector(*F[i]),
                changed=frozenset(np.flatnonzero(X[i] != x_star).tolist()),
                prediction=float(preds[i]),
            )
        )
    return out
