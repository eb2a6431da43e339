"""Counterfactual objectives and ICE-based local feature importance.

All objectives are minimised and live in [0, 1]: validity (distance of the
prediction to the desired interval, clipped at 1), proximity (Gower distance
to the instance of interest), plausibility (kNN Gower distance to the data,
or ``exp(-density)`` under an ARF) and sparsity (share of changed features).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .arf import ArfModel, forde_density
from .tabular import Dataset, FeatureRanges, FeatureSchema, feature_ranges, gower_matrix

Predictor = Callable[[np.ndarray], np.ndarray]

KNN = "knn"
ARF = "arf"
ICE_GRID_SIZE = 20


@dataclass(frozen=True)
class DesiredOutcome:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("desired outcome needs lo <= hi")

    def contains(self, pred):
        pred = np.asarray(pred, dtype=float)
        return (pred >= self.lo) & (pred <= self.hi)


@dataclass(frozen=True)
class ObjectiveVector:
    valid: float
    prox: float
    plaus: float
    sparse: float

    def as_array(self) -> np.ndarray:
        return np.array([self.valid, self.prox, self.plaus, self.sparse])


def o_valid(pred, y_des: DesiredOutcome):
    """Distance from the prediction to the nearest point of the desired interval."""
    pred = np.asarray(pred, dtype=float)
    out = np.maximum(np.maximum(y_des.lo - pred, pred - y_des.hi), 0.0)
    return float(out) if out.ndim == 0 else out


def o_prox(x, x_star, schema: FeatureSchema, ranges: FeatureRanges):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = gower_matrix(X, np.asarray(x_star, dtype=float)[None, :], ranges)[:, 0]
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def knn_distances(X: np.ndarray, d: Dataset, ranges: FeatureRanges, k: int, chunk: int = 256) -> np.ndarray:
    """(n, k) Gower distances to the k nearest rows of ``d``, nearest first.

    Ties are broken by row index.
    """
    if k > d.n:
        raise ValueError(f"k={k} exceeds the {d.n} rows of the reference data")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((X.shape[0], k))
    for s in range(0, X.shape[0], chunk):
        D = gower_matrix(X[s : s + chunk], d.X, ranges)
        if k == 1:
            out[s : s + chunk, 0] = D.min(axis=1)
        else:
            idx = np.argsort(D, axis=1, kind="stable")[:, :k]
            out[s : s + chunk] = np.take_along_axis(D, idx, axis=1)
    return out


def o_plaus_knn(x, d: Dataset, k: int = 1, weights: Sequence[float] | None = None, ranges: FeatureRanges | None = None):
    """Weighted Gower distance to the k nearest neighbours in ``d``."""
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (k,):
        raise ValueError("need exactly k weights")
    if not np.isclose(w.sum(), 1.0):
        raise ValueError("kNN weights must sum to 1")
    ranges = ranges or feature_ranges(d)
    out = knn_distances(x, d, ranges, k) @ w
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def o_plaus_arf(x, m: ArfModel, predictor: Predictor | None = None, marginalize=()):
    """exp(-density) under the ARF.

    If the model carries a prediction column and ``x`` lacks it, the
    column is filled with ``predictor(x)`` before the density is evaluated
    (or integrated out when the predictor is omitted).
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    marg = tuple(marginalize)
    if m.prediction_column is not None and X.shape[1] == m.p - 1:
        if predictor is None:
            X = np.column_stack([X, np.zeros(X.shape[0])])
            marg = marg + (m.prediction_column,)
        else:
            X = np.column_stack([X, predictor(X)])
    out = np.exp(-forde_density(m, X, marginalize=marg))
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def o_sparse(x, x_star, schema: FeatureSchema | None = None):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = (X != np.asarray(x_star, dtype=float)[None, :]).mean(axis=1)
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def ice_grid(d: Dataset, j: int, size: int = ICE_GRID_SIZE) -> np.ndarray:
    f = d.schema.features[j]
    if f.is_categorical:
        return np.arange(f.n_levels, dtype=float)
    col = d.X[:, j]
    col = col[~np.isnan(col)]
    return np.linspace(col.min(), col.max(), size)


def _curve_sd(pred: np.ndarray) -> float:
    # flat curves score exactly zero, free of rounding noise
    return 0.0 if np.ptp(pred) == 0 else float(np.std(pred))


def ice_importance(predictor: Predictor, x_star, d: Dataset, j: int, size: int = ICE_GRID_SIZE) -> float:
    """Standard deviation of the ICE curve of feature ``j`` at ``x_star``."""
    grid = ice_grid(d, j, size)
    X = np.repeat(np.asarray(x_star, dtype=float)[None, :], grid.size, axis=0)
    X[:, j] = grid
    return _curve_sd(np.asarray(predictor(X), dtype=float))


def ice_importances(predictor: Predictor, x_star, d: Dataset, size: int = ICE_GRID_SIZE) -> np.ndarray:
    """ICE importances for every feature, with a single batched predictor call."""
    x_star = np.asarray(x_star, dtype=float)
    grids = [ice_grid(d, j, size) for j in range(d.p)]
    X = np.repeat(x_star[None, :], sum(g.size for g in grids), axis=0)
    pos = 0
    spans = []
    for j, g in enumerate(grids):
        X[pos : pos + g.size, j] = g
        spans.append((pos, pos + g.size))
        pos += g.size
    pred = np.asarray(predictor(X), dtype=float)
    return np.array([_curve_sd(pred[a:b]) for a, b in spans])


@dataclass
class ObjectiveContext:
    """Everything needed to score candidates for one instance of interest."""

    x_star: np.ndarray
    predictor: Predictor
    y_des: DesiredOutcome
    data: Dataset
    backend: str = KNN
    k: int = 1
    weights: Sequence[float] | None = None
    arf: ArfModel | None = None
    include_prediction: bool = False  # False: integrate the prediction column out
    ranges: FeatureRanges | None = None

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float)
        if self.backend not in (KNN, ARF):
            raise ValueError(f"unknown plausibility backend {self.backend!r}")
        if self.backend == ARF and self.arf is None:
            raise ValueError("the ARF plausibility backend needs a fitted ARF model")
        if self.ranges is None:
            self.ranges = feature_ranges(self.data)

    @property
    def schema(self) -> FeatureSchema:
        return self.data.schema

    def plausibility(self, X: np.ndarray, preds: np.ndarray | None = None, backend: str | None = None) -> np.ndarray:
        backend = backend or self.backend
        if backend == KNN:
            return o_plaus_knn(X, self.data, self.k, self.weights, self.ranges)
        if self.arf is None:
            raise ValueError("no ARF model available")
        if self.arf.prediction_column is not None and self.include_prediction:
            if preds is None:
                preds = self.predictor(X)
            return o_plaus_arf(np.column_stack([X, preds]), self.arf)
        return o_plaus_arf(X, self.arf)

    def evaluate(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Objective matrix (n, 4) and predictions for candidate rows ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        preds = np.asarray(self.predictor(X), dtype=float)
        obj = np.empty((X.shape[0], 4))
        obj[:, 0] = np.minimum(o_valid(preds, self.y_des), 1.0)
        obj[:, 1] = gower_matrix(X, self.x_star[None, :], self.ranges)[:, 0]
        obj[:, 2] = self.plausibility(X, preds)
        obj[:, 3] = (X != self.x_star[None, :]).mean(axis=1)
        return obj, preds


def evaluate_candidate(x, context: ObjectiveContext) -> ObjectiveVector:
    obj, _ = context.evaluate(np.asarray(x, dtype=float)[None, :])
    return ObjectiveVector(*obj[0])
