"""NSGA-II counterfactual search with a default or a FORGE-based mutator.

The population starts from ICE-guided perturbations of ``x_star``. Every
generation selects the best half by validity, recombines pairs feature by
feature and mutates the children. Parents and children are merged and the
next population is chosen by nondominated rank and crowding distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .arf import ArfModel, ConditionSet, FixedValue, InfeasibleCondition, Interval, forge_sample
from .candidates import CounterfactualSet, default_m_max, finalize, unique_rows
from .evalbench.metrics import hypervolume
from .objectives import ARF, KNN, DesiredOutcome, ObjectiveContext, Predictor, ice_importances
from .pareto import crowding_distance, nondominated_sort
from .tabular import Dataset, FeatureRanges, feature_ranges, gower_matrix

log = logging.getLogger(__name__)

DEFAULT = "default"
FORGE = "forge"

__all__ = [
    "MocConfig",
    "initialize_population",
    "nondominated_sort",
    "crowding_distance_sort",
    "create_offspring",
    "run_moc",
    "run_mocarf",
]


@dataclass
class MocConfig:
    population_size: int = 20
    n_generations: int = 50
    p_recombine: float = 0.5  # per feature
    p_mutate: float = 0.2  # per mutable feature
    p_reset: float = 0.1  # share of mutations that restore the x_star value
    m_max: int | None = None  # None: default_m_max(p)
    mutator: str = DEFAULT
    backend: str = KNN
    penalize_invalid: bool = True
    early_stop: bool = False
    hv_tolerance: float = 1e-4
    hv_window: int = 3
    immutable: Sequence[int] = ()
    k: int = 1
    seed: int = 0

    def __post_init__(self):
        mu = self.population_size
        if mu < 2 or mu % 2:
            raise ValueError("population_size must be an even number >= 2")
        if self.n_generations < 0:
            raise ValueError("n_generations must be >= 0")
        if self.mutator not in (DEFAULT, FORGE):
            raise ValueError(f"unknown mutator {self.mutator!r}")
        if self.backend not in (KNN, ARF):
            raise ValueError(f"unknown plausibility backend {self.backend!r}")
        for name in ("p_recombine", "p_mutate", "p_reset"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        self.immutable = tuple(sorted(set(int(j) for j in self.immutable)))

    def resolve_m_max(self, p: int) -> int:
        m = default_m_max(p) if self.m_max is None else int(self.m_max)
        if not 1 <= m <= p:
            raise ValueError(f"m_max must lie in [1, {p}]")
        return m


def _mutable(p: int, immutable) -> np.ndarray:
    mask = np.ones(p, dtype=bool)
    mask[list(immutable)] = False
    return mask


def _draw_value(rng, d: Dataset, ranges: FeatureRanges, j: int, current: float) -> float:
    f = d.schema.features[j]
    if f.is_categorical:
        others = [v for v in range(f.n_levels) if v != int(current)]
        return float(rng.choice(others)) if others else current
    return float(rng.uniform(ranges.lo[j], ranges.hi[j]))


def initialize_population(
    x_star,
    predictor: Predictor,
    d: Dataset,
    mu: int,
    m_max: int,
    seed=0,
    immutable: Sequence[int] = (),
    importances: np.ndarray | None = None,
) -> np.ndarray:
    """``mu`` perturbations of ``x_star``, changing features with high ICE importance more often."""
    if mu < 2:
        raise ValueError("mu must be >= 2")
    rng = np.random.default_rng(seed)
    x_star = np.asarray(x_star, dtype=float)
    ranges = feature_ranges(d)
    mutable = np.flatnonzero(_mutable(d.p, immutable))
    if mutable.size == 0:
        raise ValueError("no mutable feature")
    imp = ice_importances(predictor, x_star, d) if importances is None else np.asarray(importances, float)
    w = imp[mutable]
    w = np.full(mutable.size, 1.0 / mutable.size) if w.sum() <= 0 else w / w.sum()
    n_pos = int((w > 0).sum())
    X = np.repeat(x_star[None, :], mu, axis=0)
    for i in range(mu):
        m = int(rng.integers(1, m_max + 1))
        m = min(m, n_pos)
        for j in rng.choice(mutable, size=m, replace=False, p=w):
            X[i, j] = _draw_value(rng, d, ranges, j, x_star[j])
    return X


def crowding_distance_sort(
    F: np.ndarray, X: np.ndarray | None = None, x_star=None, ranges: FeatureRanges | None = None
) -> np.ndarray:
    """Indices of a front ordered by decreasing crowding distance.

    When ``X`` and ``x_star`` are given, the Gower distance to ``x_star``
    joins the objectives as an extra coordinate so that spread in feature
    space also counts. Equal distances are broken by lower validity value,
    then by position.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if X is not None and x_star is not None:
        if ranges is None:
            raise ValueError("feature-space crowding needs feature ranges")
        feat = gower_matrix(np.atleast_2d(X), np.asarray(x_star, float)[None, :], ranges)
        F = np.column_stack([F, feat[:, 0]])
    dist = crowding_distance(F)
    return np.lexsort((np.arange(F.shape[0]), F[:, 0], -dist))


def _enforce_m_max(X: np.ndarray, x_star: np.ndarray, m_max: int, rng) -> None:
    for i in range(X.shape[0]):
        changed = np.flatnonzero(X[i] != x_star)
        if changed.size > m_max:
            drop = rng.choice(changed, size=changed.size - m_max, replace=False)
            X[i, drop] = x_star[drop]


def _default_mutation(x, x_star, d, ranges, mutable, p_mutate, p_reset, rng) -> np.ndarray:
    x = x.copy()
    for j in np.flatnonzero(mutable):
        if rng.random() >= p_mutate:
            continue
        if rng.random() < p_reset:
            x[j] = x_star[j]
            continue
        f = d.schema.features[j]
        if f.is_categorical:
            x[j] = _draw_value(rng, d, ranges, j, x[j])
        else:
            jitter = rng.normal(0.0, 0.1 * ranges.width[j])
            x[j] = float(np.clip(x[j] + jitter, ranges.lo[j], ranges.hi[j]))
    return x


def _forge_conditions(x_star, keep: np.ndarray, arf: ArfModel, y_des: DesiredOutcome) -> ConditionSet:
    conds = {int(j): FixedValue(float(x_star[j])) for j in np.flatnonzero(keep)}
    if arf.prediction_column is not None:
        conds[arf.prediction_column] = Interval(y_des.lo, y_des.hi)
    return ConditionSet(conds)


def create_offspring(
    X: np.ndarray,
    F: np.ndarray,
    context: ObjectiveContext,
    config: MocConfig,
    seed=0,
    arf: ArfModel | None = None,
    condition_log: list | None = None,
    warnings: list | None = None,
) -> np.ndarray:
    """``mu`` children from the better half of the population (by validity)."""
    rng = np.random.default_rng(seed)
    mu, p = X.shape
    x_star = context.x_star
    d = context.data
    ranges = context.ranges
    mutable = _mutable(p, config.immutable)
    m_max = config.resolve_m_max(p)
    half = max(1, mu // 2)
    parents = X[np.argsort(F[:, 0], kind="stable")[:half]]

    children = np.empty((2 * half, p))
    for i in range(half):
        a, b = parents[i], parents[(i + 1) % half]
        swap = rng.random(p) < config.p_recombine
        children[2 * i] = np.where(swap, b, a)
        children[2 * i + 1] = np.where(swap, a, b)
    children = children[:mu]

    for i in range(children.shape[0]):
        if config.mutator == FORGE:
            hit = mutable & (rng.random(p) < config.p_mutate)
            if not hit.any():
                continue
            S = np.flatnonzero(mutable & ((children[i] != x_star) | hit))
            if S.size > m_max:
                S = np.sort(rng.choice(S, size=m_max, replace=False))
            keep = np.ones(p, dtype=bool)
            keep[S] = False
            cond = _forge_conditions(x_star, keep, arf, context.y_des)
            try:
                row = forge_sample(arf, 1, cond, seed=rng).X[0, :p]
            except InfeasibleCondition:
                if warnings is not None:
                    warnings.append(f"FORGE infeasible for change set {S.tolist()}; used default mutation")
                children[i] = _default_mutation(
                    children[i], x_star, d, ranges, mutable, config.p_mutate, config.p_reset, rng
                )
                continue
            if condition_log is not None:
                condition_log.append({"changed": S.tolist(), "conditions": cond.to_dict()})
            children[i] = np.where(keep, x_star, row)
        else:
            children[i] = _default_mutation(
                children[i], x_star, d, ranges, mutable, config.p_mutate, config.p_reset, rng
            )
    _enforce_m_max(children, x_star, m_max, rng)
    return children


def _select_survivors(X, F, mu, context: ObjectiveContext, penalize_invalid: bool) -> np.ndarray:
    u = unique_rows(X)
    pool = u if u.size >= mu else np.arange(X.shape[0])
    chosen = []
    for front in nondominated_sort(F[pool], penalize_invalid):
        idx = pool[front]
        room = mu - len(chosen)
        if idx.size <= room:
            chosen.extend(idx.tolist())
        else:
            order = crowding_distance_sort(F[idx], X[idx], context.x_star, context.ranges)
            chosen.extend(idx[order[:room]].tolist())
        if len(chosen) >= mu:
            break
    return np.array(chosen, dtype=np.int64)


def _valid_hv(F: np.ndarray) -> float:
    valid = F[:, 0] <= 0
    return hypervolume(np.clip(F[valid][:, 1:], 0.0, 1.0), np.ones(3)) if valid.any() else 0.0


def run_moc(
    x_star,
    y_des: DesiredOutcome,
    predictor: Predictor,
    d: Dataset,
    arf: ArfModel | None = None,
    config: MocConfig | None = None,
) -> CounterfactualSet:
    """Search counterfactuals for ``x_star`` and return the unique nondominated valid ones."""
    config = config or MocConfig()
    x_star = np.asarray(x_star, dtype=float)
    d.schema.validate_instance(x_star, allow_missing=False)
    if (config.mutator == FORGE or config.backend == ARF) and arf is None:
        raise ValueError("the FORGE mutator and the ARF backend need a fitted ARF model")
    m_max = config.resolve_m_max(d.p)
    context = ObjectiveContext(x_star, predictor, y_des, d, backend=config.backend, k=config.k, arf=arf)
    root = np.random.SeedSequence([int(config.seed), 2])
    init_seed, *gen_seeds = root.spawn(config.n_generations + 1)

    X = initialize_population(x_star, predictor, d, config.population_size, m_max, init_seed, config.immutable)
    F, preds = context.evaluate(X)
    seen_X, seen_F, seen_p = [X], [F], [preds]
    warnings: list[str] = []
    condition_log: list = []
    hv_prev = _valid_hv(F)
    stall = 0
    generations = 0
    for t in range(config.n_generations):
        Xo = create_offspring(X, F, context, config, gen_seeds[t], arf, condition_log, warnings)
        Fo, po = context.evaluate(Xo)
        seen_X.append(Xo)
        seen_F.append(Fo)
        seen_p.append(po)
        R, FR, pR = np.vstack([X, Xo]), np.vstack([F, Fo]), np.concatenate([preds, po])
        keep = _select_survivors(R, FR, config.population_size, context, config.penalize_invalid)
        X, F, preds = R[keep], FR[keep], pR[keep]
        generations = t + 1
        if config.early_stop:
            hv = _valid_hv(np.vstack(seen_F))
            stall = stall + 1 if hv - hv_prev < config.hv_tolerance else 0
            hv_prev = hv
            if stall >= config.hv_window:
                break

    allX, allF, allp = np.vstack(seen_X), np.vstack(seen_F), np.concatenate(seen_p)
    cands = finalize(allX, allF, allp, x_star, y_des.contains(allp))
    if not cands:
        warnings.append("no valid counterfactual found")
    return CounterfactualSet(
        cands,
        n_evaluated=allX.shape[0],
        warnings=warnings,
        condition_log=condition_log,
        generations=generations,
    )


def run_mocarf(x_star, y_des, predictor, d, arf: ArfModel, config: MocConfig | None = None) -> CounterfactualSet:
    """MOC with the FORGE mutator and ARF plausibility."""
    config = config or MocConfig()
    return run_moc(x_star, y_des, predictor, d, arf, replace(config, mutator=FORGE, backend=ARF))
