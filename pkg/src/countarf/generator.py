"""ARF-based counterfactual generator.

Each iteration picks a change set ``S`` with probability proportional to
local ICE importance, fixes every other feature to its ``x_star`` value,
asks for a prediction inside the desired interval and draws candidates
with conditional FORGE. Candidates are then checked against the model,
scored and reduced to the unique nondominated valid set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arf import ArfModel, ConditionSet, FixedValue, InfeasibleCondition, Interval, forge_sample
from .candidates import CounterfactualSet, default_m_max, finalize
from .objectives import ARF, DesiredOutcome, ObjectiveContext, Predictor, ice_importances
from .tabular import Dataset

log = logging.getLogger(__name__)

EPSILON_SHARE = 1e-3  # total probability spread uniformly over mutable features

__all__ = ["CountArfConfig", "default_m_max", "sample_change_set", "run_countarf"]


@dataclass
class CountArfConfig:
    m_max: int | None = None  # None: default_m_max(p)
    n_iterations: int = 20
    n_synth: int = 50
    immutable: Sequence[int] = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1 or self.n_synth < 1:
            raise ValueError("n_iterations and n_synth must be >= 1")
        self.immutable = tuple(sorted(set(int(j) for j in self.immutable)))

    def resolve_m_max(self, p: int) -> int:
        m = default_m_max(p) if self.m_max is None else int(self.m_max)
        if not 1 <= m <= p:
            raise ValueError(f"m_max must lie in [1, {p}]")
        return m


def sample_change_set(importances, m_max: int, immutable: Sequence[int] = (), seed=0) -> frozenset:
    """Draw ``m ~ U{1..m_max}`` mutable features, without replacement, by importance.

    A small uniform share is mixed in so that zero-importance features stay
    reachable. ``m`` is clamped to the number of mutable features.
    """
    rng = np.random.default_rng(seed)
    imp = np.asarray(importances, dtype=float)
    if (imp < 0).any():
        raise ValueError("importances must be non-negative")
    mutable = np.setdiff1d(np.arange(imp.size), np.asarray(immutable, dtype=np.int64))
    if mutable.size == 0:
        raise ValueError("no mutable feature")
    m = min(int(rng.integers(1, m_max + 1)), mutable.size)
    w = imp[mutable]
    if w.sum() > 0:
        w = (1.0 - EPSILON_SHARE) * w / w.sum() + EPSILON_SHARE / mutable.size
    else:
        w = np.full(mutable.size, 1.0 / mutable.size)
    return frozenset(int(j) for j in rng.choice(mutable, size=m, replace=False, p=w / w.sum()))


def _conditions(x_star, S: frozenset, arf: ArfModel, y_des: DesiredOutcome, p: int) -> ConditionSet:
    conds = {j: FixedValue(float(x_star[j])) for j in range(p) if j not in S}
    if arf.prediction_column is not None:
        conds[arf.prediction_column] = Interval(y_des.lo, y_des.hi)
    return ConditionSet(conds)


def run_countarf(
    x_star,
    y_des: DesiredOutcome,
    predictor: Predictor,
    arf: ArfModel,
    d: Dataset,
    config: CountArfConfig | None = None,
) -> CounterfactualSet:
    config = config or CountArfConfig()
    x_star = np.asarray(x_star, dtype=float)
    d.schema.validate_instance(x_star, allow_missing=False)
    p = d.p
    if arf.p not in (p, p + 1):
        raise ValueError("the ARF model does not match the data schema")
    m_max = config.resolve_m_max(p)
    imp = ice_importances(predictor, x_star, d)
    seeds = np.random.SeedSequence([int(config.seed), 3]).spawn(config.n_iterations)

    rows, warnings, condition_log = [], [], []
    for it, ss in enumerate(seeds):
        s_seed, f_seed = ss.spawn(2)
        S = sample_change_set(imp, m_max, config.immutable, s_seed)
        cond = _conditions(x_star, S, arf, y_des, p)
        try:
            draw = forge_sample(arf, config.n_synth, cond, seed=f_seed).X[:, :p]
        except InfeasibleCondition:
            msg = f"iteration {it}: conditions infeasible for change set {sorted(S)}; skipped"
            log.info(msg)
            warnings.append(msg)
            continue
        condition_log.append({"iteration": it, "changed": sorted(S), "conditions": cond.to_dict()})
        rows.append(draw)

    if not rows:
        warnings.append("all iterations infeasible; no counterfactual generated")
        return CounterfactualSet([], 0, warnings, condition_log)
    X = np.vstack(rows)
    preds = np.asarray(predictor(X), dtype=float)
    ok = y_des.contains(preds)
    context = ObjectiveContext(x_star, predictor, y_des, d, backend=ARF, arf=arf)
    F = np.zeros((X.shape[0], 4))
    if ok.any():
        F[ok], _ = context.evaluate(X[ok])
    cands = finalize(X, F, preds, x_star, ok)
    if not cands:
        warnings.append("no valid counterfactual found")
    return CounterfactualSet(cands, X.shape[0], warnings, condition_log)
