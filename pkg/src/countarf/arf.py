"""Adversarial random forests: training, density estimation and sampling.

A converged discriminator forest splits feature space into leaves inside
which features are roughly independent. Each leaf carries a univariate
distribution per feature (truncated normal for continuous, smoothed level
masses for categorical) and a mixture weight equal to the share of real
rows that land in it, divided by the number of trees.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Union

import numpy as np

from . import truncnorm
from .forest import Forest, ForestParams, dumps, fit_forest_arrays, oob_accuracy
from .tabular import CONTINUOUS, Dataset, Feature, FeatureSchema

log = logging.getLogger(__name__)

ARF_FORMAT = "countarf-arf"
ARF_VERSION = 1
PREDICTION_COLUMN = "yhat"


class InfeasibleCondition(ValueError):
    """No leaf of the forest has positive probability under the conditions."""


# -- conditions ---------------------------------------------------------------


@dataclass(frozen=True)
class FixedValue:
    value: float


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"interval lo={self.lo} > hi={self.hi}")


@dataclass(frozen=True)
class CategorySet:
    levels: frozenset

    def __post_init__(self):
        object.__setattr__(self, "levels", frozenset(int(v) for v in self.levels))
        if not self.levels:
            raise ValueError("category set must be non-empty")


Condition = Union[FixedValue, Interval, CategorySet]


@dataclass(frozen=True)
class ConditionSet:
    """At most one condition per feature index."""

    conditions: Mapping[int, Condition] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "conditions", {int(k): v for k, v in dict(self.conditions).items()})

    def __len__(self):
        return len(self.conditions)

    def items(self):
        return sorted(self.conditions.items())

    def get(self, j: int):
        return self.conditions.get(j)

    def validate(self, schema: FeatureSchema) -> None:
        for j, c in self.conditions.items():
            if not 0 <= j < schema.p:
                raise ValueError(f"condition on unknown feature index {j}")
            f = schema.features[j]
            if f.is_categorical:
                if isinstance(c, Interval):
                    raise ValueError(f"interval condition on categorical feature {f.name!r}")
                lv = [int(c.value)] if isinstance(c, FixedValue) else list(c.levels)
                if any(v < 0 or v >= f.n_levels for v in lv):
                    raise ValueError(f"condition on {f.name!r} names an unknown level")
            elif isinstance(c, CategorySet):
                raise ValueError(f"category-set condition on continuous feature {f.name!r}")

    def satisfied_by(self, x: np.ndarray) -> bool:
        for j, c in self.conditions.items():
            v = x[j]
            if isinstance(c, FixedValue) and v != c.value:
                return False
            if isinstance(c, Interval) and not c.lo <= v <= c.hi:
                return False
            if isinstance(c, CategorySet) and int(v) not in c.levels:
                return False
        return True

    def to_dict(self) -> dict:
        out = {}
        for j, c in self.items():
            if isinstance(c, FixedValue):
                out[str(j)] = {"fixed": c.value}
            elif isinstance(c, Interval):
                out[str(j)] = {"interval": [c.lo, c.hi]}
            else:
                out[str(j)] = {"levels": sorted(c.levels)}
        return out


# -- model --------------------------------------------------------------------


@dataclass(frozen=True)
class ArfParams:
    num_trees: int = 20
    min_node_size: int = 5
    mtry: int | None = None
    delta: float = 0.05
    max_rounds: int = 10
    finite_bounds: bool = False


@dataclass
class ArfModel:
    schema: FeatureSchema
    forest: Forest
    params: ArfParams
    # per-leaf arrays over all leaves of all trees, tree-major
    leaf_node: list[np.ndarray]
    coverage: np.ndarray
    mu: np.ndarray
    sd: np.ndarray
    trunc_lo: np.ndarray
    trunc_hi: np.ndarray
    cat_prob: dict[int, np.ndarray]
    bound_lo: np.ndarray
    bound_hi: np.ndarray
    prediction_column: int | None = None
    rounds: int = 0
    oob_accuracy: float = float("nan")
    accuracy_history: list[float] = field(default_factory=list)
    converged: bool = True

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum([len(a) for a in self.leaf_node])]).astype(np.int64)
        self.node_to_leaf = []
        for t, nodes in enumerate(self.leaf_node):
            m = np.full(self.forest.trees[t].n_nodes, -1, dtype=np.int64)
            m[nodes] = self.offsets[t] + np.arange(len(nodes))
            self.node_to_leaf.append(m)
        # every real row lands in exactly one leaf per tree
        total = self.coverage.sum()
        self.weight = self.coverage / total if total else np.zeros(self.coverage.shape)
        with np.errstate(invalid="ignore"):
            self.log_z = truncnorm.log_mass(self.trunc_lo, self.trunc_hi, self.mu, self.sd)

    @property
    def n_real(self) -> int:
        return int(round(self.coverage.sum() / self.forest.n_trees))

    @property
    def n_leaves(self) -> int:
        return int(self.offsets[-1])

    @property
    def p(self) -> int:
        return self.schema.p

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        """(n, T) matrix of global leaf indices."""
        nodes = self.forest.apply(X)
        return np.stack([self.node_to_leaf[t][nodes[:, t]] for t in range(self.forest.n_trees)], axis=1)

    def _log_factor(self, j: int, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.schema.features[j].is_categorical:
            with np.errstate(divide="ignore"):
                return np.log(self.cat_prob[j][g, x.astype(np.int64)])
        return truncnorm.log_pdf(
            x, self.mu[g, j], self.sd[g, j], self.trunc_lo[g, j], self.trunc_hi[g, j], self.log_z[g, j]
        )

    def to_dict(self) -> dict:
        return {
            "format": ARF_FORMAT,
            "version": ARF_VERSION,
            "schema": self.schema.to_dict(),
            "params": asdict(self.params),
            "forest": self.forest.to_dict(),
            "leaf_node": [a.tolist() for a in self.leaf_node],
            "coverage": self.coverage.tolist(),
            "mu": self.mu.tolist(),
            "sd": self.sd.tolist(),
            "trunc_lo": self.trunc_lo.tolist(),
            "trunc_hi": self.trunc_hi.tolist(),
            "cat_prob": {str(j): v.tolist() for j, v in sorted(self.cat_prob.items())},
            "prediction_column": self.prediction_column,
            "rounds": self.rounds,
            "oob_accuracy": self.oob_accuracy,
            "accuracy_history": list(self.accuracy_history),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArfModel":
        if d.get("format") != ARF_FORMAT:
            raise ValueError("not a serialized ARF model")
        if d.get("version") != ARF_VERSION:
            raise ValueError(f"unsupported ARF model version {d.get('version')}")
        forest = Forest.from_dict(d["forest"])
        leaf_node = [np.array(a, dtype=np.int64) for a in d["leaf_node"]]
        blo, bhi = _stack_bounds(forest, leaf_node)
        return cls(
            schema=FeatureSchema.from_dict(d["schema"]),
            forest=forest,
            params=ArfParams(**d["params"]),
            leaf_node=leaf_node,
            coverage=np.array(d["coverage"], dtype=np.int64),
            mu=np.array(d["mu"], dtype=float),
            sd=np.array(d["sd"], dtype=float),
            trunc_lo=np.array(d["trunc_lo"], dtype=float),
            trunc_hi=np.array(d["trunc_hi"], dtype=float),
            cat_prob={int(j): np.array(v, dtype=float) for j, v in d["cat_prob"].items()},
            bound_lo=blo,
            bound_hi=bhi,
            prediction_column=d["prediction_column"],
            rounds=d["rounds"],
            oob_accuracy=d["oob_accuracy"],
            accuracy_history=list(d["accuracy_history"]),
            converged=d["converged"],
        )


def save_arf(model: ArfModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model.to_dict()), encoding="utf-8")


def load_arf(path: str | Path) -> ArfModel:
    return ArfModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _stack_bounds(forest: Forest, leaf_node: list[np.ndarray]):
    lo, hi = [], []
    for t, nodes in enumerate(leaf_node):
        b = forest.leaf_bounds(t)
        lo.append(b.lo[nodes])
        hi.append(b.hi[nodes])
    return np.concatenate(lo), np.concatenate(hi)


# -- training -----------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def naive_synth(d: Dataset, n: int, seed=0) -> Dataset:
    """Draw every column independently (with replacement) from its observed values."""
    rng = _rng(seed)
    if d.n == 0:
        raise ValueError("naive_synth needs a non-empty dataset")
    X = np.empty((n, d.p))
    for j in range(d.p):
        X[:, j] = d.X[rng.integers(0, d.n, size=n), j]
    return Dataset(d.schema, X)


def _leaf_synth(forest: Forest, real: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Synthetic rows from the leaves of ``forest``.

    Each row picks a tree and a real row, then draws every feature from a
    (separately chosen) real row sharing that row's leaf.
    """
    nodes = forest.apply(real)
    T = forest.n_trees
    which_tree = rng.integers(0, T, size=n)
    which_row = rng.integers(0, real.shape[0], size=n)
    u = rng.random((n, real.shape[1]))
    out = np.empty((n, real.shape[1]))
    for t in range(T):
        sel = np.flatnonzero(which_tree == t)
        if not sel.size:
            continue
        leaf_of_row = nodes[:, t]
        order = np.argsort(leaf_of_row, kind="stable")
        counts = np.bincount(leaf_of_row, minlength=forest.trees[t].n_nodes)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        leaf = leaf_of_row[which_row[sel]]
        pick = starts[leaf][:, None] + np.floor(u[sel] * counts[leaf][:, None]).astype(np.int64)
        donors = order[pick]
        out[sel] = real[donors, np.arange(real.shape[1])[None, :]]
    return out


def _fit_leaves(
    forest: Forest,
    schema: FeatureSchema,
    real: np.ndarray,
    params: ArfParams,
):
    """Leaf distributions and coverage from real data routed through ``forest``."""
    n, p = real.shape
    cat = schema.categorical_mask
    cont = np.flatnonzero(~cat)
    center = real[:, cont].mean(axis=0) if n else np.zeros(cont.size)
    global_sd = real[:, cont].std(axis=0) if n else np.zeros(cont.size)
    floor = np.maximum(1e-6, 0.01 * global_sd)
    data_lo = real.min(axis=0)
    data_hi = real.max(axis=0)
    nodes = forest.apply(real)
    leaf_node, coverage, mus, sds, tlos, this, blos, bhis = [], [], [], [], [], [], [], []
    cat_prob = {int(j): [] for j in np.flatnonzero(cat)}
    shifted = real[:, cont] - center
    for t, tree in enumerate(forest.trees):
        nn = tree.n_nodes
        node_of = nodes[:, t]
        cnt = np.bincount(node_of, minlength=nn).astype(float)
        s1 = np.stack([np.bincount(node_of, weights=shifted[:, k], minlength=nn) for k in range(cont.size)], axis=1) if cont.size else np.zeros((nn, 0))
        s2 = np.stack([np.bincount(node_of, weights=shifted[:, k] ** 2, minlength=nn) for k in range(cont.size)], axis=1) if cont.size else np.zeros((nn, 0))
        cc = {j: np.stack([np.bincount(node_of[real[:, j] == k], minlength=nn) for k in range(schema.features[j].n_levels)], axis=1).astype(float) for j in cat_prob}
        # subtree totals: children always follow parents in node order
        acc_cnt, acc1, acc2 = cnt.copy(), s1.copy(), s2.copy()
        acc_cc = {j: v.copy() for j, v in cc.items()}
        for node in range(nn - 1, 0, -1):
            par = tree.parent[node]
            acc_cnt[par] += acc_cnt[node]
            acc1[par] += acc1[node]
            acc2[par] += acc2[node]
            for j in acc_cc:
                acc_cc[j][par] += acc_cc[j][node]
        leaves = tree.leaf_ids
        src = leaves.copy()
        for i, node in enumerate(leaves):
            while acc_cnt[src[i]] < 2 and tree.parent[src[i]] >= 0:
                src[i] = tree.parent[src[i]]
        bounds = forest.leaf_bounds(t)
        m = np.maximum(acc_cnt[src], 1.0)
        mean = acc1[src] / m[:, None]
        var = np.maximum(acc2[src] / m[:, None] - mean**2, 0.0)
        mu = np.full((leaves.size, p), np.nan)
        sd = np.full((leaves.size, p), np.nan)
        mu[:, cont] = mean + center
        sd[:, cont] = np.maximum(np.sqrt(var), floor)
        lo = bounds.lo[leaves].copy()
        hi = bounds.hi[leaves].copy()
        tlo, thi = lo.copy(), hi.copy()
        if params.finite_bounds:
            tlo = np.maximum(tlo, data_lo)
            thi = np.minimum(thi, data_hi)
        tlo[:, cat] = np.nan
        thi[:, cat] = np.nan
        for j in cat_prob:
            allowed = bounds.allowed[j][leaves]
            inherit = cnt[leaves] < 2
            counts = np.where(inherit[:, None], acc_cc[j][src], cc[j][leaves]) * allowed
            k_adm = allowed.sum(axis=1, keepdims=True)
            prob = (counts + allowed / k_adm) / (counts.sum(axis=1, keepdims=True) + 1.0)
            cat_prob[j].append(prob)
        leaf_node.append(leaves)
        coverage.append(cnt[leaves].astype(np.int64))
        mus.append(mu)
        sds.append(sd)
        tlos.append(tlo)
        this.append(thi)
        blos.append(lo)
        bhis.append(hi)
    return dict(
        leaf_node=leaf_node,
        coverage=np.concatenate(coverage),
        mu=np.concatenate(mus),
        sd=np.concatenate(sds),
        trunc_lo=np.concatenate(tlos),
        trunc_hi=np.concatenate(this),
        cat_prob={j: np.concatenate(v) for j, v in cat_prob.items()},
        bound_lo=np.concatenate(blos),
        bound_hi=np.concatenate(bhis),
    )


def with_predictions(d: Dataset, predictor: Callable[[np.ndarray], np.ndarray]) -> Dataset:
    """Append the prediction column ``yhat = predictor(x)`` as a continuous feature."""
    yhat = np.asarray(predictor(d.X), dtype=float)
    name = PREDICTION_COLUMN
    while name in d.schema.names:
        name = "_" + name
    schema = d.schema.with_feature(Feature(name, CONTINUOUS))
    return Dataset(schema, np.column_stack([d.X, yhat]), d.target)


def fit_arf(
    d: Dataset,
    params: ArfParams = ArfParams(),
    seed: int = 0,
    predictor: Callable[[np.ndarray], np.ndarray] | None = None,
    n_jobs: int = 1,
) -> ArfModel:
    """Train an adversarial random forest on ``d``.

    With ``predictor`` given, its predictions are appended as an extra
    continuous feature (needed for conditioning on the desired outcome).
    """
    if d.n < 1:
        raise ValueError("fit_arf needs at least one row")
    if np.isnan(d.X).any():
        raise ValueError("fit_arf needs complete data")
    pred_col = None
    if predictor is not None:
        d = with_predictions(d, predictor)
        pred_col = d.p - 1
    schema = d.schema
    real = d.X
    n = d.n
    fparams = ForestParams(
        num_trees=params.num_trees,
        min_node_size=params.min_node_size,
        mtry=params.mtry,
    )
    cat = schema.categorical_mask
    levels = schema.n_levels
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    synth = naive_synth(d, n, np.random.default_rng(np.random.SeedSequence([seed, 1, 0]))).X
    history = []
    converged = False
    rnd = 0
    while True:
        X = np.vstack([real, synth])
        forest = fit_forest_arrays(X, labels, cat, levels, fparams, seed=seed, n_jobs=n_jobs, stream=100 + rnd)
        acc = oob_accuracy(forest, X, labels)
        history.append(acc)
        log.debug("ARF round %d: OOB accuracy %.4f", rnd, acc)
        if acc <= 0.5 + params.delta:
            converged = True
            break
        if rnd >= params.max_rounds:
            break
        rnd += 1
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, rnd]))
        synth = _leaf_synth(forest, real, n, rng)
    if not converged:
        log.warning("ARF did not converge after %d rounds (OOB accuracy %.3f)", rnd, acc)
    # leaves are fitted on real rows only
    leaves = _fit_leaves(forest, schema, real, params)
    return ArfModel(
        schema=schema,
        forest=forest,
        params=params,
        prediction_column=pred_col,
        rounds=rnd,
        oob_accuracy=acc,
        accuracy_history=history,
        converged=converged,
        **leaves,
    )


# -- density and sampling -------------------------------------------------------


def _as_matrix(m: ArfModel, x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != m.p:
        raise ValueError(f"expected {m.p} columns, got {X.shape[1]}")
    return X


def forde_density(m: ArfModel, x, marginalize=()) -> np.ndarray | float:
    """Mixture-of-leaves density at ``x`` (one instance or an (n, p) matrix).

    Features in ``marginalize`` are integrated out: their factor is dropped
    and every leaf whose box contains ``x`` in the remaining features
    contributes, whatever the value of the marginalized columns (their
    entries in ``x`` are ignored).
    """
    single = np.asarray(x).ndim == 1
    X = _as_matrix(m, x)
    skip = sorted(set(int(j) for j in marginalize))
    if skip:
        X = X.copy()
        X[:, skip] = 0.0
    with np.errstate(divide="ignore"):
        logw = np.log(m.weight)
    total = np.zeros(X.shape[0])
    if skip:
        free = np.zeros(m.p, dtype=bool)
        free[skip] = True
        m.forest._check_levels(X)
        for t, tree in enumerate(m.forest.trees):
            rows, nodes = tree.apply_free(X, m.forest.categorical, free)
            gl = m.node_to_leaf[t][nodes]
            lf = logw[gl]
            for j in range(m.p):
                if not free[j]:
                    lf = lf + m._log_factor(j, X[rows, j], gl)
            total += np.bincount(rows, weights=np.exp(lf), minlength=X.shape[0])
        return float(total[0]) if single else total
    g = m.leaf_index(X)
    for t in range(g.shape[1]):
        gl = g[:, t]
        lf = logw[gl].copy()
        for j in range(m.p):
            lf += m._log_factor(j, X[:, j], gl)
        total += np.exp(lf)
    return float(total[0]) if single else total


def _log_condition_mass(m: ArfModel, j: int, c: Condition) -> np.ndarray:
    """Per-leaf log probability of condition ``c`` on feature ``j``."""
    with np.errstate(divide="ignore"):
        if m.schema.features[j].is_categorical:
            prob = m.cat_prob[j]
            if isinstance(c, FixedValue):
                return np.log(prob[:, int(c.value)])
            return np.log(prob[:, sorted(c.levels)].sum(axis=1))
        lo, hi = m.trunc_lo[:, j], m.trunc_hi[:, j]
        point = hi <= lo
        if isinstance(c, FixedValue):
            v = c.value
            inside = np.where(point, v == lo, (v > lo) & (v <= hi))
            return np.where(inside, 0.0, -np.inf)
        a = np.maximum(lo, c.lo)
        b = np.minimum(hi, c.hi)
        mass = truncnorm.log_mass(a, b, m.mu[:, j], m.sd[:, j]) - m.log_z[:, j]
        mass = np.minimum(mass, 0.0)
        return np.where(point, np.where((lo >= c.lo) & (lo <= c.hi), 0.0, -np.inf), mass)


def update_weights(m: ArfModel, c: ConditionSet) -> np.ndarray:
    """Mixture weights reweighted by each leaf's probability of the conditions."""
    c.validate(m.schema)
    if not len(c):
        return m.weight.copy()
    with np.errstate(divide="ignore"):
        logw = np.log(m.weight)
    for j, cond in c.items():
        logw = logw + _log_condition_mass(m, j, cond)
    top = logw.max()
    if not np.isfinite(top):
        raise InfeasibleCondition("no leaf has positive mass under the conditions")
    w = np.exp(logw - top)
    return w / w.sum()


def forge_sample(m: ArfModel, n: int, c: ConditionSet | None = None, seed=0) -> Dataset:
    """Draw ``n`` rows: a leaf by (conditional) weight, then each feature from the leaf."""
    c = c or ConditionSet()
    rng = _rng(seed)
    w = update_weights(m, c)
    out = np.empty((n, m.p))
    if n == 0:
        return Dataset(m.schema, out)
    leaves = rng.choice(m.n_leaves, size=n, p=w)
    for j, feat in enumerate(m.schema.features):
        cond = c.get(j)
        if isinstance(cond, FixedValue):
            out[:, j] = cond.value
        elif feat.is_categorical:
            prob = m.cat_prob[j][leaves]
            if isinstance(cond, CategorySet):
                keep = np.zeros(feat.n_levels, dtype=bool)
                keep[sorted(cond.levels)] = True
                prob = prob * keep
            cum = np.cumsum(prob, axis=1)
            u = rng.random(n) * cum[:, -1]
            out[:, j] = np.minimum((cum <= u[:, None]).sum(axis=1), feat.n_levels - 1)
        else:
            lo = m.trunc_lo[leaves, j]
            hi = m.trunc_hi[leaves, j]
            if isinstance(cond, Interval):
                lo = np.maximum(lo, cond.lo)
                hi = np.minimum(hi, cond.hi)
            out[:, j] = truncnorm.sample(rng, m.mu[leaves, j], m.sd[leaves, j], lo, hi)
            if isinstance(cond, Interval):
                out[:, j] = np.clip(out[:, j], cond.lo, cond.hi)
    return Dataset(m.schema, out)


def conditional_density(m: ArfModel, x, c: ConditionSet) -> float:
    """Density of ``x`` given ``c``: reweighted mixture with renormalised factors."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.p,):
        raise ValueError(f"expected an instance of length {m.p}")
    if not c.satisfied_by(x):
        raise ValueError("instance violates the conditions")
    w = update_weights(m, c)
    g = m.leaf_index(x[None, :])[0]
    total = 0.0
    for gl in g:
        if w[gl] <= 0:
            continue
        lf = math.log(w[gl])
        for j in range(m.p):
            cond = c.get(j)
            if isinstance(cond, FixedValue):
                continue
            lf += float(m._log_factor(j, x[j : j + 1], np.array([gl]))[0])
            if cond is not None:
                lf -= float(_log_condition_mass(m, j, cond)[gl])
        total += math.exp(lf)
    return total
