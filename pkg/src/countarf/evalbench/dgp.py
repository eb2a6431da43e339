"""Synthetic data-generating processes with closed-form ground-truth densities.

Three two-dimensional processes (``cassini``, ``two_sines``, ``pawelczyk``)
and random Bayesian networks (``bn_random``) with a binary root label ``y``,
continuous and binary feature nodes and a nonlinear parent aggregate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import networkx as nx
import numpy as np

from ..tabular import CATEGORICAL, CONTINUOUS, Dataset, Feature, FeatureSchema

CASSINI = "cassini"
TWO_SINES = "two_sines"
PAWELCZYK = "pawelczyk"
BN_RANDOM = "bn_random"
DGP_NAMES = (CASSINI, TWO_SINES, PAWELCZYK, BN_RANDOM)
TWO_D = (CASSINI, TWO_SINES, PAWELCZYK)

PAWELCZYK_MEANS = np.array([[-10.0, 5.0], [0.0, 5.0], [0.0, 0.0]])
BN_EDGE_PROB = 0.3
BN_CATEGORICAL_SHARE = 0.2


class DgpRejected(RuntimeError):
    """No random network met the acceptance rules within the allowed tries."""


def _norm_pdf(x, mu, sd):
    z = (np.asarray(x, dtype=float) - mu) / sd
    return np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class BnStructure:
    """A realised random network. Node 0 is the label, nodes 1..p are the features."""

    parents: list[list[int]]
    categorical: list[bool]
    weights: list[list[float]]  # aligned with parents
    beta: list[list[float]]  # (beta0, beta1, beta2) per node
    sigma: list[float]  # per node; unused for categorical nodes

    @property
    def n_nodes(self) -> int:
        return len(self.parents)

    def aggregate(self, j: int, values: np.ndarray) -> np.ndarray:
        """g(x) for node ``j`` given an (n, n_nodes) matrix of node values."""
        b0, b1, b2 = self.beta[j]
        pa = self.parents[j]
        if not pa:
            return np.full(values.shape[0], b0)
        h = np.sin(values[:, pa] @ np.asarray(self.weights[j]))
        return b0 + b1 * h + b2 * h * h

    def to_dict(self) -> dict:
        return {
            "parents": self.parents,
            "categorical": self.categorical,
            "weights": self.weights,
            "beta": self.beta,
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BnStructure":
        return cls(
            [list(map(int, p)) for p in d["parents"]],
            [bool(c) for c in d["categorical"]],
            [list(map(float, w)) for w in d["weights"]],
            [list(map(float, b)) for b in d["beta"]],
            [float(s) for s in d["sigma"]],
        )


@dataclass
class DgpSpec:
    name: str
    p: int = 2
    seed: int = 0
    bn: BnStructure | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise ValueError(f"unknown DGP {self.name!r}; valid: {', '.join(DGP_NAMES)}")
        if self.name in TWO_D:
            self.p = 2
        elif self.bn is None:
            self.bn = random_bn(self.p, self.seed)

    @property
    def schema(self) -> FeatureSchema:
        if self.name in TWO_D:
            return FeatureSchema((Feature("x1"), Feature("x2")), target="y")
        feats = []
        for j in range(1, self.bn.n_nodes):
            if self.bn.categorical[j]:
                feats.append(Feature(f"x{j}", CATEGORICAL, ("0", "1")))
            else:
                feats.append(Feature(f"x{j}", CONTINUOUS))
        return FeatureSchema(tuple(feats), target="y")

    def to_dict(self) -> dict:
        out = {"name": self.name, "p": self.p, "seed": self.seed}
        if self.bn is not None:
            out["bn"] = self.bn.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        bn = BnStructure.from_dict(d["bn"]) if d.get("bn") else None
        return cls(d["name"], int(d.get("p", 2)), int(d.get("seed", 0)), bn)


def make_dgp(name: str, p: int = 5, seed: int = 0) -> DgpSpec:
    return DgpSpec(name, p, seed)


def random_bn(p: int, seed: int = 0) -> BnStructure:
    """Random network over a binary label and ``p`` features."""
    if p < 1:
        raise ValueError("a random network needs at least one feature")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    n = p + 1
    g = nx.gnp_random_graph(n, BN_EDGE_PROB, seed=int(rng.integers(2**31)), directed=True)
    parents = [set() for _ in range(n)]
    for a, b in g.edges():
        if a < b:  # orient along the node order so the graph stays acyclic
            parents[b].add(a)
    for j in range(1, n):
        if 0 not in parents[j] and rng.random() < 0.5:
            parents[j].add(0)
    dag = nx.DiGraph([(a, b) for b in range(n) for a in parents[b]])
    dag.add_nodes_from(range(n))
    assert nx.is_directed_acyclic_graph(dag)

    n_cat = int(round(BN_CATEGORICAL_SHARE * p))
    categorical = [True] + [False] * p
    for j in rng.choice(np.arange(1, n), size=n_cat, replace=False):
        categorical[int(j)] = True

    weights, beta, sigma = [], [], []
    pa_lists = [sorted(s) for s in parents]
    for j in range(n):
        w = rng.uniform(-1, 1, len(pa_lists[j])) + 3.0 * (rng.random(len(pa_lists[j])) < 3.0 / n)
        for i, a in enumerate(pa_lists[j]):
            if a == 0 and rng.random() < 0.1:
                w[i] += rng.uniform(3, 4)
        norm = np.abs(w).sum()
        weights.append((w / norm if norm > 0 else w).tolist())
        beta.append(rng.uniform(-1, 1, 3).tolist())
        sigma.append(float(rng.normal(0.0, 2.0)))
    return BnStructure(pa_lists, categorical, weights, beta, sigma)


def _sample_bn(bn: BnStructure, n: int, rng) -> np.ndarray:
    V = np.zeros((n, bn.n_nodes))
    for j in range(bn.n_nodes):
        g = bn.aggregate(j, V)
        if bn.categorical[j]:
            V[:, j] = rng.random(n) < _sigmoid(g)
        else:
            mu = rng.normal(g, 1.0)
            V[:, j] = rng.normal(mu, abs(bn.sigma[j]))
    return V


def dgp_sample(spec: DgpSpec, n: int, seed=0) -> Dataset:
    """``n`` independent rows with their labels."""
    rng = np.random.default_rng(seed)
    if spec.name == CASSINI:
        y1 = rng.random(n) < 2.0 / 3.0
        y2 = rng.random(n) < 0.5
        x1 = rng.normal(0.0, np.where(y1, 0.5, 0.2))
        mean2 = np.where(y1, np.where(y2, -1.0, 1.0) * np.cos(x1), 0.0)
        x2 = rng.normal(mean2, 0.2)
        y = (y1 & ~y2).astype(float)  # the upper arc
        X = np.column_stack([x1, x2])
    elif spec.name == TWO_SINES:
        y = (rng.random(n) < 0.5).astype(float)
        x1 = rng.normal(y, 3.0)
        x2 = rng.normal(np.sin(x1) - 2.0 * y + 1.0, 0.3)
        X = np.column_stack([x1, x2])
    elif spec.name == PAWELCZYK:
        comp = rng.integers(0, 3, n)
        X = PAWELCZYK_MEANS[comp] + rng.normal(size=(n, 2))
        y = (X[:, 1] > 6).astype(float)
    else:
        V = _sample_bn(spec.bn, n, rng)
        X, y = V[:, 1:], V[:, 0]
    return Dataset(spec.schema, X, y)


def true_density(spec: DgpSpec, x) -> np.ndarray | float:
    """Ground-truth joint density of the features (label summed out)."""
    single = np.asarray(x).ndim == 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if spec.name == CASSINI:
        x1, x2 = X[:, 0], X[:, 1]
        f0 = _norm_pdf(x1, 0.0, 0.2) * _norm_pdf(x2, 0.0, 0.2)
        up = _norm_pdf(x2, np.cos(x1), 0.2)
        down = _norm_pdf(x2, -np.cos(x1), 0.2)
        out = f0 / 3.0 + (2.0 / 3.0) * _norm_pdf(x1, 0.0, 0.5) * 0.5 * (up + down)
    elif spec.name == TWO_SINES:
        x1, x2 = X[:, 0], X[:, 1]
        out = 0.5 * _norm_pdf(x1, 0.0, 3.0) * _norm_pdf(x2, np.sin(x1) + 1.0, 0.3)
        out = out + 0.5 * _norm_pdf(x1, 1.0, 3.0) * _norm_pdf(x2, np.sin(x1) - 1.0, 0.3)
    elif spec.name == PAWELCZYK:
        out = np.zeros(X.shape[0])
        for mu in PAWELCZYK_MEANS:
            out += _norm_pdf(X[:, 0], mu[0], 1.0) * _norm_pdf(X[:, 1], mu[1], 1.0) / 3.0
    else:
        out = _bn_density(spec.bn, X)
    return float(out[0]) if single else out


def _bn_density(bn: BnStructure, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    prior = float(_sigmoid(bn.beta[0][0]))
    out = np.zeros(n)
    for yv, py in ((1.0, prior), (0.0, 1.0 - prior)):
        V = np.column_stack([np.full(n, yv), X])
        dens = np.full(n, py)
        for j in range(1, bn.n_nodes):
            g = bn.aggregate(j, V)
            if bn.categorical[j]:
                q = _sigmoid(g)
                dens *= np.where(V[:, j] == 1, q, 1.0 - q)
            else:
                dens *= _norm_pdf(V[:, j], g, math.sqrt(1.0 + bn.sigma[j] ** 2))
        out += dens
    return out


def label_rules_ok(label_mean: float, accuracy: float, pred_mean: float, accuracy_threshold: float = 0.9) -> bool:
    """Balanced labels, an accurate predictor and balanced predictions."""
    return 0.4 < label_mean < 0.6 and accuracy > accuracy_threshold and 0.3 < pred_mean < 0.7


Trainer = Callable[[Dataset, np.ndarray], Callable[[np.ndarray], np.ndarray]]


def dgp_filter_bn(
    p: int,
    trainer: Trainer,
    seed: int = 0,
    n: int = 2000,
    accuracy_threshold: float = 0.9,
    max_tries: int = 100,
) -> DgpSpec:
    """First random network (over successive seeds) that passes ``label_rules_ok``.

    ``trainer(data, labels)`` returns a predictor giving P(y = 1). Accuracy and
    prediction balance are measured on a fresh held-out sample.
    """
    for k in range(max_tries):
        spec = DgpSpec(BN_RANDOM, p, seed=int(seed) * 1000 + k)
        train = dgp_sample(spec, n, seed=np.random.SeedSequence([spec.seed, 1]))
        label_mean = float(train.target.mean())
        if not 0.4 < label_mean < 0.6:
            continue
        test = dgp_sample(spec, n, seed=np.random.SeedSequence([spec.seed, 2]))
        f = trainer(train, train.target)
        pred = np.asarray(f(test.X)) > 0.5
        acc = float((pred == (test.target == 1)).mean())
        if label_rules_ok(label_mean, acc, float(pred.mean()), accuracy_threshold):
            return spec
    raise DgpRejected(
        f"no random network with p={p} passed the acceptance rules in {max_tries} tries; "
        "consider relaxing the accuracy threshold"
    )
