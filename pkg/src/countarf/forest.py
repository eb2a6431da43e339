"""CART trees and random forests with leaf hyperrectangles and bootstrap bookkeeping.

Splits are exact: continuous thresholds are midpoints between consecutive
sorted unique values (``x <= t`` goes left), categorical splits are
one-vs-rest on a single level (``x == level`` goes left). Ties in split
quality go to the lowest feature index, then the lowest threshold.

Per-tree random streams are ``SeedSequence([seed, stream, tree_index])`` so a forest
is identical whatever the order or parallelism in which trees are grown.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tabular import Dataset

CLASSIFICATION = "classification"
REGRESSION = "regression"
FOREST_FORMAT = "countarf-forest"
FOREST_VERSION = 1


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 50
    min_node_size: int = 5
    mtry: int | None = None
    max_depth: int | None = None
    bootstrap: bool = True
    task: str = CLASSIFICATION

    def __post_init__(self):
        if self.num_trees < 1:
            raise ForestError("num_trees must be >= 1")
        if self.min_node_size < 1:
            raise ForestError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ForestError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ForestError("max_depth must be >= 0")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ForestError(f"unknown task {self.task!r}")

    def resolve_mtry(self, p: int) -> int:
        if self.mtry is not None:
            return min(self.mtry, p)
        if self.task == CLASSIFICATION:
            return max(1, math.ceil(math.sqrt(p)))
        return max(1, p // 3)


@dataclass
class Tree:
    """Flat node arrays; node 0 is the root and parents precede children."""

    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray  # split value, or level index for categorical splits
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    value: np.ndarray  # class-1 proportion or mean response
    n_samples: np.ndarray  # bootstrap rows routed to the node
    inbag: np.ndarray  # bootstrap multiplicity of each training row

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, X: np.ndarray, categorical: np.ndarray) -> np.ndarray:
        """Leaf node id for every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        feature, threshold = self.feature, self.threshold
        while active.size:
            nd = node[active]
            f = feature[nd]
            inner = f >= 0
            if not inner.all():
                active, nd, f = active[inner], nd[inner], f[inner]
                if not active.size:
                    break
            xv = X[active, f]
            thr = threshold[nd]
            go_left = np.where(categorical[f], xv == thr, xv <= thr)
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def apply_free(self, X: np.ndarray, categorical: np.ndarray, free: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """All (row, leaf) pairs reachable when features flagged in ``free`` take any value.

        Splits on a free feature send the row down both branches.
        """
        X = np.asarray(X, dtype=float)
        rows = np.arange(X.shape[0])
        node = np.zeros(X.shape[0], dtype=np.int64)
        done_rows, done_nodes = [], []
        while rows.size:
            f = self.feature[node]
            leaf = f < 0
            done_rows.append(rows[leaf])
            done_nodes.append(node[leaf])
            rows, node, f = rows[~leaf], node[~leaf], f[~leaf]
            both = free[f]
            xv = X[rows, f]
            thr = self.threshold[node]
            go_left = np.where(categorical[f], xv == thr, xv <= thr)
            nxt = np.where(go_left, self.left[node], self.right[node])
            rows = np.concatenate([rows, rows[both]])
            node = np.concatenate([np.where(both, self.left[node], nxt), self.right[node][both]])
        return np.concatenate(done_rows), np.concatenate(done_nodes)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "parent": self.parent.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "inbag": self.inbag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            parent=np.array(d["parent"], dtype=np.int64),
            value=np.array(d["value"], dtype=float),
            n_samples=np.array(d["n_samples"], dtype=np.int64),
            inbag=np.array(d["inbag"], dtype=np.int64),
        )


@dataclass
class LeafBounds:
    """Hyperrectangles of every node of one tree.

    ``lo``/``hi`` are the open-closed interval ``(lo, hi]`` per feature
    (infinite at the tree boundary, unused for categorical features);
    ``allowed[j]`` is an (n_nodes, n_levels_j) admissibility mask for
    categorical feature ``j``.
    """

    lo: np.ndarray
    hi: np.ndarray
    allowed: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class Forest:
    trees: list[Tree]
    params: ForestParams
    categorical: np.ndarray
    n_levels: np.ndarray
    n_train: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def p(self) -> int:
        return self.categorical.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """(n, T) matrix of leaf node ids."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_levels(X)
        return np.stack([t.apply(X, self.categorical) for t in self.trees], axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_levels(X)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.value[t.apply(X, self.categorical)]
        return out / self.n_trees

    __call__ = predict

    def _check_levels(self, X: np.ndarray) -> None:
        if X.shape[1] != self.p:
            raise ForestError(f"expected {self.p} features, got {X.shape[1]}")
        if np.isnan(X).any():
            raise ForestError("forest routing needs complete instances")
        cat = np.flatnonzero(self.categorical)
        if cat.size:
            codes = X[:, cat]
            if ((codes < 0) | (codes >= self.n_levels[cat]) | (codes != np.floor(codes))).any():
                raise ForestError("unseen categorical level")

    def leaf_bounds(self, tree_index: int) -> LeafBounds:
        return _path_bounds(self.trees[tree_index], self.categorical, self.n_levels)

    def to_dict(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "version": FOREST_VERSION,
            "params": asdict(self.params),
            "categorical": self.categorical.astype(int).tolist(),
            "n_levels": self.n_levels.tolist(),
            "n_train": self.n_train,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != FOREST_FORMAT:
            raise ForestError("not a serialized forest")
        if d.get("version") != FOREST_VERSION:
            raise ForestError(f"unsupported forest version {d.get('version')}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            params=ForestParams(**d["params"]),
            categorical=np.array(d["categorical"], dtype=bool),
            n_levels=np.array(d["n_levels"], dtype=np.int64),
            n_train=int(d["n_train"]),
        )


def dumps(obj: dict) -> str:
    """Canonical JSON used for every model file (byte-stable for equal models)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_forest(forest: Forest, path: str | Path) -> None:
    Path(path).write_text(dumps(forest.to_dict()), encoding="utf-8")


def load_forest(path: str | Path) -> Forest:
    return Forest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _path_bounds(tree: Tree, categorical: np.ndarray, n_levels: np.ndarray) -> LeafBounds:
    n, p = tree.n_nodes, categorical.shape[0]
    lo = np.full((n, p), -np.inf)
    hi = np.full((n, p), np.inf)
    allowed = {int(j): np.ones((n, int(n_levels[j])), dtype=bool) for j in np.flatnonzero(categorical)}
    for node in range(n):
        f = tree.feature[node]
        if f < 0:
            continue
        L, R, t = tree.left[node], tree.right[node], tree.threshold[node]
        for child in (L, R):
            lo[child] = lo[node]
            hi[child] = hi[node]
            for j, a in allowed.items():
                a[child] = a[node]
        if categorical[f]:
            lvl = int(t)
            keep = np.zeros(int(n_levels[f]), dtype=bool)
            keep[lvl] = True
            allowed[int(f)][L] &= keep
            allowed[int(f)][R] &= ~keep
        else:
            hi[L, f] = min(hi[L, f], t)
            lo[R, f] = max(lo[R, f], t)
    return LeafBounds(lo, hi, allowed)


def tree_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


def _best_split(Xn, yn, features, categorical, n_levels, min_leaf, task):
    """Best (score, feature, threshold) over candidate features, or None."""
    m = yn.shape[0]
    best = None
    tot1 = yn.sum()
    for f in features:
        col = Xn[:, f]
        if categorical[f]:
            K = int(n_levels[f])
            codes = col.astype(np.int64)
            cnt = np.bincount(codes, minlength=K).astype(float)
            s1 = np.bincount(codes, weights=yn, minlength=K)
            ok = (cnt >= min_leaf) & (m - cnt >= min_leaf)
            if not ok.any():
                continue
            nl, nr = cnt, m - cnt
            sl, sr = s1, tot1 - s1
            with np.errstate(divide="ignore", invalid="ignore"):
                if task == CLASSIFICATION:
                    score = (sl**2 + (nl - sl) ** 2) / nl + (sr**2 + (nr - sr) ** 2) / nr
                else:
                    score = sl**2 / nl + sr**2 / nr
            score = np.where(ok, score, -np.inf)
            k = int(np.argmax(score))
            cand = (score[k], f, float(k))
        else:
            order = np.argsort(col, kind="stable")
            vs = col[order]
            ys = yn[order]
            csum = np.cumsum(ys)[:-1]
            nl = np.arange(1, m, dtype=float)
            nr = m - nl
            ok = vs[:-1] < vs[1:]
            if min_leaf > 1:
                ok &= (nl >= min_leaf) & (nr >= min_leaf)
            if not ok.any():
                continue
            sl, sr = csum, tot1 - csum
            if task == CLASSIFICATION:
                score = (sl**2 + (nl - sl) ** 2) / nl + (sr**2 + (nr - sr) ** 2) / nr
            else:
                score = sl**2 / nl + sr**2 / nr
            score = np.where(ok, score, -np.inf)
            i = int(np.argmax(score))
            t = 0.5 * (vs[i] + vs[i + 1])
            if not t < vs[i + 1]:
                t = vs[i]
            cand = (score[i], f, float(t))
        if best is None or cand[0] > best[0]:
            best = cand
    return best


def _grow_tree(X, y, categorical, n_levels, params: ForestParams, rng: np.random.Generator, n_train: int) -> Tree:
    p = X.shape[1]
    if params.bootstrap:
        draws = rng.integers(0, n_train, size=n_train)
    else:
        draws = np.arange(n_train)
    inbag = np.bincount(draws, minlength=n_train)
    mtry = params.resolve_mtry(p)
    min_leaf = params.min_node_size
    max_depth = params.max_depth if params.max_depth is not None else np.iinfo(np.int64).max
    task = params.task
    feature, threshold, left, right, parent, value, nsamp = [], [], [], [], [], [], []

    def new_node(par, rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        parent.append(par)
        value.append(float(y[rows].mean()) if rows.size else 0.0)
        nsamp.append(rows.size)
        return len(feature) - 1

    root = new_node(-1, draws)
    stack = [(root, draws, 0)]
    while stack:
        node, rows, depth = stack.pop()
        m = rows.size
        if depth >= max_depth or m < 2 * min_leaf or m < 2:
            continue
        yn = y[rows]
        if task == CLASSIFICATION:
            s = yn.sum()
            if s == 0 or s == m:
                continue
            parent_score = (s * s + (m - s) ** 2) / m
        else:
            if np.all(yn == yn[0]):
                continue
            parent_score = yn.sum() ** 2 / m
        feats = np.sort(rng.choice(p, size=mtry, replace=False)) if mtry < p else np.arange(p)
        best = _best_split(X[rows], yn, feats, categorical, n_levels, min_leaf, task)
        if best is None or best[0] <= parent_score * (1 + 1e-12):
            continue
        _, f, t = best
        xv = X[rows, f]
        go_left = (xv == t) if categorical[f] else (xv <= t)
        lrows, rrows = rows[go_left], rows[~go_left]
        if lrows.size == 0 or rrows.size == 0:
            continue
        feature[node] = int(f)
        threshold[node] = t
        L = new_node(node, lrows)
        R = new_node(node, rrows)
        left[node], right[node] = L, R
        # right pushed first so the left subtree is expanded first
        stack.append((R, rrows, depth + 1))
        stack.append((L, lrows, depth + 1))
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        parent=np.array(parent, dtype=np.int64),
        value=np.array(value, dtype=float),
        n_samples=np.array(nsamp, dtype=np.int64),
        inbag=inbag.astype(np.int64),
    )


def fit_forest_arrays(
    X: np.ndarray,
    y: np.ndarray,
    categorical: np.ndarray,
    n_levels: np.ndarray,
    params: ForestParams = ForestParams(),
    seed: int = 0,
    n_jobs: int = 1,
    stream: int = 0,
) -> Forest:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < 1:
        raise ForestError("cannot fit a forest on an empty dataset")
    if y.shape != (n,):
        raise ForestError("labels length must equal the number of rows")
    if np.isnan(X).any():
        raise ForestError("forest fitting needs complete data")
    if params.task == CLASSIFICATION and not np.isin(y, (0.0, 1.0)).all():
        raise ForestError("classification labels must be binary 0/1")
    categorical = np.asarray(categorical, dtype=bool)
    n_levels = np.asarray(n_levels, dtype=np.int64)

    def grow(i):
        return _grow_tree(X, y, categorical, n_levels, params, tree_rng(seed, i, stream), n)

    if n_jobs == 1 or params.num_trees == 1:
        trees = [grow(i) for i in range(params.num_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            trees = list(ex.map(grow, range(params.num_trees)))
    return Forest(trees, params, categorical, n_levels, n)


def fit_forest(d: Dataset, labels, params: ForestParams = ForestParams(), seed: int = 0, n_jobs: int = 1) -> Forest:
    """Fit a random forest on ``d`` with per-row ``labels``."""
    return fit_forest_arrays(d.X, labels, d.schema.categorical_mask, d.schema.n_levels, params, seed, n_jobs)


def predict(forest: Forest, x) -> float:
    return float(forest.predict(np.asarray(x, dtype=float)[None, :])[0])


def leaves_containing(forest: Forest, x) -> list[tuple[int, int]]:
    ids = forest.apply(np.asarray(x, dtype=float)[None, :])[0]
    return [(t, int(leaf)) for t, leaf in enumerate(ids)]


def oob_votes(forest: Forest, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row out-of-bag class-1 votes and number of OOB trees.

    A tree whose leaf proportion is exactly 0.5 casts half a vote.
    """
    X = np.asarray(X, dtype=float)
    votes = np.zeros(X.shape[0])
    count = np.zeros(X.shape[0])
    for t in forest.trees:
        oob = t.inbag == 0
        if not oob.any():
            continue
        leaf = t.apply(X[oob], forest.categorical)
        v = t.value[leaf]
        votes[oob] += np.where(v > 0.5, 1.0, np.where(v < 0.5, 0.0, 0.5))
        count[oob] += 1
    return votes, count


def oob_accuracy(forest: Forest, d: Dataset | np.ndarray, labels) -> float:
    """Accuracy of majority-vote OOB predictions; vote ties earn half credit."""
    X = d.X if isinstance(d, Dataset) else np.asarray(d, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.shape[0] != forest.n_train:
        raise ForestError("OOB accuracy needs the data the forest was fit on")
    votes, count = oob_votes(forest, X)
    have = count > 0
    if not have.any():
        raise ForestError("no row has an out-of-bag tree; increase num_trees")
    frac = votes[have] / count[have]
    yy = y[have]
    credit = np.where(frac > 0.5, yy == 1, np.where(frac < 0.5, yy == 0, 0.5))
    return float(np.mean(credit))
