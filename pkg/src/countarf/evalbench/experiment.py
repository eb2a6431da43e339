"""Benchmark runner: fit a predictor and an ARF per process, explain sampled queries, score the outputs."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..arf import ArfModel, ArfParams, fit_arf
from ..forest import Forest, ForestParams, fit_forest
from ..generator import CountArfConfig, run_countarf
from ..moc import MocConfig, run_moc, run_mocarf
from ..objectives import ARF, KNN, DesiredOutcome, ObjectiveContext
from ..tabular import Dataset
from .dgp import BN_RANDOM, DGP_NAMES, DgpSpec, dgp_filter_bn, dgp_sample, true_density
from .metrics import UndefinedCorrelation, WilcoxonResult, hypervolume, spearman_rho, wilcoxon_signed_rank

log = logging.getLogger(__name__)

METHODS = ("arf", "moc", "mocarf")
MIN_RHO_POINTS = 3
MAX_QUERY_DRAWS = 100


class ConfigError(ValueError):
    """The experiment configuration is malformed."""


@dataclass
class DgpConfig:
    name: str
    p: int = 2

    @property
    def label(self) -> str:
        return f"bn_{self.p}" if self.name == BN_RANDOM else self.name


@dataclass
class ExperimentConfig:
    dgps: list[DgpConfig]
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    n_train: int = 2000
    n_data: int = 2000
    n_queries: int = 5
    seed: int = 0
    y_des: tuple[float, float] = (0.5, 1.0)
    predictor_trees: int = 50
    accuracy_threshold: float = 0.9
    arf: dict = field(default_factory=dict)
    moc: dict = field(default_factory=dict)
    countarf: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; valid methods: {', '.join(METHODS)}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for g in self.dgps:
            if g.name not in DGP_NAMES:
                raise ConfigError(f"unknown DGP {g.name!r}; valid: {', '.join(DGP_NAMES)}")
        if not self.dgps:
            raise ConfigError("at least one DGP is required")
        if self.n_queries < 1 or self.n_train < 10 or self.n_data < 10:
            raise ConfigError("n_queries >= 1 and n_train, n_data >= 10 are required")
        self.y_des = tuple(float(v) for v in self.y_des)
        if len(self.y_des) != 2 or self.y_des[0] > self.y_des[1]:
            raise ConfigError("y_des must be [lo, hi] with lo <= hi")
        try:
            ArfParams(**self.arf)
            MocConfig(**self.moc)
            CountArfConfig(**self.countarf)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid method settings: {e}") from e

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a mapping")
        d = dict(d)
        dgps = []
        for g in d.pop("dgps", []) or []:
            dgps.append(DgpConfig(g) if isinstance(g, str) else DgpConfig(g["name"], int(g.get("p", 2))))
        try:
            return cls(dgps=dgps, **d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        out = asdict(self)
        out["y_des"] = list(self.y_des)
        return out


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return ExperimentConfig.from_dict(raw)


def _int_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


@dataclass
class ProcessSetup:
    """Everything fitted once per data-generating process."""

    label: str
    spec: DgpSpec
    predictor: Forest
    data: Dataset
    arf: ArfModel
    queries: np.ndarray


def _trainer(seed: int, trees: int):
    def train(d: Dataset, y: np.ndarray) -> Forest:
        return fit_forest(d, y, ForestParams(num_trees=trees, task="classification"), seed=seed)

    return train


def setup_process(cfg: ExperimentConfig, index: int) -> ProcessSetup:
    g = cfg.dgps[index]
    base = (cfg.seed, 10, index)
    trainer = _trainer(_int_seed(*base, 1), cfg.predictor_trees)
    if g.name == BN_RANDOM:
        spec = dgp_filter_bn(g.p, trainer, seed=_int_seed(*base, 0) % 10_000, accuracy_threshold=cfg.accuracy_threshold)
    else:
        spec = DgpSpec(g.name, g.p, seed=cfg.seed)
    train = dgp_sample(spec, cfg.n_train, seed=_int_seed(*base, 2))
    predictor = trainer(train, train.target)
    data = dgp_sample(spec, cfg.n_data, seed=_int_seed(*base, 3))
    arf = fit_arf(data, ArfParams(**cfg.arf), seed=_int_seed(*base, 4), predictor=predictor)
    y_des = DesiredOutcome(*cfg.y_des)
    queries = []
    for k in range(MAX_QUERY_DRAWS):
        batch = dgp_sample(spec, 10 * cfg.n_queries, seed=_int_seed(*base, 5, k)).X
        keep = ~y_des.contains(predictor(batch))
        queries.extend(batch[keep])
        if len(queries) >= cfg.n_queries:
            break
    if len(queries) < cfg.n_queries:
        raise RuntimeError(f"{g.name}: too few query points with prediction outside the desired outcome")
    return ProcessSetup(g.label, spec, predictor, data, arf, np.array(queries[: cfg.n_queries]))


def run_method(method: str, x_star, setup: ProcessSetup, cfg: ExperimentConfig, seed: int):
    y_des = DesiredOutcome(*cfg.y_des)
    if method == "arf":
        return run_countarf(x_star, y_des, setup.predictor, setup.arf, setup.data, CountArfConfig(**{**cfg.countarf, "seed": seed}))
    moc_cfg = MocConfig(**{**cfg.moc, "seed": seed})
    if method == "moc":
        return run_moc(x_star, y_des, setup.predictor, setup.data, None, moc_cfg)
    return run_mocarf(x_star, y_des, setup.predictor, setup.data, setup.arf, moc_cfg)


@dataclass
class MethodRun:
    dgp: str
    method: str
    query: int
    X: np.ndarray  # returned counterfactuals
    objectives: np.ndarray  # (n, 4) with the method's own plausibility
    true_density: np.ndarray
    plaus_arf: np.ndarray
    plaus_knn: np.ndarray
    runtime: float
    n_evaluated: int
    status: str = "ok"
    hypervolume: float = 0.0
    condition_log: list = field(default_factory=list)  # FORGE conditions, when the method used any


def _job(args):
    method, q, setup, cfg, seed = args
    p = setup.data.p
    t0 = time.perf_counter()
    try:
        cs = run_method(method, setup.queries[q], setup, cfg, seed)
        status = "ok"
    except Exception as e:  # recorded per row, not fatal
        log.warning("%s on query %d failed: %s", method, q, e)
        cs, status = None, f"error: {type(e).__name__}: {e}"
    runtime = time.perf_counter() - t0
    if cs is None or len(cs) == 0:
        empty = np.zeros(0)
        return MethodRun(
            setup.label, method, q, np.empty((0, p)), np.empty((0, 4)), empty, empty, empty, runtime,
            0 if cs is None else cs.n_evaluated, status,
        )
    X = cs.X
    ctx = ObjectiveContext(setup.queries[q], setup.predictor, DesiredOutcome(*cfg.y_des), setup.data, arf=setup.arf)
    return MethodRun(
        setup.label, method, q, X, cs.F,
        np.asarray(true_density(setup.spec, X)),
        ctx.plausibility(X, backend=ARF),
        ctx.plausibility(X, backend=KNN),
        runtime, cs.n_evaluated, status, condition_log=list(cs.condition_log),
    )


def _rho(a, b) -> float:
    if a.size < MIN_RHO_POINTS:
        return math.nan
    try:
        return spearman_rho(a, b)
    except UndefinedCorrelation:
        return math.nan


@dataclass
class ExperimentResult:
    runs: list[MethodRun]
    config: ExperimentConfig
    setups: list[ProcessSetup] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for r in self.runs:
            n = r.X.shape[0]
            out.append({
                "dgp": r.dgp,
                "method": r.method,
                "query": r.query,
                "n_cf": n,
                "n_evaluated": r.n_evaluated,
                "hypervolume": r.hypervolume,
                "plausibility_median": float(np.median(r.true_density)) if n else math.nan,
                "proximity_mean": float(1.0 - r.objectives[:, 1].mean()) if n else math.nan,
                "sparsity_mean": float(1.0 - r.objectives[:, 3].mean()) if n else math.nan,
                "rho_arf": self.rho(r, ARF),
                "rho_knn": self.rho(r, KNN),
                "status": r.status,
            })
        return out

    @staticmethod
    def rho(r: MethodRun, backend: str) -> float:
        other = r.plaus_arf if backend == ARF else r.plaus_knn
        return _rho(r.true_density, -other)

    def rq2(self) -> tuple[list[float], list[float], WilcoxonResult]:
        """Per-run correlations of both plausibility measures and the paired signed-rank test."""
        ra, rk = [], []
        for r in self.runs:
            a, k = self.rho(r, ARF), self.rho(r, KNN)
            if not (math.isnan(a) or math.isnan(k)):
                ra.append(a)
                rk.append(k)
        return ra, rk, wilcoxon_signed_rank(np.array(ra) - np.array(rk))

    def candidate_rows(self) -> list[dict]:
        out = []
        for r in self.runs:
            for i in range(r.X.shape[0]):
                out.append({
                    "dgp": r.dgp, "method": r.method, "query": r.query,
                    "true_density": float(r.true_density[i]),
                    "o_prox": float(r.objectives[i, 1]),
                    "o_sparse": float(r.objectives[i, 3]),
                    "o_plaus": float(r.objectives[i, 2]),
                    "o_plaus_arf": float(r.plaus_arf[i]),
                    "o_plaus_knn": float(r.plaus_knn[i]),
                })
        return out

    def runtime_rows(self) -> list[dict]:
        return [{"dgp": r.dgp, "method": r.method, "query": r.query, "runtime": r.runtime} for r in self.runs]


def _assign_hypervolumes(runs: list[MethodRun]) -> None:
    by_dgp: dict[str, list[MethodRun]] = {}
    for r in runs:
        by_dgp.setdefault(r.dgp, []).append(r)
    for group in by_dgp.values():
        dens = [r.true_density for r in group if r.true_density.size]
        top = max((float(d.max()) for d in dens), default=0.0)
        for r in group:
            if not r.X.shape[0] or top <= 0:
                r.hypervolume = 0.0
                continue
            pts = np.column_stack([1.0 - r.true_density / top, r.objectives[:, 1], r.objectives[:, 3]])
            r.hypervolume = hypervolume(np.clip(pts, 0.0, 1.0), np.ones(3))


def run_experiment(cfg: ExperimentConfig, n_jobs: int = 1) -> ExperimentResult:
    runs: list[MethodRun] = []
    setups: list[ProcessSetup] = []
    for i in range(len(cfg.dgps)):
        setup = setup_process(cfg, i)
        setups.append(setup)
        jobs = [
            (m, q, setup, cfg, _int_seed(cfg.seed, 20, i, q, METHODS.index(m)))
            for q in range(cfg.n_queries)
            for m in cfg.methods
        ]
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as ex:
                runs.extend(ex.map(_job, jobs))
        else:
            runs.extend(map(_job, jobs))
    _assign_hypervolumes(runs)
    runs.sort(key=lambda r: ([g.label for g in cfg.dgps].index(r.dgp), r.query, cfg.methods.index(r.method)))
    return ExperimentResult(runs, cfg, setups)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: list[dict], path: str | Path, header: list[str] | None = None) -> None:
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def read_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
