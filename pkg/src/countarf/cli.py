"""Command-line interface.

Every command writes its primary output plus ``<output>.manifest.json``
recording the arguments, a hash of the effective configuration, the seed,
the package version, SHA-256 digests of the inputs and the wall-clock time.

Exit codes: 0 success (possibly with warnings), 2 usage or configuration
error, 3 input/output error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .arf import ArfParams, fit_arf, load_arf, save_arf
from .evalbench import svg
from .evalbench.dgp import DGP_NAMES, DgpSpec, dgp_filter_bn, dgp_sample
from .evalbench.experiment import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    load_config,
    read_rows,
    run_experiment,
    write_rows,
)
from .evalbench.metrics import eaf_median
from .forest import ForestParams, dumps, fit_forest, load_forest, save_forest
from .generator import CountArfConfig, run_countarf
from .moc import MocConfig, run_moc, run_mocarf
from .objectives import DesiredOutcome
from .tabular import DataError, Dataset, SchemaError, instance_from_strings, load_csv, load_schema, save_schema, write_csv

log = logging.getLogger("countarf")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
RESULT_COLUMNS = [
    "dgp", "method", "query", "n_cf", "n_evaluated", "hypervolume", "plausibility_median",
    "proximity_mean", "sparsity_mean", "rho_arf", "rho_knn", "status",
]
CANDIDATE_COLUMNS = ["dgp", "method", "query", "true_density", "o_prox", "o_sparse", "o_plaus", "o_plaus_arf", "o_plaus_knn"]


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


class InvariantViolation(Exception):
    pass


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out: str | Path, command: str, args: argparse.Namespace, inputs, config: dict, t0: float, **extra):
    settings = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "arguments": settings,
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest(),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": {str(p): _digest(p) for p in inputs if p},
        "wall_clock_seconds": time.perf_counter() - t0,
        **extra,
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _jobs(args) -> int:
    if getattr(args, "jobs", None):
        return max(1, int(args.jobs))
    env = os.environ.get("COUNTARF_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"COUNTARF_JOBS must be an integer, got {env!r}") from None
    return 1


def _schema(path: str):
    if not Path(path).is_file():
        raise UsageError(f"schema file not found: {path}")
    try:
        return load_schema(path)
    except (SchemaError, yaml.YAMLError, KeyError, TypeError) as e:
        raise UsageError(f"invalid schema {path}: {e}") from e


def _data(path: str, schema) -> Dataset:
    try:
        return load_csv(path, schema)
    except FileNotFoundError:
        raise IOFailure(f"data file not found: {path}") from None
    except (OSError, DataError, SchemaError) as e:
        raise IOFailure(f"cannot read {path}: {e}") from e


def _yaml_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise UsageError(f"cannot parse config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a mapping")
    return raw


def _parse_interval(text: str) -> DesiredOutcome:
    try:
        lo, hi = (float(v) for v in text.split(","))
        return DesiredOutcome(lo, hi)
    except ValueError:
        raise UsageError(f"--y-des expects 'lo,hi' with lo <= hi, got {text!r}") from None


# -- commands -------------------------------------------------------------------


def cmd_dgp_sample(args) -> int:
    t0 = time.perf_counter()
    if args.spec:
        try:
            spec = DgpSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except FileNotFoundError:
            raise IOFailure(f"spec file not found: {args.spec}") from None
    elif args.name == "bn_random" and args.filter:
        trees = 30

        def trainer(d, y):
            return fit_forest(d, y, ForestParams(num_trees=trees, task="classification"), seed=args.seed)

        spec = dgp_filter_bn(args.p, trainer, seed=args.seed, accuracy_threshold=args.accuracy_threshold)
    else:
        spec = DgpSpec(args.name, args.p, seed=args.seed)
    d = dgp_sample(spec, args.n, seed=np.random.SeedSequence([args.seed, 4]))
    write_csv(d, args.out)
    if args.schema_out:
        save_schema(d.schema, args.schema_out)
    if args.spec_out:
        Path(args.spec_out).write_text(dumps(spec.to_dict()) + "\n")
    _write_manifest(args.out, "dgp sample", args, [args.spec], spec.to_dict(), t0)
    print(f"wrote {d.n} rows of {spec.name} to {args.out}")
    return EXIT_OK


def cmd_model_fit(args) -> int:
    t0 = time.perf_counter()
    schema = _schema(args.schema)
    d = _data(args.data, schema)
    if d.target is None:
        raise UsageError(f"{args.data} has no target column {schema.target!r}")
    params = ForestParams(num_trees=args.trees, min_node_size=args.min_node_size, task=args.task)
    forest = fit_forest(d, d.target, params, seed=args.seed, n_jobs=_jobs(args))
    save_forest(forest, args.out)
    _write_manifest(args.out, "model fit", args, [args.data, args.schema], asdict(params), t0)
    print(f"wrote predictor with {forest.n_trees} trees to {args.out}")
    return EXIT_OK


def cmd_arf_fit(args) -> int:
    t0 = time.perf_counter()
    schema = _schema(args.schema)
    d = _data(args.data, schema)
    predictor = _load_model(args.model) if args.model else None
    params = ArfParams(num_trees=args.trees, min_node_size=args.min_node_size, delta=args.delta, max_rounds=args.max_rounds)
    m = fit_arf(Dataset(d.schema, d.X), params, seed=args.seed, predictor=predictor, n_jobs=_jobs(args))
    save_arf(m, args.out)
    status = "converged" if m.converged else "not converged"
    print(f"ARF {status} after {m.rounds} round(s); OOB accuracy {m.oob_accuracy:.4f}")
    _write_manifest(
        args.out, "arf fit", args, [args.data, args.schema, args.model], asdict(params), t0,
        rounds=m.rounds, oob_accuracy=m.oob_accuracy, converged=m.converged,
        warning=None if m.converged else "ARF did not converge",
    )
    return EXIT_OK


def _load_model(path: str):
    try:
        return load_forest(path)
    except FileNotFoundError:
        raise IOFailure(f"model file not found: {path}") from None
    except (OSError, ValueError, KeyError) as e:
        raise IOFailure(f"cannot read model {path}: {e}") from e


def _load_x_star(text: str, schema) -> np.ndarray:
    if Path(text).is_file():
        d = _data(text, schema)
        if d.n != 1:
            raise UsageError(f"{text} must hold exactly one row, found {d.n}")
        return d.X[0].copy()
    try:
        return instance_from_strings(text.split(","), schema)
    except DataError as e:
        raise UsageError(f"--x-star: {e}") from e


def cmd_cf_generate(args) -> int:
    t0 = time.perf_counter()
    schema = _schema(args.schema)
    config = _yaml_config(args.config)
    method = config.get("method", args.method)
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    moc_settings = {"backend": args.backend, **config.get("moc", {})}
    backend = moc_settings["backend"]
    needs_arf = method in ("arf", "mocarf") or (method == "moc" and backend == "arf")
    if needs_arf and not args.arf:
        why = f"method {method!r}" + (" with the arf plausibility backend" if method == "moc" else "")
        raise UsageError(f"--arf is required for {why}")
    d = _data(args.data, schema)
    d = Dataset(d.schema, d.X)
    predictor = _load_model(args.model)
    arf = None
    if args.arf:
        try:
            arf = load_arf(args.arf)
        except FileNotFoundError:
            raise IOFailure(f"ARF file not found: {args.arf}") from None
    x_star = _load_x_star(args.x_star, schema)
    cfg_y = config.get("y_des")
    if cfg_y is None or isinstance(cfg_y, str):
        y_des = _parse_interval(cfg_y or args.y_des)
    else:
        try:
            y_des = DesiredOutcome(*map(float, cfg_y))
        except (TypeError, ValueError):
            raise UsageError(f"config y_des must be [lo, hi], got {cfg_y!r}") from None
    seed = int(config.get("seed", args.seed))
    try:
        if method == "arf":
            ca = CountArfConfig(**{**config.get("countarf", {}), "seed": seed})
        else:
            mc = MocConfig(**{**moc_settings, "seed": seed})
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid method settings: {e}") from e
    if method == "arf":
        cs = run_countarf(x_star, y_des, predictor, arf, d, ca)
    elif method == "moc":
        cs = run_moc(x_star, y_des, predictor, d, arf, mc)
    else:
        cs = run_mocarf(x_star, y_des, predictor, d, arf, mc)

    X, F, preds = (cs.X.reshape(-1, d.p), cs.F, cs.predictions)
    if len(cs):
        if not y_des.contains(predictor(X)).all():
            raise InvariantViolation("a returned counterfactual has a prediction outside the desired outcome")
        order = np.lexsort((F[:, 3], F[:, 1]))
        X, F, preds = X[order], F[order], preds[order]
    extra = {"prediction": preds, "o_valid": F[:, 0], "o_prox": F[:, 1], "o_plaus": F[:, 2], "o_sparse": F[:, 3]}
    write_csv(Dataset(schema, X), args.out, extra)
    for w in cs.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(cs)} counterfactual(s) to {args.out}")
    effective = {"method": method, "seed": seed, "y_des": [y_des.lo, y_des.hi], **config}
    _write_manifest(
        args.out, "cf generate", args, [args.data, args.schema, args.model, args.arf, args.config], effective, t0,
        n_counterfactuals=len(cs), n_evaluated=cs.n_evaluated, warnings=cs.warnings,
    )
    return EXIT_OK


def cmd_bench_run(args) -> int:
    t0 = time.perf_counter()
    raw = _yaml_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except ConfigError as e:
        raise UsageError(str(e)) from e
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = run_experiment(cfg, n_jobs=_jobs(args))
    write_rows(res.rows(), out / "results.csv", RESULT_COLUMNS)
    write_rows(res.candidate_rows(), out / "candidates.csv", CANDIDATE_COLUMNS)
    write_rows(res.runtime_rows(), out / "runtimes.csv", ["dgp", "method", "query", "runtime"])
    ra, rk, w = res.rq2()
    summary = {
        "rho_arf_median": float(np.median(ra)) if ra else None,
        "rho_knn_median": float(np.median(rk)) if rk else None,
        "n_pairs": len(ra),
        "wilcoxon": asdict(w),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _report(out)
    failed = sum(r["status"] != "ok" for r in res.rows())
    print(f"wrote {len(res.runs)} result rows to {out / 'results.csv'} ({failed} failed)")
    _write_manifest(out / "results.csv", "bench run", args, [args.config], cfg.to_dict(), t0, failed_rows=failed)
    return EXIT_OK


def _floats(rows, key):
    return np.array([float(r[key]) for r in rows], dtype=float)


def _report(out: Path) -> list[Path]:
    rows = read_rows(out / "results.csv")
    cands = read_rows(out / "candidates.csv") if (out / "candidates.csv").exists() else []
    written = []
    dgps = sorted({r["dgp"] for r in rows})
    methods = list(dict.fromkeys(r["method"] for r in rows))
    metrics = {
        "hypervolume": "hypervolume",
        "n_cf": "number of counterfactuals",
        "plausibility_median": "plausibility",
        "proximity_mean": "proximity (1 - o_prox)",
        "sparsity_mean": "sparsity (1 - o_sparse)",
    }
    for dgp in dgps:
        sub = [r for r in rows if r["dgp"] == dgp]
        for key, label in metrics.items():
            groups = {m: _floats([r for r in sub if r["method"] == m], key) for m in methods}
            path = out / f"box_{dgp}_{key}.svg"
            path.write_text(svg.boxplot_svg(groups, f"{dgp}: {label}", label))
            written.append(path)
        surfaces = {}
        top = max((float(c["true_density"]) for c in cands if c["dgp"] == dgp), default=0.0)
        for m in methods:
            runs = []
            for q in sorted({r["query"] for r in sub}, key=int):
                cs = [c for c in cands if c["dgp"] == dgp and c["method"] == m and c["query"] == q]
                if cs and top > 0:
                    runs.append(np.array([[1 - float(c["true_density"]) / top, float(c["o_prox"])] for c in cs]))
            surfaces[m] = eaf_median(runs) if runs else np.empty((0, 2))
        path = out / f"eaf_{dgp}.svg"
        path.write_text(svg.attainment_svg(surfaces, f"{dgp}: median attainment", "1 - scaled plausibility", "o_prox"))
        written.append(path)
    return written


def cmd_bench_report(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.results_dir)
    if not (out / "results.csv").is_file():
        raise IOFailure(f"no results.csv in {out}")
    written = _report(out)
    print(f"wrote {len(written)} plot(s) to {out}")
    _write_manifest(out / "report", "bench report", args, [out / "results.csv"], {}, t0)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="countarf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="group", required=True)

    def jobs(sp):
        sp.add_argument("--jobs", type=int, default=None, help="worker cap (default: $COUNTARF_JOBS or 1)")

    dgp = sub.add_parser("dgp", help="synthetic data").add_subparsers(dest="cmd", required=True)
    s = dgp.add_parser("sample", help="sample a synthetic dataset")
    s.add_argument("--name", choices=DGP_NAMES, default="cassini")
    s.add_argument("--p", type=int, default=5, help="features of bn_random (default 5)")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spec", help="JSON spec written by --spec-out (reuses a frozen network)")
    s.add_argument("--filter", action="store_true", help="bn_random: resample until the acceptance rules hold")
    s.add_argument("--accuracy-threshold", type=float, default=0.9)
    s.add_argument("--out", required=True)
    s.add_argument("--schema-out")
    s.add_argument("--spec-out")
    s.set_defaults(func=cmd_dgp_sample)

    model = sub.add_parser("model", help="built-in forest predictor").add_subparsers(dest="cmd", required=True)
    s = model.add_parser("fit", help="fit a random-forest predictor on the schema's target")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--trees", type=int, default=50)
    s.add_argument("--min-node-size", type=int, default=5)
    s.add_argument("--task", choices=("classification", "regression"), default="classification")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    jobs(s)
    s.set_defaults(func=cmd_model_fit)

    arf = sub.add_parser("arf", help="adversarial random forests").add_subparsers(dest="cmd", required=True)
    s = arf.add_parser("fit", help="train an ARF")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--model", help="predictor whose output is added as a conditioning column")
    s.add_argument("--trees", type=int, default=20)
    s.add_argument("--min-node-size", type=int, default=5)
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--max-rounds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    jobs(s)
    s.set_defaults(func=cmd_arf_fit)

    cf = sub.add_parser("cf", help="counterfactuals").add_subparsers(dest="cmd", required=True)
    s = cf.add_parser("generate", help="generate counterfactuals for one instance")
    s.add_argument("--method", choices=METHODS, default="arf")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--arf")
    s.add_argument("--x-star", required=True, help="comma-separated values in schema order, or a 1-row CSV")
    s.add_argument("--y-des", default="0.5,1", help="desired prediction interval lo,hi (default 0.5,1)")
    s.add_argument("--backend", choices=("knn", "arf"), default="knn", help="plausibility backend of moc")
    s.add_argument("--config", help="YAML overriding flags (keys: method, seed, y_des, moc, countarf)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cf_generate)

    bench = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="cmd", required=True)
    s = bench.add_parser("run", help="run a benchmark described by a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    jobs(s)
    s.set_defaults(func=cmd_bench_run)
    s = bench.add_parser("report", help="render plots from a results directory")
    s.add_argument("--results-dir", required=True)
    s.set_defaults(func=cmd_bench_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IOFailure, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (InvariantViolation, AssertionError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
