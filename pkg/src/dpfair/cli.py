"""Command-line driver.

Exit codes: 0 success, 1 failed suite or pipeline stage, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as dataio
from .accountant import ACCOUNTANTS, PrivacyBudget, accountant_table
from .dpsgd import DpSgdConfig, TrainingError, train_dpsgd
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    StageError,
    emit_table,
    prepare,
    repetition_seeds,
    run_experiment,
)
from .fairpost import FairClassifier, RandomnessPolicy, private_fair_classifier, sp_gap
from .model import LogisticModel, schema_hash
from .verify import SUITES, TrialConfig, run_verify

logger = logging.getLogger("dpfair")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _rows_to_text(rows: list[dict], fmt: str) -> str:
    cols = list(rows[0])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    cells = [cols] + [[f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells) + "\n"


# -- shared dataset plumbing ----------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default="adult", help="shipped dataset name (adult, credit_card)")
    p.add_argument("--data", help=f"CSV path; default ${dataio.DATA_DIR_ENV}/<dataset>.csv")
    p.add_argument("--schema", help="schema name or JSON path; default: the dataset name")
    p.add_argument("--split", nargs=3, type=float, default=(0.5, 0.25, 0.25), metavar=("TRAIN", "POST", "TEST"))


def _data_config(args) -> ExperimentConfig:
    return ExperimentConfig(dataset=args.dataset, data_path=args.data, schema=args.schema,
                            split=tuple(args.split), master_seed=args.seed)


def _load_splits(args):
    cfg = _data_config(args)
    try:
        schema = cfg.resolve_schema()
    except (FileNotFoundError, KeyError) as exc:
        raise UsageError(f"unknown schema: {exc}") from None
    raw = dataio.load_csv(cfg.resolve_path(), schema)
    seeds = repetition_seeds(args.seed, 0)
    return raw, prepare(raw, schema, cfg.split, seeds["split"]), seeds


# -- subcommands ----------------------------------------------------------------------


def cmd_ingest(args) -> int:
    raw, parts, _ = _load_splits(args)
    report = dataio.ingestion_report(raw)
    report["d"] = parts.train.d
    report["splits"] = {k: {"n": len(p), "n0": p.n0, "n1": p.n1}
                        for k, p in (("train", parts.train), ("post", parts.post), ("test", parts.test))}
    report["standardization"] = parts.spec.to_dict()
    _write_json(report, args.out)
    return EXIT_OK


def _dpsgd_config(args, seed: int) -> DpSgdConfig:
    cfg = _read_json(args.config) if args.config else {}
    overrides = {"noise_multiplier": args.sigma, "clip_norm": args.clip, "learning_rate": args.lr,
                 "epochs": args.epochs, "batch_size": args.batch_size}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg["seed"] = seed
    if "noise_multiplier" not in cfg:
        raise UsageError("a noise multiplier is required (--sigma or config)")
    try:
        return DpSgdConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad DP-SGD config: {exc}") from None


def cmd_train(args) -> int:
    _, parts, seeds = _load_splits(args)
    cfg = _dpsgd_config(args, seeds[f"train{args.group}"])
    Dg = dataio.partition_by_group(parts.train)[args.group]
    report = train_dpsgd(Dg, cfg, args.delta, tuple(args.accountant), record_loss=args.record_loss)
    out = report.to_dict()
    out["model"]["schema_hash"] = schema_hash(parts.train.frame.columns)
    out["group"] = args.group
    _write_json(out, args.out)
    return EXIT_OK


def _load_model(path) -> tuple[LogisticModel, dict]:
    """Accepts a train report or a bare model JSON."""
    obj = _read_json(path)
    try:
        return LogisticModel.from_dict(obj.get("model", obj)), obj
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not a model ({exc})") from None


def cmd_postprocess(args) -> int:
    _, parts, seeds = _load_splits(args)
    expected = schema_hash(parts.post.frame.columns)
    models, budgets = [], []
    for path in (args.model0, args.model1):
        m, obj = _load_model(path)
        if m.schema_hash and m.schema_hash != expected:
            raise UsageError(f"{path}: model was trained on a different feature layout")
        if m.d != parts.post.d:
            raise UsageError(f"{path}: model has d={m.d}, data has d={parts.post.d}")
        models.append(m)
        if "epsilons" in obj:
            if args.accountant not in obj["epsilons"]:
                raise UsageError(f"{path}: no {args.accountant} epsilon recorded")
            budgets.append(PrivacyBudget(obj["epsilons"][args.accountant], obj["delta"]))
    P0, P1 = dataio.partition_by_group(parts.post)
    rng = np.random.Generator(np.random.PCG64(seeds["privatize"]))
    policy = RandomnessPolicy(args.randomness, seeds["predict"], salt=str(seeds["predict"]))
    fc, priv, est = private_fair_classifier(models[0], models[1], P0, P1, args.eps2, args.eps3, rng,
                                            budgets if len(budgets) == 2 else (), policy)
    out = fc.to_dict()
    out["laplace_draws"] = list(priv.laplace_draws)
    out["composed_budget"] = fc.budget.to_dict() if fc.budget else None
    _write_json(out, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _, parts, seeds = _load_splits(args)
    obj = _read_json(args.fair)
    try:
        fc = FairClassifier.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.fair}: not a fair classifier ({exc})") from None
    test = parts.test
    rng = np.random.Generator(np.random.PCG64(seeds["predict"]))
    yhat = fc.predict(test.X, test.a, rng)
    base = fc.base_predict(test.X, test.a)
    _write_json({
        "n": len(test), "n0": test.n0, "n1": test.n1,
        "accuracy": float(np.mean(yhat == test.y)),
        "sp_gap": sp_gap(yhat, test.a),
        "base_accuracy": float(np.mean(base == test.y)),
        "base_sp_gap": sp_gap(base, test.a),
        "seed": args.seed,
    }, args.out)
    return EXIT_OK


def _strip_timing(report: ExperimentReport) -> ExperimentReport:
    reps = [dict(r, seconds=0.0) for r in report.repetitions]
    return replace(report, repetitions=reps, wall_time=0.0)


def cmd_experiment(args) -> int:
    from .plotting import plot_experiment

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for path in args.config:
        try:
            cfg = ExperimentConfig.from_dict(_read_json(path))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{path}: bad experiment config ({exc})") from None
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.repetitions is not None:
            overrides["repetitions"] = args.repetitions
        if args.data_dir is not None and cfg.data_path is None:
            overrides["data_path"] = str(Path(args.data_dir) / dataio._DATASET_FILES.get(cfg.dataset, cfg.dataset + ".csv"))
        cfg = replace(cfg, **overrides)
        logger.info("running %s (%d reps)", path, cfg.repetitions)
        report = run_experiment(cfg, workers=args.workers)
        if args.no_timing:
            report = _strip_timing(report)
        report.to_json(out_dir / f"{Path(path).stem}.report.json")
        reports.append(report)
    ext = "csv" if args.format == "csv" else "txt"
    text = emit_table(reports, args.format, out_dir / f"table.{ext}")
    sys.stdout.write(text)
    if not args.no_plot:
        plot_experiment(reports, out_dir / "experiment.png")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        cfg = TrialConfig(alpha=args.alpha, beta=args.beta, n0=args.n[0], n1=args.n[1], eps2=args.eps[0],
                          eps3=args.eps[1], eta0=args.eta[0], eta1=args.eta[1], trials=args.trials, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    reports = run_verify(args.suite, cfg, prop2_trials=args.prop2_trials)
    rows = [r.summary_row() for r in reports]
    if args.out_dir:
        out_dir = Path(args.out_dir)
        for r in reports:
            _write_json(r.to_dict(), out_dir / f"{r.suite}.json")
        (out_dir / "summary.csv").write_text(_rows_to_text(rows, "csv"))
        if not args.no_plot:
            from .plotting import plot_verify

            plot_verify(reports, out_dir / "verify.png")
    sys.stdout.write(_rows_to_text(rows, args.format))
    failed = [r.suite for r in reports if not r.passed]
    if failed:
        logger.error("failed suites: %s", ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def cmd_accountant_table(args) -> int:
    if args.q is not None:
        q = args.q
        if args.steps is None:
            raise UsageError("--steps is required with --q")
        steps = args.steps
    else:
        if args.n is None:
            raise UsageError("give either --q/--steps or --n (with --batch-size/--epochs)")
        q = min(1.0, args.batch_size / args.n)
        steps = args.steps if args.steps is not None else args.epochs * -(-args.n // args.batch_size)
    try:
        rows = accountant_table(args.sigma, q, steps, args.delta, tuple(args.accountant))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = _rows_to_text(rows, args.format)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if args.plot:
        from .plotting import plot_accountant

        plot_accountant(rows, args.plot)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="dpfair", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="load a dataset and report counts and split sizes")
    _add_data_args(s)
    s.add_argument("--out", help="report path (default stdout)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common], help="train one group's classifier with DP-SGD")
    _add_data_args(s)
    s.add_argument("--group", type=int, choices=(0, 1), required=True)
    s.add_argument("--config", help="JSON file with DP-SGD settings")
    s.add_argument("--sigma", type=float, help="noise multiplier")
    s.add_argument("--clip", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--delta", type=float, default=5e-6, help="delta at which to report epsilon")
    s.add_argument("--accountant", nargs="+", choices=sorted(ACCOUNTANTS), default=["rdp", "gdp"])
    s.add_argument("--record-loss", action="store_true")
    s.add_argument("--out", help="train report path (default stdout)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("postprocess", parents=[common], help="privatize rates and build the fair classifier")
    _add_data_args(s)
    s.add_argument("--model0", required=True)
    s.add_argument("--model1", required=True)
    s.add_argument("--eps2", type=float, default=0.05)
    s.add_argument("--eps3", type=float, default=0.05)
    s.add_argument("--accountant", choices=sorted(ACCOUNTANTS), default="rdp",
                   help="which recorded epsilon enters the budget trace")
    s.add_argument("--randomness", choices=("fresh", "hash"), default="fresh")
    s.add_argument("--out", help="fair classifier path (default stdout)")
    s.set_defaults(func=cmd_postprocess)

    s = sub.add_parser("evaluate", parents=[common], help="accuracy and parity gap on the test split")
    _add_data_args(s)
    s.add_argument("--fair", required=True, help="fair classifier JSON")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="run configured experiments and emit a table")
    s.add_argument("config", nargs="+", help="experiment config JSON file(s)")
    s.add_argument("--seed", type=int, default=None, help="override the configs' master seed")
    s.add_argument("-v", "--verbose", action="count", default=0)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--data-dir", help=f"overrides ${dataio.DATA_DIR_ENV}")
    s.add_argument("--out-dir", default="results")
    s.add_argument("--format", choices=("csv", "text"), default="csv")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-timing", action="store_true", help="zero timing fields so reruns are byte-identical")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("verify", parents=[common], help="run Monte Carlo and oracle suites")
    s.add_argument("--suite", choices=SUITES + ("all",), default="all")
    defaults = TrialConfig()
    s.add_argument("--alpha", type=float, default=defaults.alpha)
    s.add_argument("--beta", type=float, default=defaults.beta)
    s.add_argument("--n", type=int, nargs=2, default=(defaults.n0, defaults.n1), metavar=("N0", "N1"))
    s.add_argument("--eps", type=float, nargs=2, default=(defaults.eps2, defaults.eps3), metavar=("EPS2", "EPS3"))
    s.add_argument("--eta", type=float, nargs=2, default=(defaults.eta0, defaults.eta1), metavar=("ETA0", "ETA1"))
    s.add_argument("--trials", type=int, default=defaults.trials)
    s.add_argument("--prop2-trials", type=int, default=100_000)
    s.add_argument("--out-dir")
    s.add_argument("--format", choices=("csv", "text"), default="csv")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("accountant-table", parents=[common], help="epsilon for a grid of noise multipliers")
    s.add_argument("--sigma", type=float, nargs="+", required=True)
    s.add_argument("--delta", type=float, nargs="+", default=[1e-5])
    s.add_argument("--q", type=float, help="sampling rate (with --steps)")
    s.add_argument("--steps", type=int)
    s.add_argument("--n", type=int, help="dataset size; q = batch/n")
    s.add_argument("--batch-size", type=int, default=1024)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--accountant", nargs="+", choices=sorted(ACCOUNTANTS), default=["rdp", "gdp"])
    s.add_argument("--format", choices=("csv", "text"), default="csv")
    s.add_argument("--out")
    s.add_argument("--plot", help="write a figure to this path")
    s.set_defaults(func=cmd_accountant_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dpfair: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StageError, TrainingError, dataio.DataError) as exc:
        print(f"dpfair: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
