"""End-to-end pipeline: split, train decoupled DP-SGD classifiers, privately
post-process on the held-out split, evaluate on the test split."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as dataio
from .accountant import PrivacyBudget, basic_compose, split_budget
from .dpsgd import DpSgdConfig, train_dpsgd
from .fairpost import RandomnessPolicy, private_fair_classifier, sp_gap
from .model import schema_hash

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """Wraps an exception with the pipeline stage it came from."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "adult"
    data_path: str | None = None
    schema: str | None = None
    split: tuple[float, float, float] = (0.5, 0.25, 0.25)
    dpsgd: tuple[dict, dict] = ({"noise_multiplier": 4.4}, {"noise_multiplier": 4.4})
    eps2: float = 0.05
    eps3: float = 0.05
    target_epsilon: float = 3.0
    target_delta: float = 1e-5
    budget_weights: tuple[float, float] = (0.5, 0.5)
    accountants: tuple[str, ...] = ("rdp", "gdp")
    repetitions: int = 10
    master_seed: int = 0
    randomness: str = "fresh"
    label: str = "fair-post"

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        cfg = dict(cfg)
        for key in ("split", "budget_weights", "accountants"):
            if key in cfg:
                cfg[key] = tuple(cfg[key])
        if "dpsgd" in cfg:
            d = cfg["dpsgd"]
            cfg["dpsgd"] = (dict(d), dict(d)) if isinstance(d, dict) else tuple(dict(x) for x in d)
        return cls(**cfg)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def budget_trace(self) -> list[PrivacyBudget]:
        target = PrivacyBudget(self.target_epsilon, self.target_delta)
        return split_budget(target, self.eps2, self.eps3, self.budget_weights)

    def resolve_schema(self) -> dataio.Schema:
        if self.schema and Path(self.schema).suffix == ".json":
            return dataio.Schema.from_json(self.schema)
        return dataio.shipped_schema(self.schema or self.dataset)

    def resolve_path(self) -> Path:
        return Path(self.data_path) if self.data_path else dataio.default_data_path(self.dataset)


@dataclass
class ExperimentReport:
    config: dict
    repetitions: list[dict]
    mean_accuracy: float
    mean_sp_gap: float
    budget_trace: list[dict]
    composed_budget: dict
    wall_time: float
    label: str = "fair-post"
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)

    @classmethod
    def from_json(cls, path) -> "ExperimentReport":
        with open(path) as fh:
            return cls(**json.load(fh))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def repetition_seeds(master_seed: int, rep: int) -> dict[str, int]:
    """Independent sub-seeds for one repetition, derived from (master_seed, rep)."""
    state = np.random.SeedSequence([master_seed, rep]).generate_state(5, dtype=np.uint64)
    return dict(zip(("split", "train0", "train1", "privatize", "predict"), (int(s) for s in state)))


@dataclass
class PreparedSplits:
    train: dataio.GroupedDataset
    post: dataio.GroupedDataset
    test: dataio.GroupedDataset
    spec: dataio.PreprocessSpec


def prepare(raw: dataio.GroupedDataset, schema: dataio.Schema, fractions, seed: int) -> PreparedSplits:
    """Split raw records, fit standardization on train, encode all three parts."""
    train, post, test = dataio.split(raw, dataio.SplitSpec(tuple(fractions), seed))
    spec = dataio.fit_preprocess(train, schema)
    return PreparedSplits(*(dataio.preprocess(part, spec) for part in (train, post, test)), spec)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_repetition(cfg: ExperimentConfig, raw: dataio.GroupedDataset, schema: dataio.Schema, rep: int) -> dict:
    seeds = repetition_seeds(cfg.master_seed, rep)
    t0 = time.perf_counter()
    parts = _stage("split", prepare, raw, schema, cfg.split, seeds["split"])
    D0, D1 = dataio.partition_by_group(parts.train)
    P0, P1 = dataio.partition_by_group(parts.post)
    trace = cfg.budget_trace()
    feature_hash = schema_hash(parts.train.frame.columns)

    reports = []
    for g, (Dg, key) in enumerate(((D0, "train0"), (D1, "train1"))):
        tcfg = DpSgdConfig(**{**cfg.dpsgd[g], "seed": seeds[key]})
        rep_g = _stage(f"train{g}", train_dpsgd, Dg, tcfg, trace[g].delta, cfg.accountants)
        reports.append(rep_g)
    h0, h1 = (replace(r.model, schema_hash=feature_hash) for r in reports)

    rng = np.random.Generator(np.random.PCG64(seeds["privatize"]))
    policy = RandomnessPolicy(cfg.randomness, seeds["predict"], salt=str(seeds["predict"]))
    fc, priv, est = _stage(
        "postprocess", private_fair_classifier, h0, h1, P0, P1, cfg.eps2, cfg.eps3, rng, trace[:2], policy
    )

    test = parts.test
    X = test.X
    base = fc.base_predict(X, test.a)
    yhat = _stage("evaluate", fc.predict, X, test.a)
    return {
        "rep": rep,
        "seeds": seeds,
        "accuracy": float(np.mean(yhat == test.y)),
        "sp_gap": sp_gap(yhat, test.a),
        "base_accuracy": float(np.mean(base == test.y)),
        "base_sp_gap": sp_gap(base, test.a),
        "alpha_bar": est.alpha_bar,
        "beta_bar": est.beta_bar,
        "alpha_tilde": priv.alpha_tilde,
        "beta_tilde": priv.beta_tilde,
        "laplace_draws": list(priv.laplace_draws),
        "pre_gap": abs(est.alpha_bar - est.beta_bar),
        "branch": fc.params.branch,
        "n_train": [len(D0), len(D1)],
        "n_post": [len(P0), len(P1)],
        "n_test": [test.n0, test.n1],
        "accountant_eps": [r.epsilons for r in reports],
        "steps": [r.steps for r in reports],
        "seconds": time.perf_counter() - t0,
    }


def _run_rep_worker(args):
    cfg, raw, schema, rep = args
    return run_repetition(cfg, raw, schema, rep)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run every repetition and aggregate.

    Each repetition draws its own split, DP-SGD and Laplace seeds from
    ``(master_seed, rep)``, so results do not depend on ``workers``.
    """
    t0 = time.perf_counter()
    schema = _stage("load", cfg.resolve_schema)
    raw = _stage("load", dataio.load_csv, cfg.resolve_path(), schema)
    jobs = [(cfg, raw, schema, r) for r in range(cfg.repetitions)]
    if workers > 1 and cfg.repetitions > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_run_rep_worker, jobs))
    else:
        reps = [_run_rep_worker(j) for j in jobs]
    for r in reps:
        logger.info("rep %d: acc=%.4f gap=%.4f", r["rep"], r["accuracy"], r["sp_gap"])
    trace = cfg.budget_trace()
    return ExperimentReport(
        config=cfg.to_dict(),
        repetitions=reps,
        mean_accuracy=float(np.mean([r["accuracy"] for r in reps])),
        mean_sp_gap=float(np.mean([r["sp_gap"] for r in reps])),
        budget_trace=[b.to_dict() for b in trace],
        composed_budget=basic_compose(trace).to_dict(),
        wall_time=time.perf_counter() - t0,
        label=cfg.label,
        extras={
            "mean_base_accuracy": float(np.mean([r["base_accuracy"] for r in reps])),
            "mean_base_sp_gap": float(np.mean([r["base_sp_gap"] for r in reps])),
            "ingestion": dict(raw.info),
        },
    )


TABLE_COLUMNS = ("method", "dataset", "accuracy", "sp_gap", "epsilon", "delta", "eps2", "eps3", "sigma0", "sigma1")


def table_rows(reports: Sequence[ExperimentReport]) -> list[dict]:
    if not reports:
        raise ValueError("no reports to tabulate")
    rows = []
    for rep in reports:
        c = rep.config
        rows.append(
            {
                "method": rep.label,
                "dataset": c["dataset"],
                "accuracy": round(rep.mean_accuracy, 4),
                "sp_gap": round(rep.mean_sp_gap, 4),
                "epsilon": rep.composed_budget["epsilon"],
                "delta": rep.composed_budget["delta"],
                "eps2": c["eps2"],
                "eps3": c["eps3"],
                "sigma0": c["dpsgd"][0]["noise_multiplier"],
                "sigma1": c["dpsgd"][1]["noise_multiplier"],
            }
        )
    return rows


def emit_table(reports: Sequence[ExperimentReport], fmt: str = "csv", path=None) -> str:
    """Render one row per report as CSV or aligned text; write to ``path`` if given."""
    rows = table_rows(reports)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    elif fmt == "text":
        cells = [list(TABLE_COLUMNS)] + [[str(r[c]) for c in TABLE_COLUMNS] for r in rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_COLUMNS))]
        text = "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells) + "\n"
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text
