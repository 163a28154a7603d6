"""DP-SGD for logistic regression: Poisson subsampling, per-example clipping,
Gaussian noise on the clipped sum, normalization by the expected batch size."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .accountant import ACCOUNTANTS, GaussianMechanismSpec
from .data import GroupedDataset
from .model import LogisticModel, bce_loss, per_sample_gradients


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class DpSgdConfig:
    noise_multiplier: float
    clip_norm: float = 2.0
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 1024
    seed: int = 0
    sampling: str = "poisson"

    def __post_init__(self):
        for name in ("noise_multiplier", "clip_norm", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive integers")
        if self.sampling != "poisson":
            raise ValueError("only poisson sampling is supported")

    @classmethod
    def from_dict(cls, cfg: dict) -> "DpSgdConfig":
        return cls(**cfg)


@dataclass
class TrainReport:
    model: LogisticModel
    steps: int
    q: float
    n: int
    epsilons: dict[str, float]
    delta: float
    config: DpSgdConfig
    loss_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "steps": self.steps,
            "q": self.q,
            "n": self.n,
            "delta": self.delta,
            "epsilons": self.epsilons,
            "config": asdict(self.config),
            "loss_curve": self.loss_curve,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``g`` by min(1, C/||g||). Works row-wise on a 2-D array."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    g = np.asarray(g, dtype=float)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        factor = np.minimum(1.0, clip_norm / norms)
    return g * factor


def noisy_step(
    model: LogisticModel, X: np.ndarray, y: np.ndarray, cfg: DpSgdConfig, rng: np.random.Generator
) -> LogisticModel:
    """One DP-SGD update on the (possibly empty) batch ``(X, y)``.

    theta' = theta - lr / B * (sum_i clip(g_i) + N(0, (sigma C)^2 I)), with B
    the configured expected batch size, not the realized one.
    """
    theta = model.params
    if len(X):
        grads = per_sample_gradients(model, X, y)
        if not np.all(np.isfinite(grads)):
            raise TrainingError(f"non-finite per-example gradient; |theta|={np.linalg.norm(theta):.3g}")
        total = clip_gradient(grads, cfg.clip_norm).sum(axis=0)
    else:
        total = np.zeros_like(theta)
    noise = rng.normal(0.0, cfg.noise_multiplier * cfg.clip_norm, size=theta.shape)
    return model.with_params(theta - cfg.learning_rate * (total + noise) / cfg.batch_size)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train_dpsgd(
    data: GroupedDataset,
    cfg: DpSgdConfig,
    target_delta: float,
    accountants=("rdp", "gdp"),
    init: LogisticModel | None = None,
    record_loss: bool = False,
) -> TrainReport:
    """Train a logistic model on one group with DP-SGD and account for it.

    Runs ``epochs * ceil(n / B)`` steps, each on a Poisson sample with rate
    ``q = B / n``. Epsilons at ``target_delta`` are reported for every named
    accountant. ``record_loss`` stores the (non-private) training loss after
    each epoch for diagnostics.
    """
    n = len(data)
    if n == 0:
        raise TrainingError("cannot train on an empty group")
    if cfg.batch_size > n:
        raise TrainingError(f"expected batch size {cfg.batch_size} exceeds group size {n}")
    X, y = data.X, data.y.astype(float)
    q = cfg.batch_size / n
    per_epoch = steps_per_epoch(n, cfg.batch_size)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    model = init if init is not None else LogisticModel.zeros(X.shape[1])
    losses = []
    for _ in range(cfg.epochs):
        for _ in range(per_epoch):
            mask = rng.random(n) < q
            model = noisy_step(model, X[mask], y[mask], cfg, rng)
        if record_loss:
            loss = bce_loss(model, X, y)
            if not math.isfinite(loss):
                raise TrainingError("training diverged (non-finite loss)")
            losses.append(loss)

    steps = cfg.epochs * per_epoch
    spec = GaussianMechanismSpec(cfg.noise_multiplier, q, steps)
    epsilons = {name: ACCOUNTANTS[name](spec, target_delta) for name in accountants}
    return TrainReport(model, steps, q, n, epsilons, target_delta, cfg, losses)
