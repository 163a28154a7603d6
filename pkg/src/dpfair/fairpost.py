"""Randomized post-processing of two group-specific classifiers to statistical parity.

Given base positive rates (alpha for group 0, beta for group 1), the group with
the higher rate keeps each base-positive with probability
``(hi + lo) / (2 hi)`` and the lower-rate group promotes each base-negative with
probability ``(hi - lo) / (2 (1 - lo))``. Both groups then accept at
``(hi + lo) / 2``, and the total mass of changed predictions is ``hi - lo``.

The private variant first releases the empirical rates through the Laplace
mechanism (scale ``1 / (n_a * eps)``) and projects them back onto [0, 1].
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .accountant import PrivacyBudget, basic_compose, laplace_budget
from .data import DataError, GroupedDataset
from .model import LogisticModel

ALPHA_GE_BETA = "alpha_ge_beta"
ALPHA_LT_BETA = "alpha_lt_beta"

Predictor = Callable[[np.ndarray], np.ndarray]


def _as_predictor(h) -> Predictor:
    if isinstance(h, LogisticModel):
        return h.predict
    return h


def _binary(values) -> np.ndarray:
    out = np.asarray(values)
    if not np.isin(out, (0, 1)).all():
        raise ValueError("classifier outputs must be 0/1")
    return out.astype(np.int8)


@dataclass(frozen=True)
class RateEstimates:
    alpha_bar: float
    beta_bar: float
    n0: int
    n1: int

    def hoeffding_halfwidth(self, confidence: float = 0.95) -> tuple[float, float]:
        """Two-sided Hoeffding half-widths for (alpha_bar, beta_bar).

        Reported alongside the estimates only; the parity bounds ignore them.
        """
        t = math.log(2 / (1 - confidence))
        return math.sqrt(t / (2 * self.n0)), math.sqrt(t / (2 * self.n1))


def estimate_rates(h0, h1, D0: GroupedDataset, D1: GroupedDataset) -> RateEstimates:
    """Empirical positive rates of h0 on D0 and h1 on D1."""
    if len(D0) == 0 or len(D1) == 0:
        raise DataError(f"both groups must be nonempty (n0={len(D0)}, n1={len(D1)})")
    y0 = _binary(_as_predictor(h0)(D0.X))
    y1 = _binary(_as_predictor(h1)(D1.X))
    return RateEstimates(float(y0.mean()), float(y1.mean()), len(D0), len(D1))


def project_unit(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class PrivatizedRates:
    alpha_tilde: float
    beta_tilde: float
    laplace_draws: tuple[float, float]
    scales: tuple[float, float]
    alpha_bar: float
    beta_bar: float

    @property
    def deviations(self) -> tuple[float, float]:
        """(d0, d1): post-projection shifts of the released rates."""
        return self.alpha_tilde - self.alpha_bar, self.beta_tilde - self.beta_bar


def privatize_rates(r: RateEstimates, eps2: float, eps3: float, rng: np.random.Generator) -> PrivatizedRates:
    """Release (alpha_bar, beta_bar) with Laplace noise and clamp to [0, 1].

    Draws l0 first, then l1.
    """
    scale0, _ = laplace_budget(r.n0, eps2)
    scale1, _ = laplace_budget(r.n1, eps3)
    l0 = float(rng.laplace(0.0, scale0))
    l1 = float(rng.laplace(0.0, scale1))
    return PrivatizedRates(
        project_unit(r.alpha_bar + l0),
        project_unit(r.beta_bar + l1),
        (l0, l1),
        (scale0, scale1),
        r.alpha_bar,
        r.beta_bar,
    )


@dataclass(frozen=True)
class PostProcessParams:
    """Decision parameters of the fair classifier.

    ``keep_threshold`` applies to base-positives of the high-rate group,
    ``promote_threshold`` to base-negatives of the low-rate group.
    """

    branch: str
    hi_rate: float
    lo_rate: float
    keep_threshold: float
    promote_threshold: float

    @property
    def high_group(self) -> int:
        return 0 if self.branch == ALPHA_GE_BETA else 1

    @property
    def rates(self) -> tuple[float, float]:
        """The (alpha, beta) pair the parameters were built from."""
        if self.branch == ALPHA_GE_BETA:
            return self.hi_rate, self.lo_rate
        return self.lo_rate, self.hi_rate

    def to_dict(self) -> dict:
        return asdict(self)


def build_params(alpha: float, beta: float) -> PostProcessParams:
    """Thresholds for group rates ``alpha`` (A=0) and ``beta`` (A=1). Ties go to
    the alpha >= beta branch."""
    if not (0 <= alpha <= 1 and 0 <= beta <= 1):
        raise ValueError(f"rates must lie in [0, 1], got ({alpha}, {beta})")
    branch = ALPHA_GE_BETA if alpha >= beta else ALPHA_LT_BETA
    hi, lo = (alpha, beta) if branch == ALPHA_GE_BETA else (beta, alpha)
    keep = (hi + lo) / (2 * hi) if hi > 0 else 1.0
    promote = (hi - lo) / (2 * (1 - lo)) if lo < 1 else 0.0
    return PostProcessParams(branch, hi, lo, min(1.0, keep), max(0.0, promote))


def apply_postprocessing(params: PostProcessParams, base: np.ndarray, a: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Vectorized decision rule given base outputs, groups and uniform draws."""
    base = np.asarray(base).astype(bool)
    high = np.asarray(a) == params.high_group
    out = np.where(high, base & (s <= params.keep_threshold), base | (s <= params.promote_threshold))
    return out.astype(np.int8)


def acceptance_rates(params: PostProcessParams, alpha: float, beta: float) -> tuple[float, float]:
    """Expected positive rate per group when the base rates are (alpha, beta)."""
    if params.branch == ALPHA_GE_BETA:
        return alpha * params.keep_threshold, beta + (1 - beta) * params.promote_threshold
    return alpha + (1 - alpha) * params.promote_threshold, beta * params.keep_threshold


def prediction_change_rates(params: PostProcessParams, alpha: float, beta: float) -> tuple[float, float]:
    """Per-group probability that the post-processed label differs from the base label."""
    if params.branch == ALPHA_GE_BETA:
        return alpha * (1 - params.keep_threshold), (1 - beta) * params.promote_threshold
    return (1 - alpha) * params.promote_threshold, beta * (1 - params.keep_threshold)


def analytic_sp_gap(params: PostProcessParams, alpha: float, beta: float) -> float:
    r0, r1 = acceptance_rates(params, alpha, beta)
    return abs(r0 - r1)


def prop1_lower_bound(alpha: float, beta: float, gamma: float) -> float:
    """Minimum total prediction change of any gamma-parity classifier (may be negative)."""
    return abs(alpha - beta) - gamma


def err_star(alpha: float, beta: float, gamma: float) -> float:
    """Least total prediction-change mass among classifiers with parity gap <= gamma."""
    return max(0.0, abs(alpha - beta) - gamma)


@dataclass(frozen=True)
class RandomnessPolicy:
    """``fresh``: one uniform per prediction from a seeded stream.
    ``hash``: the uniform is a hash of (x, a, salt), so repeat queries agree."""

    mode: str = "fresh"
    seed: int = 0
    salt: str = ""

    def __post_init__(self):
        if self.mode not in ("fresh", "hash"):
            raise ValueError(f"unknown randomness mode {self.mode!r}")


def hash_uniforms(X: np.ndarray, a: np.ndarray, salt: str) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    out = np.empty(X.shape[0])
    prefix = salt.encode()
    for i in range(X.shape[0]):
        h = hashlib.sha256(prefix + bytes([int(a[i])]) + X[i].tobytes()).digest()
        out[i] = (int.from_bytes(h[:8], "big") >> 11) * 2.0**-53
    return out


@dataclass
class FairClassifier:
    base0: LogisticModel
    base1: LogisticModel
    params: PostProcessParams
    rng_policy: RandomnessPolicy = field(default_factory=RandomnessPolicy)
    rates: dict = field(default_factory=dict)
    budget_trace: list[PrivacyBudget] = field(default_factory=list)

    def __post_init__(self):
        self._rng = np.random.Generator(np.random.PCG64(self.rng_policy.seed))

    def base_predict(self, X: np.ndarray, a: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.asarray(a)
        out = np.zeros(len(a), dtype=np.int8)
        for g, h in ((0, self.base0), (1, self.base1)):
            idx = a == g
            if idx.any():
                out[idx] = _binary(_as_predictor(h)(X[idx]))
        return out

    def uniforms(self, X: np.ndarray, a: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.rng_policy.mode == "hash":
            return hash_uniforms(X, a, self.rng_policy.salt)
        return (rng or self._rng).random(len(a))

    def predict(self, X, a, rng: np.random.Generator | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.atleast_1d(np.asarray(a))
        if not np.isin(a, (0, 1)).all():
            raise ValueError("sensitive attribute must be 0/1")
        base = self.base_predict(X, a)
        return apply_postprocessing(self.params, base, a, self.uniforms(X, a, rng))

    __call__ = predict

    @property
    def budget(self) -> PrivacyBudget | None:
        return basic_compose(self.budget_trace) if self.budget_trace else None

    def to_dict(self) -> dict:
        return {
            "base0": self.base0.to_dict(),
            "base1": self.base1.to_dict(),
            "branch": self.params.branch,
            "thresholds": {"keep": self.params.keep_threshold, "promote": self.params.promote_threshold},
            "params": self.params.to_dict(),
            "rates": dict(self.rates),
            "rng_policy": asdict(self.rng_policy),
            "budget_trace": [b.to_dict() for b in self.budget_trace],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FairClassifier":
        return cls(
            LogisticModel.from_dict(obj["base0"]),
            LogisticModel.from_dict(obj["base1"]),
            PostProcessParams(**obj["params"]),
            RandomnessPolicy(**obj.get("rng_policy", {})),
            dict(obj.get("rates", {})),
            [PrivacyBudget(**b) for b in obj.get("budget_trace", [])],
        )


def fair_predict(fc: FairClassifier, x, a: int, rng: np.random.Generator | None = None) -> int:
    """Single-point prediction with one uniform draw."""
    if a not in (0, 1):
        raise ValueError("sensitive attribute must be 0 or 1")
    return int(fc.predict(np.atleast_2d(x), np.array([a]), rng)[0])


def fair_classifier(h0, h1, alpha: float, beta: float, **kw) -> FairClassifier:
    """Non-private construction from known base rates."""
    return FairClassifier(h0, h1, build_params(alpha, beta), rates={"alpha": alpha, "beta": beta}, **kw)


def private_fair_classifier(
    h0,
    h1,
    D0: GroupedDataset,
    D1: GroupedDataset,
    eps2: float,
    eps3: float,
    rng: np.random.Generator,
    classifier_budgets: Sequence[PrivacyBudget] = (),
    rng_policy: RandomnessPolicy | None = None,
) -> tuple[FairClassifier, PrivatizedRates, RateEstimates]:
    """Estimate rates on (D0, D1), privatize them and build the fair classifier.

    The returned budget trace is ``classifier_budgets + [(eps2, 0), (eps3, 0)]``.
    """
    est = estimate_rates(h0, h1, D0, D1)
    priv = privatize_rates(est, eps2, eps3, rng)
    params = build_params(priv.alpha_tilde, priv.beta_tilde)
    trace = list(classifier_budgets) + [PrivacyBudget(eps2, 0.0), PrivacyBudget(eps3, 0.0)]
    rates = {
        "alpha_bar": est.alpha_bar,
        "beta_bar": est.beta_bar,
        "alpha_tilde": priv.alpha_tilde,
        "beta_tilde": priv.beta_tilde,
        "n0": est.n0,
        "n1": est.n1,
    }
    fc = FairClassifier(h0, h1, params, rng_policy or RandomnessPolicy(), rates, trace)
    return fc, priv, est


def sp_gap(yhat: np.ndarray, a: np.ndarray) -> float:
    """|P(Yhat=1 | A=0) - P(Yhat=1 | A=1)| on a finite sample."""
    yhat, a = np.asarray(yhat), np.asarray(a)
    if not ((a == 0).any() and (a == 1).any()):
        raise DataError("both groups must be present to measure the parity gap")
    return float(abs(yhat[a == 0].mean() - yhat[a == 1].mean()))


def sp_gap_empirical(classifier, test: GroupedDataset, rng: np.random.Generator | None = None) -> float:
    """Empirical parity gap of ``classifier(X, a[, rng])`` on ``test``, one draw per record."""
    if isinstance(classifier, FairClassifier):
        yhat = classifier.predict(test.X, test.a, rng)
    else:
        yhat = classifier(test.X, test.a)
    return sp_gap(yhat, test.a)
