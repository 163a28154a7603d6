"""Privacy bookkeeping.

Budgets compose by plain addition. DP-SGD runs (Poisson-subsampled Gaussian
mechanism, ``steps`` iterations) are converted to an (epsilon, delta) pair by
two independent routes: the central-limit Gaussian-DP approximation and the
Renyi-DP ("moments") bound evaluated on a grid of orders.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

DEFAULT_ORDERS: tuple[float, ...] = (1.25, 1.5, 1.75) + tuple(float(a) for a in range(2, 65)) + (128.0, 256.0)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")

    def __add__(self, other: "PrivacyBudget") -> "PrivacyBudget":
        return basic_compose([self, other])

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta}


def basic_compose(budgets: Iterable[PrivacyBudget]) -> PrivacyBudget:
    """Sequential composition: epsilons add, deltas add."""
    budgets = list(budgets)
    if not budgets:
        raise ValueError("nothing to compose")
    # fsum keeps the result independent of ordering
    return PrivacyBudget(math.fsum(b.epsilon for b in budgets), min(1.0, math.fsum(b.delta for b in budgets)))


def laplace_budget(n: int, epsilon: float) -> tuple[float, PrivacyBudget]:
    """Laplace scale for releasing a mean of n values in [0, 1] at ``epsilon``-DP.

    The mean has L1 sensitivity 1/n, so the scale is 1/(n*epsilon).
    """
    if n < 1:
        raise ValueError("group size must be at least 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return 1.0 / (n * epsilon), PrivacyBudget(epsilon, 0.0)


def split_budget(
    target: PrivacyBudget, eps2: float, eps3: float, weights: Sequence[float] = (0.5, 0.5)
) -> list[PrivacyBudget]:
    """Allocate ``target`` across the two classifiers and the two rate releases.

    Returns ``[(eps0, delta0), (eps1, delta1), (eps2, 0), (eps3, 0)]`` where the
    classifiers share ``target.epsilon - eps2 - eps3`` and ``target.delta``
    according to ``weights``.
    """
    w0, w1 = weights
    if w0 < 0 or w1 < 0 or abs(w0 + w1 - 1) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    rest = target.epsilon - eps2 - eps3
    if rest < 0:
        raise ValueError("eps2 + eps3 exceeds the target epsilon")
    eps0, delta0 = w0 * rest, w0 * target.delta
    eps1 = _absorb_rounding(target.epsilon, [eps0, eps2, eps3], w1 * rest)
    delta1 = _absorb_rounding(target.delta, [delta0], w1 * target.delta)
    return [
        PrivacyBudget(eps0, delta0),
        PrivacyBudget(eps1, delta1),
        PrivacyBudget(eps2, 0.0),
        PrivacyBudget(eps3, 0.0),
    ]


def _absorb_rounding(total: float, others: list[float], x: float) -> float:
    """Nudge ``x`` by a few ulps so that ``fsum(others + [x]) == total`` when possible."""
    for _ in range(8):
        s = math.fsum(others + [x])
        if s == total:
            break
        x = max(0.0, math.nextafter(x, x + (total - s)))
    return x


@dataclass(frozen=True)
class GaussianMechanismSpec:
    """``steps`` iterations of a Gaussian mechanism with noise multiplier
    ``sigma`` applied to Poisson subsamples drawn at rate ``q``."""

    sigma: float
    q: float
    steps: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.q <= 1:
            raise ValueError("sampling rate must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @classmethod
    def for_training(cls, sigma: float, n: int, batch_size: int, epochs: int) -> "GaussianMechanismSpec":
        q = min(1.0, batch_size / n)
        return cls(sigma, q, epochs * math.ceil(n / batch_size))


# -- Gaussian DP (central limit approximation) --------------------------------------


def gdp_mu(spec: GaussianMechanismSpec) -> float:
    with np.errstate(over="raise"):
        try:
            mu = spec.q * math.sqrt(spec.steps * math.expm1(spec.sigma**-2))
        except (OverflowError, FloatingPointError):
            mu = math.inf
    if not math.isfinite(mu):
        raise ValueError(f"mu is not finite for sigma={spec.sigma}; noise too small")
    return mu


def gdp_delta(epsilon: float, mu: float) -> float:
    """delta(eps) of a mu-GDP mechanism."""
    if mu == 0:
        return 0.0
    a = special.ndtr(-epsilon / mu + mu / 2)
    b = math.exp(epsilon + special.log_ndtr(-epsilon / mu - mu / 2))
    return float(a - b)


def gdp_epsilon(spec: GaussianMechanismSpec, delta: float) -> float:
    """Smallest epsilon with ``gdp_delta(epsilon, mu) <= delta``, by bisection."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    mu = gdp_mu(spec)
    return _gdp_epsilon_from_mu(mu, delta)


def _gdp_epsilon_from_mu(mu: float, delta: float) -> float:
    if gdp_delta(0.0, mu) <= delta:
        return 0.0
    lo, hi = 0.0, 1.0
    while gdp_delta(hi, mu) > delta:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            raise ValueError("epsilon bracket diverged")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if gdp_delta(mid, mu) > delta:
            lo = mid
        else:
            hi = mid
    # pick whichever endpoint is closer in delta; both are within one ulp of the root
    return hi if abs(gdp_delta(hi, mu) - delta) <= abs(gdp_delta(lo, mu) - delta) else lo


# -- Renyi DP of the subsampled Gaussian ---------------------------------------------


def _log_add(x: float, y: float) -> float:
    lo, hi = min(x, y), max(x, y)
    if lo == -math.inf:
        return hi
    return hi + math.log1p(math.exp(lo - hi))


def _log_sub(x: float, y: float) -> float:
    if y == -math.inf:
        return x
    if x <= y:
        return -math.inf
    return x + math.log(-math.expm1(y - x))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    i = np.arange(alpha + 1)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(i + 1) - special.gammaln(alpha - i + 1)
    terms = log_binom + i * math.log(q) + (alpha - i) * math.log1p(-q) + (i * i - i) / (2 * sigma**2)
    return float(special.logsumexp(terms))


def _log_erfc_half(x: float) -> float:
    """log(erfc(x) / 2)."""
    return float(special.log_ndtr(-x * math.sqrt(2)))


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    # split the integral at z0 where the two mixture densities cross
    z0 = sigma**2 * math.log(1 / q - 1) + 0.5
    log_a0 = log_a1 = -math.inf
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_s0 = (log_coef + i * math.log(q) + j * math.log1p(-q) + (i * i - i) / (2 * sigma**2)
                  + _log_erfc_half((i - z0) / (math.sqrt(2) * sigma)))
        log_s1 = (log_coef + j * math.log(q) + i * math.log1p(-q) + (j * j - j) / (2 * sigma**2)
                  + _log_erfc_half((z0 - j) / (math.sqrt(2) * sigma)))
        if coef > 0:
            log_a0, log_a1 = _log_add(log_a0, log_s0), _log_add(log_a1, log_s1)
        else:
            log_a0, log_a1 = _log_sub(log_a0, log_s0), _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30 or i > 10_000:
            break
    return _log_add(log_a0, log_a1)


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: float) -> float:
    """Per-step RDP of order ``alpha`` for the Poisson-subsampled Gaussian."""
    if alpha <= 1:
        raise ValueError("RDP orders must exceed 1")
    if q == 1.0:
        return alpha / (2 * sigma**2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, alpha)
    return log_a / (alpha - 1)


@dataclass(frozen=True)
class RdpResult:
    epsilon: float
    order: float
    skipped: tuple[float, ...] = ()


def rdp_privacy_spent(
    spec: GaussianMechanismSpec, delta: float, orders: Sequence[float] = DEFAULT_ORDERS
) -> RdpResult:
    """Convert composed RDP to (eps, delta): eps = min over orders of
    ``steps * rdp(alpha) + log(1/delta) / (alpha - 1)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if len(orders) == 0:
        raise ValueError("no RDP orders given")
    best, best_order, skipped = math.inf, math.nan, []
    log_inv_delta = math.log(1 / delta)
    for alpha in orders:
        try:
            with np.errstate(over="raise", invalid="raise"):
                rdp = rdp_subsampled_gaussian(spec.q, spec.sigma, float(alpha))
        except (OverflowError, FloatingPointError, ValueError):
            skipped.append(float(alpha))
            continue
        if not math.isfinite(rdp):
            skipped.append(float(alpha))
            continue
        eps = spec.steps * rdp + log_inv_delta / (alpha - 1)
        if eps < best:
            best, best_order = eps, float(alpha)
    if skipped:
        logger.info("skipped RDP orders with numerical overflow: %s", skipped)
    if not math.isfinite(best):
        raise ValueError("no RDP order produced a finite bound")
    return RdpResult(best, best_order, tuple(skipped))


def rdp_epsilon(spec: GaussianMechanismSpec, delta: float, orders: Sequence[float] = DEFAULT_ORDERS) -> float:
    return rdp_privacy_spent(spec, delta, orders).epsilon


ACCOUNTANTS = {"gdp": gdp_epsilon, "rdp": rdp_epsilon}


def accountant_table(
    sigmas: Iterable[float], q: float, steps: int, deltas: Iterable[float], accountants=("rdp", "gdp")
) -> list[dict]:
    """One row per (sigma, delta) with the epsilon of each accountant."""
    rows = []
    for sigma in sigmas:
        spec = GaussianMechanismSpec(sigma, q, steps)
        for delta in deltas:
            row = {"sigma": sigma, "q": q, "steps": steps, "delta": delta}
            for name in accountants:
                row[f"eps_{name}"] = ACCOUNTANTS[name](spec, delta)
            rows.append(row)
    return rows
