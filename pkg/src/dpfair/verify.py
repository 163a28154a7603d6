"""Executable checks of the post-processing guarantees.

Each suite returns a :class:`VerdictReport`. Frequency suites allow 3 binomial
standard deviations of Monte Carlo slack, mean suites 3 standard errors; the
Laplace tail suite allows 4 binomial standard deviations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from . import fairpost as fp


@dataclass(frozen=True)
class TrialConfig:
    alpha: float = 0.6
    beta: float = 0.2
    n0: int = 1000
    n1: int = 1000
    eps2: float = 0.05
    eps3: float = 0.05
    eta0: float = 0.05
    eta1: float = 0.05
    trials: int = 10_000
    seed: int = 0
    finite_sample: bool = False

    def __post_init__(self):
        if not (0 < self.eta0 < 1 and 0 < self.eta1 < 1):
            raise ValueError("eta0 and eta1 must lie in (0, 1)")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ValueError("base rates must lie in [0, 1]")

    @property
    def scales(self) -> tuple[float, float]:
        return 1 / (self.n0 * self.eps2), 1 / (self.n1 * self.eps3)

    @property
    def hp_bound(self) -> float:
        """High-probability parity bound at confidence 1 - (eta0 + eta1)."""
        s0, s1 = self.scales
        return math.log(1 / self.eta0) * s0 + math.log(1 / self.eta1) * s1

    @property
    def mean_bound(self) -> float:
        s0, s1 = self.scales
        return s0 + s1


@dataclass
class VerdictReport:
    suite: str
    bound: float
    statistic: float
    slack: float
    passed: bool
    trials: int = 0
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_row(self) -> dict:
        return {
            "suite": self.suite,
            "bound": self.bound,
            "empirical": self.statistic,
            "slack": self.slack,
            "pass": self.passed,
        }


@dataclass
class NoiseLedger:
    """Per-trial noise and outcome records of a Monte Carlo run."""

    l0: np.ndarray
    l1: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    alpha_tilde: np.ndarray
    beta_tilde: np.ndarray
    gap: np.ndarray
    change_sum: np.ndarray

    true_rates: tuple[float, float] = (0.0, 0.0)

    @property
    def e0(self) -> np.ndarray:
        return self.alpha_bar - self.true_rates[0]

    @property
    def e1(self) -> np.ndarray:
        return self.beta_bar - self.true_rates[1]

    @property
    def d0(self) -> np.ndarray:
        return self.alpha_tilde - self.alpha_bar

    @property
    def d1(self) -> np.ndarray:
        return self.beta_tilde - self.beta_bar

    def projection_violations(self) -> int:
        """Trials where projection moved a rate farther than the raw noise (must be 0)."""
        tol = 1e-15
        return int(np.sum(np.abs(self.d0) > np.abs(self.l0) + tol) + np.sum(np.abs(self.d1) > np.abs(self.l1) + tol))


def run_trials(cfg: TrialConfig, rng: np.random.Generator | None = None) -> NoiseLedger:
    """Privatize (alpha, beta) ``cfg.trials`` times and record the analytic
    parity gap and prediction-change mass of each resulting classifier,
    evaluated against the true base rates."""
    rng = rng or np.random.Generator(np.random.PCG64(cfg.seed))
    s0, s1 = cfg.scales
    n = cfg.trials
    if cfg.finite_sample:
        e0 = rng.binomial(cfg.n0, cfg.alpha, n) / cfg.n0 - cfg.alpha
        e1 = rng.binomial(cfg.n1, cfg.beta, n) / cfg.n1 - cfg.beta
    else:
        e0 = np.zeros(n)
        e1 = np.zeros(n)
    l0 = rng.laplace(0.0, s0, n)
    l1 = rng.laplace(0.0, s1, n)
    a_t = np.empty(n)
    b_t = np.empty(n)
    gap = np.empty(n)
    change = np.empty(n)
    for t in range(n):
        a_t[t] = fp.project_unit((cfg.alpha + e0[t]) + l0[t])
        b_t[t] = fp.project_unit((cfg.beta + e1[t]) + l1[t])
        params = fp.build_params(a_t[t], b_t[t])
        gap[t] = fp.analytic_sp_gap(params, cfg.alpha, cfg.beta)
        change[t] = sum(fp.prediction_change_rates(params, cfg.alpha, cfg.beta))
    return NoiseLedger(l0, l1, cfg.alpha + e0, cfg.beta + e1, a_t, b_t, gap, change, (cfg.alpha, cfg.beta))


def _binomial_slack(p: float, trials: int, k: float = 3.0) -> float:
    p = min(max(p, 0.0), 1.0)
    return k * math.sqrt(p * (1 - p) / trials)


def _sem(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def check_theorem1(alpha: float, beta: float, tol: float = 1e-12) -> VerdictReport:
    """Exact-rate construction: zero parity gap and change mass |alpha - beta|."""
    params = fp.build_params(alpha, beta)
    gap = fp.analytic_sp_gap(params, alpha, beta)
    change = sum(fp.prediction_change_rates(params, alpha, beta))
    excess = abs(change - abs(alpha - beta))
    return VerdictReport(
        "theorem1",
        bound=tol,
        statistic=max(gap, excess),
        slack=0.0,
        passed=gap <= tol and excess <= tol,
        details={"alpha": alpha, "beta": beta, "gap": gap, "change_sum": change},
    )


def mc_group_rates(
    params: fp.PostProcessParams, alpha: float, beta: float, draws: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Simulate ``draws`` points per group with Bernoulli base outputs and
    return the empirical post-processed positive rates."""
    rates = []
    for g, p in ((0, alpha), (1, beta)):
        base = rng.random(draws) < p
        s = rng.random(draws)
        out = fp.apply_postprocessing(params, base, np.full(draws, g), s)
        rates.append(float(out.mean()))
    return rates[0], rates[1]


def theorem1_suite(
    pairs: int = 1000, mc_pairs: int = 5, mc_draws: int = 1_000_000, seed: int = 0, tol: float = 1e-12
) -> VerdictReport:
    """Exact identities on random (alpha, beta) pairs, plus Monte Carlo agreement
    of simulated group rates with the closed forms (3 binomial sigma)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    ab = rng.random((pairs, 2))
    worst = 0.0
    failures = 0
    for alpha, beta in ab:
        rep = check_theorem1(float(alpha), float(beta), tol)
        worst = max(worst, rep.statistic)
        failures += not rep.passed
    mc_worst_z = 0.0
    for alpha, beta in ab[:mc_pairs]:
        params = fp.build_params(float(alpha), float(beta))
        expected = fp.acceptance_rates(params, float(alpha), float(beta))
        observed = mc_group_rates(params, float(alpha), float(beta), mc_draws, rng)
        for e, o in zip(expected, observed):
            sd = math.sqrt(max(e * (1 - e), 1e-300) / mc_draws)
            mc_worst_z = max(mc_worst_z, abs(o - e) / sd)
    return VerdictReport(
        "theorem1",
        bound=tol,
        statistic=worst,
        slack=0.0,
        passed=failures == 0 and mc_worst_z <= 3.0,
        trials=pairs,
        seed=seed,
        details={"identity_failures": failures, "mc_pairs": mc_pairs, "mc_draws": mc_draws, "mc_max_z": mc_worst_z},
    )


def mc_fairness_theorem2(cfg: TrialConfig, ledger: NoiseLedger | None = None) -> VerdictReport:
    """Frequency with which the parity gap exceeds the high-probability bound."""
    ledger = ledger or run_trials(cfg)
    bound = cfg.hp_bound
    freq = float(np.mean(ledger.gap > bound))
    level = cfg.eta0 + cfg.eta1
    slack = _binomial_slack(level, cfg.trials)
    bad_proj = ledger.projection_violations()
    return VerdictReport(
        "theorem2-fairness",
        bound=bound,
        statistic=freq,
        slack=slack,
        passed=freq <= level + slack and bad_proj == 0,
        trials=cfg.trials,
        seed=cfg.seed,
        details={
            "level": level,
            "violation_ci95": _wilson(freq, cfg.trials),
            "mean_gap": float(ledger.gap.mean()),
            "max_gap": float(ledger.gap.max()),
            "projection_violations": bad_proj,
        },
    )


def mc_utility_theorem2(cfg: TrialConfig, ledger: NoiseLedger | None = None) -> VerdictReport:
    """Frequency with which change mass exceeds err* (at the trial's own gap) plus 5/2 of the bound."""
    ledger = ledger or run_trials(cfg)
    bound = cfg.hp_bound
    err = np.array([fp.err_star(cfg.alpha, cfg.beta, g) for g in ledger.gap])
    freq = float(np.mean(ledger.change_sum > err + 2.5 * bound))
    level = cfg.eta0 + cfg.eta1
    slack = _binomial_slack(level, cfg.trials)
    return VerdictReport(
        "theorem2-utility",
        bound=2.5 * bound,
        statistic=freq,
        slack=slack,
        passed=freq <= level + slack and ledger.projection_violations() == 0,
        trials=cfg.trials,
        seed=cfg.seed,
        details={
            "level": level,
            "violation_ci95": _wilson(freq, cfg.trials),
            "mean_excess": float(np.mean(ledger.change_sum - err)),
            "max_excess": float(np.max(ledger.change_sum - err)),
        },
    )


def mc_expectation_prop2(cfg: TrialConfig, ledger: NoiseLedger | None = None) -> VerdictReport:
    """Mean parity gap and mean excess change mass against the in-expectation bounds."""
    ledger = ledger or run_trials(cfg)
    bound = cfg.mean_bound
    err = np.array([fp.err_star(cfg.alpha, cfg.beta, g) for g in ledger.gap])
    excess = ledger.change_sum - err
    mean_gap, sem_gap = float(ledger.gap.mean()), _sem(ledger.gap)
    mean_excess, sem_excess = float(excess.mean()), _sem(excess)
    gap_ok = mean_gap <= bound + 3 * sem_gap
    excess_ok = mean_excess <= 2.5 * bound + 3 * sem_excess
    return VerdictReport(
        "prop2",
        bound=bound,
        statistic=mean_gap,
        slack=3 * sem_gap,
        passed=gap_ok and excess_ok and ledger.projection_violations() == 0,
        trials=cfg.trials,
        seed=cfg.seed,
        details={
            "gap_pass": gap_ok,
            "excess_bound": 2.5 * bound,
            "mean_excess": mean_excess,
            "excess_slack": 3 * sem_excess,
            "excess_pass": excess_ok,
        },
    )


def laplace_tail_check(scale: float, eta: float, trials: int, rng: np.random.Generator) -> VerdictReport:
    """P(|L| >= log(1/eta) * scale) equals eta for L ~ Lap(scale); compare within 4 sigma."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    threshold = math.log(1 / eta) * scale
    draws = rng.laplace(0.0, scale, trials)
    freq = float(np.mean(np.abs(draws) >= threshold))
    slack = _binomial_slack(eta, trials, k=4.0)
    return VerdictReport(
        "laplace-tail",
        bound=eta,
        statistic=freq,
        slack=slack,
        passed=abs(freq - eta) <= slack,
        trials=trials,
        details={"scale": scale, "threshold": threshold, "mean_abs": float(np.mean(np.abs(draws)))},
    )


def laplace_mean_abs_check(scale: float, trials: int, rng: np.random.Generator, rel_tol: float = 0.02) -> VerdictReport:
    """E|L| = scale for L ~ Lap(scale)."""
    draws = rng.laplace(0.0, scale, trials)
    m = float(np.mean(np.abs(draws)))
    return VerdictReport(
        "laplace-mean-abs",
        bound=scale,
        statistic=m,
        slack=rel_tol * scale,
        passed=abs(m - scale) <= rel_tol * scale,
        trials=trials,
    )


def laplace_suite(
    scale: float = 0.02, etas=(0.5, 0.1, 0.05, 0.01), trials: int = 100_000, seed: int = 0
) -> VerdictReport:
    rng = np.random.Generator(np.random.PCG64(seed))
    mean_rep = laplace_mean_abs_check(scale, trials, rng)
    tails = [laplace_tail_check(scale, eta, trials, rng) for eta in etas]
    worst = max(tails, key=lambda r: abs(r.statistic - r.bound) / max(r.slack, 1e-300))
    return VerdictReport(
        "laplace-tail",
        bound=worst.bound,
        statistic=worst.statistic,
        slack=worst.slack,
        passed=mean_rep.passed and all(r.passed for r in tails),
        trials=trials,
        seed=seed,
        details={
            "mean_abs": mean_rep.statistic,
            "mean_abs_pass": mean_rep.passed,
            "tails": {str(r.bound): {"freq": r.statistic, "slack": r.slack, "pass": r.passed} for r in tails},
        },
    )


def err_star_lp_oracle(alpha: float, beta: float, gamma: float, grid_resolution: int = 10_000) -> float:
    """Brute-force min of |alpha - a| + |beta - b| over target rates (a, b) on a
    grid of [0, 1]^2 with |a - b| <= gamma.

    Every a on the grid is enumerated; for each, the best grid b inside the
    feasible window is found directly (the objective is unimodal in b).
    """
    if grid_resolution < 100:
        raise ValueError("grid_resolution must be at least 100")
    R = grid_resolution
    ka = np.arange(R + 1)
    a = ka / R
    lo = np.clip(np.ceil((a - gamma) * R - 1e-9), 0, R)
    hi = np.clip(np.floor((a + gamma) * R + 1e-9), 0, R)
    kb = np.clip(np.round(beta * R), lo, hi)
    cand = [kb]
    # the rounded target may sit on the wrong side; check both neighbours
    cand.append(np.clip(kb - 1, lo, hi))
    cand.append(np.clip(kb + 1, lo, hi))
    cost = np.min([np.abs(alpha - a) + np.abs(beta - k / R) for k in cand], axis=0)
    return float(cost.min())


def err_star_flip_lp(alpha: float, beta: float, gamma: float, support: int = 10) -> float:
    """Solve the prediction-change LP directly over per-point acceptance probabilities.

    Each group is a ``support``-point uniform distribution whose base classifier
    labels a fraction of mass alpha (resp. beta) positive (the boundary point is
    split to hit the rate exactly).
    """
    def group(rate):
        # masses of base-positive and base-negative points
        w = np.full(support, 1 / support)
        pos = np.zeros(support)
        mass = rate
        for i in range(support):
            take = min(w[i], mass)
            pos[i] = take
            mass -= take
        neg = w - pos
        return np.concatenate([pos, neg]), np.concatenate([np.ones(support), np.zeros(support)])

    w0, h0 = group(alpha)
    w1, h1 = group(beta)
    m = 2 * support
    # variables: acceptance probability t_i for each (point, base label) cell of both groups
    # change = sum w (1 - t) on base-positive cells + sum w t on base-negative cells
    c = np.concatenate([np.where(h0 == 1, -w0, w0), np.where(h1 == 1, -w1, w1)])
    const = float(w0[h0 == 1].sum() + w1[h1 == 1].sum())
    rate_diff = np.concatenate([w0, -w1])
    A_ub = np.vstack([rate_diff, -rate_diff])
    b_ub = np.array([gamma, gamma])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(0, 1)] * (2 * m), method="highs")
    if not res.success:
        raise RuntimeError(f"LP failed: {res.message}")
    return float(res.fun + const)


def err_star_oracle_suite(
    triples: int = 50, grid_resolution: int = 10_000, seed: int = 0, tol: float = 2e-4
) -> VerdictReport:
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for alpha, beta, gamma in rng.random((triples, 3)):
        gamma *= abs(alpha - beta) * 1.5
        closed = fp.err_star(alpha, beta, gamma)
        worst = max(worst, abs(closed - err_star_lp_oracle(alpha, beta, gamma, grid_resolution)))
    return VerdictReport(
        "err-star-oracle",
        bound=tol,
        statistic=worst,
        slack=0.0,
        passed=worst <= tol,
        trials=triples,
        seed=seed,
        details={"grid_resolution": grid_resolution},
    )


def tv_gap_identity_check(
    alpha: float, beta: float, trials: int = 200, samples: int = 2000, seed: int = 0
) -> VerdictReport:
    """For binary outputs the distance between base and post-processed rates never
    exceeds the probability that the two disagree.

    Trials alternate one-sided flip patterns (where equality holds) and
    two-sided ones (strict inequality whenever both flip directions occur).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = -math.inf
    strict = one_sided_equal = 0
    for t in range(trials):
        for p in (alpha, beta):
            base = rng.random(samples) < p
            f10, f01 = rng.random(2) * 0.5
            if t % 2 == 0:
                f01 = 0.0
            u = rng.random(samples)
            post = np.where(base, u >= f10, u < f01)
            tv = abs(base.mean() - post.mean())
            disagree = np.mean(base != post)
            worst = max(worst, tv - disagree)
            if t % 2 == 0:
                one_sided_equal += math.isclose(tv, disagree, abs_tol=1e-12)
            else:
                strict += tv < disagree
    return VerdictReport(
        "tv-identity",
        bound=0.0,
        statistic=float(worst),
        slack=1e-12,
        passed=worst <= 1e-12,
        trials=trials,
        seed=seed,
        details={"one_sided_equalities": one_sided_equal, "two_sided_strict": strict},
    )


def _wilson(p: float, n: int, z: float = 1.96) -> tuple[float, float]:
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


SUITES = (
    "theorem1",
    "theorem2-fairness",
    "theorem2-utility",
    "prop2",
    "laplace-tail",
    "err-star-oracle",
    "tv-identity",
)


def run_verify(suite: str, cfg: TrialConfig | None = None, prop2_trials: int = 100_000) -> list[VerdictReport]:
    """Run one named suite, or all of them with ``suite="all"``."""
    cfg = cfg or TrialConfig()
    names = SUITES if suite == "all" else (suite,)
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite {unknown[0]!r}; choose from {', '.join(SUITES + ('all',))}")
    ledger = None
    reports = []
    for name in names:
        if name == "theorem1":
            reports.append(theorem1_suite(seed=cfg.seed))
        elif name in ("theorem2-fairness", "theorem2-utility"):
            ledger = ledger or run_trials(cfg)
            fn = mc_fairness_theorem2 if name == "theorem2-fairness" else mc_utility_theorem2
            reports.append(fn(cfg, ledger))
        elif name == "prop2":
            reports.append(mc_expectation_prop2(replace(cfg, trials=max(cfg.trials, prop2_trials))))
        elif name == "laplace-tail":
            reports.append(laplace_suite(scale=cfg.scales[0], seed=cfg.seed))
        elif name == "err-star-oracle":
            reports.append(err_star_oracle_suite(seed=cfg.seed))
        elif name == "tv-identity":
            reports.append(tv_gap_identity_check(cfg.alpha, cfg.beta, seed=cfg.seed))
    return reports
