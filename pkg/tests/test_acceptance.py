"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (and immediately with ``-s``).
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import dataset_path
from dpfair import accountant as acc
from dpfair import verify as vf
from dpfair.accountant import GaussianMechanismSpec, PrivacyBudget, basic_compose
from dpfair.experiment import ExperimentConfig, run_experiment

RESULTS: list[str] = []


def record(num: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {num:>2}: {title} -- {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_c01_theorem1_identities():
    rep, secs = timed(vf.theorem1_suite, pairs=1000, mc_pairs=5, mc_draws=1_000_000, seed=0)
    d = rep.details
    ok = rep.passed and rep.statistic <= 1e-12 and d["mc_max_z"] <= 3 and secs < 30
    record(1, "exact-rate parity identities", ok,
           f"max identity error {rep.statistic:.2e}, MC max z {d['mc_max_z']:.2f}, {secs:.1f}s")


@pytest.fixture(scope="module")
def default_ledger():
    return timed(vf.run_trials, vf.TrialConfig())


def test_c02_theorem2_fairness(default_ledger):
    ledger, t_ledger = default_ledger
    cfg = vf.TrialConfig()
    rep, secs = timed(vf.mc_fairness_theorem2, cfg, ledger)
    secs += t_ledger
    ok = (rep.passed and abs(rep.bound - 0.11983) < 1e-5 and rep.statistic <= 0.10 + rep.slack
          and cfg.trials == 10_000 and secs < 10)
    record(2, "high-probability parity bound", ok,
           f"bound {rep.bound:.5f}, violation freq {rep.statistic:.4f} <= {0.10 + rep.slack:.4f}, {secs:.1f}s")


def test_c03_theorem2_utility(default_ledger):
    ledger, t_ledger = default_ledger
    rep, secs = timed(vf.mc_utility_theorem2, vf.TrialConfig(), ledger)
    secs += t_ledger
    ok = rep.passed and rep.statistic <= 0.10 + rep.slack and secs < 30
    record(3, "high-probability change-mass bound", ok,
           f"violation freq {rep.statistic:.4f} <= {0.10 + rep.slack:.4f} at err*+{rep.bound:.4f}, {secs:.1f}s")


def test_c04_prop2_expectation():
    rep, secs = timed(vf.mc_expectation_prop2, vf.TrialConfig(trials=100_000))
    d = rep.details
    gap_ok = rep.statistic <= 0.04 + rep.slack
    exc_ok = d["mean_excess"] <= 0.10 + d["excess_slack"]
    ok = gap_ok and exc_ok and rep.passed and secs < 60
    record(4, "in-expectation bounds", ok,
           f"mean gap {rep.statistic:.4f} <= {0.04 + rep.slack:.4f}, mean excess {d['mean_excess']:.4f} "
           f"<= {0.10 + d['excess_slack']:.4f}, {secs:.1f}s")


def test_c05_laplace():
    rep = vf.laplace_suite(scale=0.02, etas=(0.5, 0.1, 0.05, 0.01), trials=100_000, seed=0)
    d = rep.details
    ok = rep.passed and abs(d["mean_abs"] / 0.02 - 1) <= 0.02 and all(t["pass"] for t in d["tails"].values())
    tails = ", ".join(f"eta={k}: {v['freq']:.4f}" for k, v in d["tails"].items())
    record(5, "Laplace mechanism", ok, f"E|L|/scale {d['mean_abs'] / 0.02:.4f}; {tails}")


def test_c06_err_star_oracle():
    rep = vf.err_star_oracle_suite(triples=50, grid_resolution=10_000, seed=0, tol=2e-4)
    record(6, "err* oracle equivalence", rep.passed and rep.statistic <= 2e-4,
           f"max |closed form - grid oracle| {rep.statistic:.2e} over 50 triples")


def test_c07_composition():
    total = basic_compose([PrivacyBudget(1.45, 5e-6), PrivacyBudget(1.45, 5e-6),
                           PrivacyBudget(0.05, 0), PrivacyBudget(0.05, 0)])
    record(7, "Composition arithmetic", total.epsilon == 3.0 and total.delta == 1e-5,
           f"({total.epsilon!r}, {total.delta!r})")


# group sizes of the seed-0 train split; same values the pipeline trains on
CALIBRATED = [
    ((7341, 15270), 4.4, 50), ((7341, 15270), 2.08, 50), ((7341, 15270), 4.0, 50), ((7341, 15270), 1.94, 50),
    ((9001, 5999), 6.2, 50), ((9001, 5999), 3.46, 100), ((9001, 5999), 5.7, 50), ((9001, 5999), 3.24, 100),
]


def test_c08_accountant_sanity():
    sigmas, steps, qs = (1.0, 2.0, 4.0), (50, 200, 800), (0.02, 0.05, 0.14)
    mono = True
    for name, f in acc.ACCOUNTANTS.items():
        grid = {k: f(GaussianMechanismSpec(k[0], k[2], k[1]), 1e-5) for k in itertools.product(sigmas, steps, qs)}
        for (s, t, q), e in grid.items():
            i, j, k = sigmas.index(s), steps.index(t), qs.index(q)
            mono &= i == 2 or grid[sigmas[i + 1], t, q] <= e
            mono &= j == 2 or grid[s, steps[j + 1], q] >= e
            mono &= k == 2 or grid[s, t, qs[k + 1]] >= e
            mono &= f(GaussianMechanismSpec(s, q, t), 5e-6) >= e
    worst_ratio = 0.0
    for sizes, sigma, epochs in CALIBRATED:
        for n in sizes:
            spec = GaussianMechanismSpec.for_training(sigma, n, 1024, epochs)
            r, g = acc.rdp_epsilon(spec, 5e-6), acc.gdp_epsilon(spec, 5e-6)
            worst_ratio = max(worst_ratio, max(r, g) / min(r, g))
    worst_resid = 0.0
    for s, t, q in itertools.product(sigmas, steps, qs):
        spec = GaussianMechanismSpec(s, q, t)
        eps = acc.gdp_epsilon(spec, 1e-5)
        worst_resid = max(worst_resid, abs(acc.gdp_delta(eps, acc.gdp_mu(spec)) - 1e-5))
    ok = mono and worst_ratio <= 1.30 and worst_resid <= 1e-12
    record(8, "Accountant sanity", ok,
           f"monotone={mono}, worst rdp/gdp ratio {worst_ratio:.3f}, bisection residual {worst_resid:.1e}")


def _experiment(path):
    if not dataset_path(ExperimentConfig.from_json(path).dataset).is_file():
        pytest.fail(f"dataset for {path} is missing")
    return run_experiment(ExperimentConfig.from_json(path))


@pytest.fixture(scope="module")
def adult_report():
    return timed(_experiment, "configs/adult_eps3_moments.json")


@pytest.fixture(scope="module")
def credit_report():
    return timed(_experiment, "configs/credit_card_eps9_moments.json")


def test_c09_adult_end_to_end(adult_report):
    rep, secs = adult_report
    c = rep.config
    setup_ok = (c["dpsgd"][0]["noise_multiplier"] == 4.4 and c["target_epsilon"] == 3.0
                and c["eps2"] == c["eps3"] == 0.05 and len(rep.repetitions) == 10)
    ok = setup_ok and abs(rep.mean_accuracy - 0.7754) <= 0.02 and rep.mean_sp_gap <= 0.03
    record(9, "End-to-end Adult (eps=3, sigma=4.4)", ok,
           f"mean accuracy {rep.mean_accuracy:.4f} (target 0.7754 +- 0.02), mean SP gap {rep.mean_sp_gap:.4f} "
           f"<= 0.03, {secs:.0f}s")


def test_c10_credit_end_to_end(credit_report):
    rep, secs = credit_report
    c = rep.config
    setup_ok = (c["dpsgd"][0]["noise_multiplier"] == 3.46 and c["dpsgd"][0]["epochs"] == 100
                and c["target_epsilon"] == 9.0 and len(rep.repetitions) == 10)
    ok = setup_ok and abs(rep.mean_accuracy - 0.7951) <= 0.02 and rep.mean_sp_gap <= 0.02
    record(10, "End-to-end Credit Card (eps=9, sigma=3.46)", ok,
           f"mean accuracy {rep.mean_accuracy:.4f} (target 0.7951 +- 0.02), mean SP gap {rep.mean_sp_gap:.4f} "
           f"<= 0.02, {secs:.0f}s")


def test_c11_structural_fairness(adult_report, credit_report):
    runs = [r for rep, _ in (adult_report, credit_report) for r in rep.repetitions]
    applicable = [r for r in runs if r["pre_gap"] > 0.05]
    bad = [r["rep"] for r in applicable if not r["sp_gap"] < r["pre_gap"]]
    worst = max((r["sp_gap"] / r["pre_gap"] for r in applicable), default=math.nan)
    record(11, "Structural fairness effect", not bad and len(runs) == 20,
           f"{len(applicable)}/{len(runs)} runs with |a-b| > 0.05; all post gaps smaller "
           f"(worst ratio {worst:.3f})" if not bad else f"violations in reps {bad}")
