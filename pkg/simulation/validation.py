"""
Built-in invariant suite.

Each check draws seeded random instances, evaluates one property of the
filtering stack and returns a CheckResult. The `validate` subcommand prints
the results; the tests assert on the same functions.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from fog.perturbation import (
    covariance,
    delta_norm,
    eigen_perturb_rms,
    solve_delta,
    sym_eigenvalues,
    tol_f,
    trace_yty,
    triangle_chain,
    uniform_noise,
    uniform_variance,
)
from lms_filter.lms_core import FilterModel, lms_step
from simulation.sim_harness import SimConfig, run
from utils.errors import FedFilterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    trials: int
    detail: str = ""


def _random_data(rng, max_m=32, max_n=8):
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(1, max_n + 1))
    return rng.normal(0.0, rng.uniform(0.1, 10.0), size=(m, n))


def check_mirsky(rng, trials=200):
    """Spectrum RMS shift never exceeds ||A - A_hat||_F"""
    worst = -math.inf
    for _ in range(trials):
        data = _random_data(rng)
        noise = uniform_noise(rng, data.shape, rng.uniform(0.0, 2.0))
        a, a_hat = covariance(data), covariance(data + noise)
        scale = max(1.0, float(np.linalg.norm(a, "fro")))
        gap = (eigen_perturb_rms(sym_eigenvalues(a), sym_eigenvalues(a_hat)) - delta_norm(a, a_hat)) / scale
        worst = max(worst, gap)
    return CheckResult("mirsky", worst <= 1e-9, trials, f"max (rms - ||Delta||_F) / ||A||_F = {worst:.3g}")


def check_triangle_chain(rng, trials=200):
    """||Delta||_F <= ||Y^T W||/m + ||W^T Y||/m + ||W^T W||/m"""
    worst = -math.inf
    for _ in range(trials):
        data = _random_data(rng)
        noise = uniform_noise(rng, data.shape, rng.uniform(0.0, 2.0))
        lhs = delta_norm(covariance(data), covariance(data + noise))
        rhs = sum(triangle_chain(data, noise))
        worst = max(worst, lhs - rhs * (1.0 + 1e-12))
    return CheckResult("triangle_chain", worst <= 1e-12, trials, f"max slack violation {worst:.3g}")


def monte_carlo_delta_norm(rng, data, delta, draws=500):
    """Sample mean of ||Delta||_F under uniform filtering noise"""
    a = covariance(data)
    total = 0.0
    for _ in range(draws):
        total += delta_norm(a, covariance(data + uniform_noise(rng, data.shape, delta)))
    return total / draws


def check_bound(rng, settings=20, draws=500):
    """Monte-Carlo E(||Delta||_F) / n stays below Tol_F"""
    failures = 0
    worst = 0.0
    for _ in range(settings):
        data = _random_data(rng, max_m=24, max_n=6)
        m, n = data.shape
        delta = float(rng.uniform(0.01, 3.0))
        budget = tol_f(trace_yty(data), [uniform_variance(delta)] * n, m, n)
        mean = monte_carlo_delta_norm(rng, data, delta, draws) / n
        worst = max(worst, mean / budget)
        failures += mean > budget
    return CheckResult("bound_validity", failures == 0, settings,
                       f"{failures} violations, worst mean/Tol_F = {worst:.3f}")


def check_round_trip(rng, trials=100):
    """tol_f(solve_delta(T)) recovers T"""
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(1, 1000))
        n = int(rng.integers(1, 64))
        trace = float(10.0 ** rng.uniform(-3, 6))
        target = float(10.0 ** rng.uniform(-4, 3))
        delta = solve_delta(trace, m, n, target)
        back = tol_f(trace, [uniform_variance(delta)] * n, m, n)
        worst = max(worst, abs(back - target) / target)
    return CheckResult("round_trip", worst <= 1e-9, trials, f"max relative error {worst:.3g}")


def check_uniform_variance(rng, draws=1_000_000):
    """Empirical variance of Uniform[-delta, delta] matches delta^2 / 3"""
    delta = float(rng.uniform(0.5, 5.0))
    sample = uniform_noise(rng, draws, delta)
    expected = uniform_variance(delta)
    rel = abs(float(np.var(sample)) - expected) / expected
    return CheckResult("uniform_variance", rel <= 0.01, draws, f"relative error {rel:.3g}")


def _squared_error(weights, window, target):
    err = target - float(np.dot(weights, window))
    return err * err


def check_gradient(rng, trials=100, eps=1e-3):
    """The Widrow-Hoff update equals -alpha/2 times the finite-difference gradient of e^2"""
    worst = 0.0
    for _ in range(trials):
        tap_len = int(rng.integers(1, 9))
        weights = rng.normal(size=tap_len)
        window = rng.normal(size=tap_len)
        target = float(rng.normal())
        step = float(rng.uniform(0.001, 0.1))

        updated, _ = lms_step(FilterModel(weights, step), window, target)
        update = updated.weights - weights
        grad = np.empty(tap_len)
        for k in range(tap_len):
            bump = np.zeros(tap_len)
            bump[k] = eps
            grad[k] = (_squared_error(weights + bump, window, target)
                       - _squared_error(weights - bump, window, target)) / (2.0 * eps)
        expected = -0.5 * step * grad
        scale = max(float(np.linalg.norm(expected)), 1e-12)
        worst = max(worst, float(np.linalg.norm(update - expected)) / scale)
    return CheckResult("lms_gradient", worst <= 1e-6, trials, f"max relative error {worst:.3g}")


def check_end_to_end(seed, delta=0.5):
    """A short synthetic run keeps every suppressed sample inside the dead-band"""
    cfg = SimConfig(n_devices=4, delta=delta, seed=seed, samples_per_device=1024)
    try:
        metrics, _, _ = run(cfg)
    except FedFilterError as exc:
        return CheckResult("dead_band_sync", False, 1, str(exc))
    ok = metrics.max_abs_recon_error <= delta
    return CheckResult("dead_band_sync", ok, metrics.samples_total,
                       f"max suppressed error {metrics.max_abs_recon_error:.4g} <= delta {delta}")


def run_suite(seed=0):
    rng = np.random.default_rng(seed)
    return [
        check_mirsky(rng),
        check_triangle_chain(rng),
        check_bound(rng),
        check_round_trip(rng),
        check_uniform_variance(rng),
        check_gradient(rng),
        check_end_to_end(seed),
    ]


def print_summary(results):
    """Print one line per check; returns True when everything passed"""
    print("🔍 fedfilter Invariant Suite")
    print("=" * 40)
    for result in results:
        mark = "✅" if result.passed else "❌"
        print(f"{mark} {result.name}: {'OK' if result.passed else 'FAILED'} ({result.trials} trials)")
        if result.detail:
            print(f"   {result.detail}")
    passed = sum(r.passed for r in results)
    print("=" * 40)
    print(f"📊 Results: {passed}/{len(results)} checks passed")
    return passed == len(results)
