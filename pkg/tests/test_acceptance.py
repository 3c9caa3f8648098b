"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the pytest terminal summary (see conftest.py).
Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from spinlab.cascade import bs_invariance_stat
from spinlab.finiten import build, cavity_cov_diff, estimate_overlap_hist, estimate_spin_moments
from spinlab.localfield import girsanov_endpoint_check
from spinlab.model import MixtureFunction, RsbMeasure, fixture_f1, random_fixture, scale_constants, s_zeta_integral
from spinlab.parisi import fd_gap, solve_pde_fd
from spinlab.seeding import derive_rng
from spinlab.spinlaw import MomentSpec, frce_scan, predict_moments, rho_moment
from spinlab.tilted import (conditional_params, kernel_moments_quadrature, moment_bound, sample_chain,
                            second_moment_exact, submartingale_test)

SEED = 2026
RESULTS: list[str] = []


def report(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def test_01_scale_identities():
    rng = derive_rng(SEED, 1)
    start = time.perf_counter()
    worst = np.zeros(3)
    for _ in range(100):
        xi, zeta = random_fixture(rng)
        c = scale_constants(xi, zeta)
        worst = np.maximum(worst, [abs(c.s_zeta - s_zeta_integral(xi, zeta)),
                                   abs(c.s_hat - (c.s_zeta - xi(1.0, 1) + xi(zeta.q_star, 1))),
                                   abs(c.s_seq[zeta.r] - c.s_hat)])
    elapsed = time.perf_counter() - start
    ok = worst[0] <= 1e-8 and worst[1] <= 1e-12 and worst[2] <= 1e-12 and elapsed < 1.0
    report(1, "scale-constant identities", ok,
           f"max gaps {worst[0]:.2e}, {worst[1]:.2e}, {worst[2]:.2e}; {elapsed:.2f} s")


def test_02_parisi_fd_vs_closed_form():
    xi, zeta = fixture_f1()
    start = time.perf_counter()
    sol = solve_pde_fd(xi, zeta, 2000, None, 2000)
    gap = fd_gap(xi, zeta, sol, x_max=3.0)
    elapsed = time.perf_counter() - start
    report(2, "Parisi closed form vs FD", gap <= 1e-3 and elapsed < 60, f"sup gap {gap:.2e}; {elapsed:.1f} s")


def test_03_kernel_conjugacy():
    rng = derive_rng(SEED, 3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        xi, zeta = random_fixture(rng)
        k = int(rng.integers(0, zeta.r + 1))
        z_sum = float(rng.normal(0.0, 1.5))
        mean, var = conditional_params(xi, zeta, k, z_sum)
        mass, mq, vq = kernel_moments_quadrature(xi, zeta, k, z_sum)
        worst = max(worst, abs(mean - mq), abs(var - vq), abs(mass - 1.0))
    elapsed = time.perf_counter() - start
    report(3, "kernel conjugacy", worst <= 1e-8 and elapsed < 10, f"max gap {worst:.2e}; {elapsed:.1f} s")


def test_04_second_moments_and_bound():
    xi, zeta = fixture_f1()
    start = time.perf_counter()
    chain = sample_chain(xi, zeta, 10**6, derive_rng(SEED, 4))
    sq = chain.partial**2
    m2 = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(sq.shape[0])
    target = np.array([0.267241, 0.698296])
    within = bool(np.all(np.abs(m2 - target) <= 3 * se))
    rng = derive_rng(SEED, 40)
    bound_ok = bool(np.all(second_moment_exact(xi, zeta) <= moment_bound(xi, zeta).per_level))
    for _ in range(100):
        xf, zf = random_fixture(rng)
        bound_ok &= bool(np.all(second_moment_exact(xf, zf) <= moment_bound(xf, zf).per_level * (1 + 1e-12)))
    elapsed = time.perf_counter() - start
    report(4, "tilted-chain second moments", within and bound_ok and elapsed < 30,
           f"MC {m2[0]:.5f}+-{se[0]:.5f}, {m2[1]:.5f}+-{se[1]:.5f}; bound holds={bound_ok}; {elapsed:.1f} s")


def test_05_submartingale():
    xi, zeta = fixture_f1()
    rep = submartingale_test(xi, zeta, 10**6, derive_rng(SEED, 5), n_se=3.0)
    z = rep.bin_gap / np.where(rep.bin_se > 0, rep.bin_se, np.inf)
    report(5, "submartingale", rep.passed, f"levels {sorted(set(rep.level.tolist()))}, min z-score {z.min():.1f}")


def test_06_girsanov():
    xi, zeta = fixture_f1()
    start = time.perf_counter()
    rep = girsanov_endpoint_check(xi, zeta, 10**5, 1e-3, derive_rng(SEED, 6), continue_to_one=True)
    elapsed = time.perf_counter() - start
    a, b = rep.at_q_star, rep.at_one
    report(6, "Girsanov equivalence", rep.passed and elapsed < 120,
           f"at q*: {a.sample_moments[1]:.5f}+-{a.se[1]:.5f} vs {a.exact_moments[1]:.6f}; "
           f"at 1: {b.sample_moments[1]:.5f}+-{b.se[1]:.5f} vs {b.exact_moments[1]:.6f}; "
           f"allowance {a.allowance:.0e}; {elapsed:.1f} s")


def test_07_bolthausen_sznitman():
    a = bs_invariance_stat(0.5, 1.0, 4096, 10**4, derive_rng(SEED, 7))
    b = bs_invariance_stat(0.9, 0.5, 4096, 10**4, derive_rng(SEED, 70))
    report(7, "Bolthausen-Sznitman invariance", a.ks_max <= 0.03 and b.ks_max <= 0.03,
           f"KS (m=0.5,t=1) {a.ks_max_weight:.4f}/{a.ks_mean_field:.4f}; "
           f"(m=0.9,t=0.5) {b.ks_max_weight:.4f}/{b.ks_mean_field:.4f}")


def test_08_rho_closed_form_vs_quadrature():
    rng = derive_rng(SEED, 8)
    worst = 0.0
    for _ in range(50):
        xi, zeta = random_fixture(rng)
        f = rng.uniform(-5, 5, 20)
        for e in range(7):
            gap = np.abs(rho_moment(f, xi, zeta, e) - rho_moment(f, xi, zeta, e, "quadrature"))
            worst = max(worst, float(gap.max()))
    report(8, "spin-law closed form vs quadrature", worst <= 1e-8, f"max gap {worst:.2e}")


@pytest.mark.slow
def test_09_limit_scans():
    xi, zeta = fixture_f1()
    start = time.perf_counter()
    res = frce_scan(xi, zeta, MomentSpec.single(2), SEED)
    elapsed = time.perf_counter() - start
    r_gaps = ", ".join(f"{p.gap:+.4f}" for p in res.r_scan)
    c_gaps = ", ".join(f"{p.gap:+.4f}" for p in res.c_scan)
    report(9, "cavity-estimator limit scans", res.passed and elapsed < 600,
           f"target {res.target:.6f}; R gaps [{r_gaps}]; C gaps [{c_gaps}]; se ~{res.final.se:.4f}; "
           f"trends {res.r_trend_ok}/{res.c_trend_ok}, final {res.final_ok}; {elapsed:.0f} s")


@pytest.mark.slow
def test_10_finite_n_high_temperature():
    start = time.perf_counter()
    N, reps, sweeps, burnin = 64, 16, 20000, 2000
    models = [build(N, {2: 0.2}, seed=int(derive_rng(SEED, 10, d).integers(2**31))) for d in range(reps)]
    m1 = estimate_spin_moments(models, MomentSpec.single(1), sweeps, burnin, 1, derive_rng(SEED, 11))
    m2 = estimate_spin_moments(models, MomentSpec.single(2), sweeps, burnin, 1, derive_rng(SEED, 12))
    rs = predict_moments(MixtureFunction.pure(2, 0.2), RsbMeasure.replica_symmetric(), MomentSpec.single(2),
                         "closed-form").estimate
    free = [build(N, {}, seed=d) for d in range(reps)]
    hist = estimate_overlap_hist(free, sweeps, burnin, 2, 40, derive_rng(SEED, 13))
    elapsed = time.perf_counter() - start
    ok1 = abs(m1.estimate) <= 3 * m1.se
    ok2 = abs(m2.estimate - rs) <= max(3 * m2.se, 0.05)
    ok3 = abs(hist.second_moment - 1 / N) <= 3 * hist.second_moment_se
    report(10, "finite-N high temperature", ok1 and ok2 and ok3 and elapsed < 600,
           f"<s1> {m1.estimate:+.4f}+-{m1.se:.4f}; <s1^2> {m2.estimate:.4f}+-{m2.se:.4f} vs {rs:g}; "
           f"E R12^2 {hist.second_moment:.6f}+-{hist.second_moment_se:.6f} vs {1 / N:.6f}; {elapsed:.0f} s")


def test_11_cavity_covariance():
    rng = derive_rng(SEED, 14)
    worst, bound_ok = 0.0, True
    for _ in range(100):
        beta = {int(p): float(rng.uniform(0, 1 / p**2)) for p in range(2, 7)}
        xi = MixtureFunction.from_dict(beta)
        n = int(rng.integers(1, 6))
        C = float(rng.uniform(0.2, 3.0))
        R = float(rng.uniform(C * C * 1.01, 100.0))
        s, t = rng.uniform(-C, C, n), rng.uniform(-C, C, n)
        d = cavity_cov_diff(xi, s, t, R, C)
        series = sum(0.5 * p * b * b * np.sum(s**2 * t**2) for p, b in beta.items()) / (4 * (R * R + 1))
        worst = max(worst, abs(d.difference - series))
        bound_ok &= d.difference <= d.bound
    report(11, "cavity covariance", worst <= 1e-12 and bound_ok, f"max series gap {worst:.1e}; bound holds={bound_ok}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
