import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinlab.errors import BudgetExceeded, ValidationError
from spinlab.finiten import (build, cavity_cov_diff, estimate_overlap_hist, estimate_spin_moments,
                             hamiltonian_covariance_mc, initial_state, mcmc_sweep, run_sweeps, sample_chain)
from spinlab.model import MixtureFunction
from spinlab.spinlaw import MomentSpec


def _energy_einsum(model, s):
    out = 0.0
    for p, t in model.tensors.items():
        val = t
        for _ in range(p):
            val = val @ s
        out += model.coef[p] * val
    return out


@pytest.mark.parametrize("beta", [{2: 0.3}, {3: 0.2}, {4: 0.1}, {2: 0.2, 3: 0.1, 4: 0.05}])
def test_energy_matches_tensor_contraction(beta, rng):
    model = build(12, beta, seed=4)
    s = rng.standard_normal(12)
    s *= np.sqrt(12) / np.linalg.norm(s)
    assert model.energy(s) == pytest.approx(_energy_einsum(model, s), rel=1e-12, abs=1e-12)


def test_build_validation_and_budget():
    with pytest.raises(ValidationError):
        build(1, {2: 0.2})
    with pytest.raises(ValidationError):
        build(8, {5: 0.2})
    with pytest.raises(BudgetExceeded):
        build(64, {4: 0.1}, entry_budget=1000)
    a = build(8, {2: 0.2}, seed=1)
    b = build(8, {2: 0.2, 3: 0.1}, seed=1)
    assert np.array_equal(a.tensors[2], b.tensors[2])


def test_sweeps_keep_sphere_and_energy_cache(rng):
    model = build(16, {2: 0.3, 3: 0.2, 4: 0.1}, seed=2)
    state = initial_state(model, rng)
    state, samples = run_sweeps(model, state, 300, rng, thin=50)
    assert samples.shape == (6, 16)
    assert np.linalg.norm(state.sigma) ** 2 == pytest.approx(16, rel=1e-10)
    assert state.energy == pytest.approx(model.energy(state.sigma), rel=1e-9, abs=1e-9)
    assert 0 < state.acceptance_rate < 1
    one = mcmc_sweep(model, state, rng)
    assert one.sweeps == state.sweeps + 1


def test_zero_temperature_limit_accepts_everything(rng):
    model = build(32, {}, seed=0)
    state, samples = sample_chain(model, 3000, 100, rng, thin=5)
    assert state.acceptance_rate == 1.0
    _, other = sample_chain(model, 3000, 100, rng, thin=5)
    r2 = np.mean((np.sum(samples * other, axis=1) / 32) ** 2)
    assert abs(r2 - 1 / 32) <= 0.006


@given(st.floats(-0.9, 0.9))
@settings(max_examples=5, deadline=None)
def test_hamiltonian_covariance(overlap):
    N = 16
    sigma = np.zeros(N)
    sigma[0] = np.sqrt(N)
    rho = np.zeros(N)
    rho[0] = overlap * np.sqrt(N)
    rho[1] = np.sqrt(1 - overlap**2) * np.sqrt(N)
    beta = {2: 0.3, 3: 0.2}
    cov, se = hamiltonian_covariance_mc(N, beta, sigma, rho, 1500, seed=9)
    xi = MixtureFunction.from_dict(beta)
    assert abs(cov - xi(overlap)) <= 3.5 * se


def test_high_temperature_moments_small(rng):
    models = [build(24, {2: 0.2}, seed=s) for s in range(3)]
    rep = estimate_spin_moments(models, MomentSpec.single(2), 2000, 200, 1, rng)
    assert abs(rep.estimate - 1.0) <= max(3 * rep.se, 0.1)
    hist = estimate_overlap_hist(models, 2000, 200, 2, 10, rng)
    assert hist.probs.sum() == pytest.approx(1.0)
    assert hist.edges[0] == -1.0 and hist.edges[-1] == 1.0


def test_cavity_cov_diff_values():
    xi = MixtureFunction.pure(2, 0.5)
    d = cavity_cov_diff(xi, [1.0], [1.0], 10.0)
    assert d.difference == pytest.approx(0.25 / 404, abs=1e-15)
    d2 = cavity_cov_diff(xi, [1.0], [1.0], 20.0)
    assert d2.difference / d.difference == pytest.approx(101 / 401, abs=1e-15)
    with pytest.raises(ValidationError):
        cavity_cov_diff(xi, [2.0], [1.0], 10.0, C=1.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_cavity_cov_diff_series_and_bound(seed):
    rng = np.random.default_rng(seed)
    beta = {int(p): float(rng.uniform(0, 1 / p**2)) for p in range(2, 6)}
    xi = MixtureFunction.from_dict(beta)
    n = int(rng.integers(1, 5))
    C = float(rng.uniform(0.5, 3))
    R = float(rng.uniform(C * C + 0.1, 50))
    s, t = rng.uniform(-C, C, n), rng.uniform(-C, C, n)
    d = cavity_cov_diff(xi, s, t, R, C)
    series = sum(0.5 * p * b * b for p, b in beta.items()) * np.sum(s**2 * t**2) / (4 * (R * R + 1))
    assert abs(d.difference - series) <= 1e-12
    assert d.difference <= d.bound
