import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinlab.errors import ValidationError
from spinlab.model import random_fixture
from spinlab.tilted import (conditional_params, endpoint_variance, kernel_moments_quadrature, moment_bound,
                            sample_chain, second_moment_exact, submartingale_test)


def test_conditional_params_f1(f1):
    xi, zeta = f1
    mean, var = conditional_params(xi, zeta, 0, 0.0)
    assert mean == 0.0
    assert var == pytest.approx(1.1625 * 0.25 / 1.0875, abs=1e-15)
    assert var == pytest.approx(0.267241, abs=1e-6)


def test_conditional_params_replica_symmetric(rs):
    xi, zeta = rs
    assert conditional_params(xi, zeta, 0, 0.0) == (0.0, pytest.approx(0.75, abs=1e-15))


def test_conditional_params_rejects_bad_level(f1):
    with pytest.raises(ValidationError):
        conditional_params(*f1, 3, 0.0)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_kernel_conjugacy(seed, z_sum):
    rng = np.random.default_rng(seed)
    xi, zeta = random_fixture(rng)
    k = int(rng.integers(0, zeta.r + 1))
    mean, var = conditional_params(xi, zeta, k, z_sum)
    mass, mq, vq = kernel_moments_quadrature(xi, zeta, k, z_sum)
    assert abs(mass - 1.0) <= 1e-8
    assert abs(mean - mq) <= 1e-8
    assert abs(var - vq) <= 1e-8


def test_second_moment_exact_values(f1, rs):
    # hand recursion: 0.25 * 1.1625 / 1.0875, then r**2 * that + r * 0.25 with r = 1.4125 / 1.1625
    first = 0.25 * 1.1625 / 1.0875
    ratio = 1.4125 / 1.1625
    assert np.allclose(second_moment_exact(*f1), [first, ratio**2 * first + ratio * 0.25], atol=1e-15)
    assert np.allclose(second_moment_exact(*f1), [0.267241, 0.698307], atol=1e-6)
    assert endpoint_variance(*f1) == pytest.approx(0.267241, abs=1e-6)
    assert np.allclose(second_moment_exact(*rs), [0.75])
    assert endpoint_variance(*rs) == 0.0


def test_second_moment_matches_sampling(f1, rng):
    chain = sample_chain(*f1, 400_000, rng)
    m2 = (chain.partial**2).mean(axis=0)
    se = (chain.partial**2).std(axis=0) / np.sqrt(chain.partial.shape[0])
    assert np.all(np.abs(m2 - second_moment_exact(*f1)) <= 3 * se)
    assert np.array_equal(chain.endpoint, chain.partial[:, 0])
    stopped = sample_chain(*f1, 10, rng, include_final=False)
    with pytest.raises(ValidationError):
        stopped.terminal


def test_moment_bound_f1(f1):
    b = moment_bound(*f1)
    assert b.bound == pytest.approx(5.0625, abs=1e-12)
    assert np.all(second_moment_exact(*f1) <= b.per_level)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_moment_bound_random_fixtures(seed):
    xi, zeta = random_fixture(np.random.default_rng(seed))
    b = moment_bound(xi, zeta)
    assert np.all(second_moment_exact(xi, zeta) <= b.per_level * (1 + 1e-12))
    assert b.bound <= b.cap


def test_submartingale_small(f1, rng):
    rep = submartingale_test(*f1, 50_000, rng)
    assert rep.passed
    assert set(np.unique(rep.level)) == {0, 1}
