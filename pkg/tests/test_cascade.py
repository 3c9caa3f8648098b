import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinlab.cascade import bs_invariance_stat, sample_cascade, sample_fields, sample_pd
from spinlab.errors import BudgetExceeded, ValidationError
from spinlab.model import MixtureFunction, RsbMeasure


def test_pd_weights_normalized_and_sorted(rng):
    w = sample_pd(0.5, 256, rng)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(w) <= 0)
    assert np.array_equal(sample_pd(0.0, 256, rng), [1.0])
    with pytest.raises(ValidationError):
        sample_pd(1.0, 10, rng)


def test_pd_second_moment_identity(rng):
    # E sum w^2 = 1 - m for Poisson-Dirichlet(m)
    vals = np.array([np.sum(sample_pd(0.5, 1024, rng) ** 2) for _ in range(4000)])
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - 0.5) <= 3 * se + 0.01


def test_cascade_f1_structure(f1, rng):
    _, zeta = f1
    tree = sample_cascade(zeta, 4096, rng)
    assert tree.n_leaves == 4096
    assert tree.weights.sum() == pytest.approx(1.0, abs=1e-12)
    ov = tree.overlap_matrix(np.arange(5))
    assert np.all(np.diag(ov) == 0.5)
    assert np.all(ov[~np.eye(5, dtype=bool)] == 0.0)


def test_cascade_two_level_overlaps(rng):
    zeta = RsbMeasure([0.0, 0.3, 0.7], [0.2, 0.6, 1.0])
    tree = sample_cascade(zeta, 8, rng)
    assert tree.n_leaves == 64
    assert tree.overlap(0, 1) == 0.3 and tree.overlap(0, 8) == 0.0 and tree.overlap(5, 5) == 0.7
    m = tree.overlap_matrix(np.arange(64))
    # ultrametric: q_ij >= min(q_ik, q_kj)
    assert np.all(m[:, None, :] >= np.minimum(m[:, :, None], m[None, :, :]) - 1e-15)


def test_cascade_skips_degenerate_levels(rng):
    zeta = RsbMeasure([0.0, 0.4], [0.0, 1.0])
    tree = sample_cascade(zeta, 16, rng)
    assert tree.n_leaves == 1 and tree.weights[0] == pytest.approx(1.0)


def test_cascade_budget(rng):
    zeta = RsbMeasure([0.0, 0.3, 0.7], [0.2, 0.6, 1.0])
    with pytest.raises(BudgetExceeded):
        sample_cascade(zeta, 2048, rng)


def test_field_variances_f1(f1, rng):
    xi, zeta = f1
    tree = sample_cascade(zeta, 64, rng)
    f = sample_fields(tree, xi, 4000, rng)
    z, y = f.z.ravel(), f.y.ravel()
    # leaves share no edge within a copy only when their ancestors differ; use copies for independence
    zc, yc = f.z[0], f.y[0]
    assert abs(zc.var() - 0.25) <= 3 * 0.25 * np.sqrt(2 / zc.size)
    assert abs(yc.var() - 0.125) <= 3 * 0.125 * np.sqrt(2 / yc.size)
    assert z.size == y.size


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_field_covariance_follows_overlap(seed):
    rng = np.random.default_rng(seed)
    xi = MixtureFunction.from_dict({2: 0.4, 3: 0.1})
    zeta = RsbMeasure([0.0, 0.3, 0.7], [0.2, 0.6, 1.0])
    tree = sample_cascade(zeta, 3, rng)
    f = sample_fields(tree, xi, 20000, rng)
    a, b = 0, int(rng.integers(0, tree.n_leaves))
    q = tree.overlap(a, b)
    cov = np.mean(f.z[a] * f.z[b])
    assert abs(cov - xi(q, 1)) <= 5 * xi(0.7, 1) * np.sqrt(2 / 20000)


def test_bs_statistic_small(rng):
    rep = bs_invariance_stat(0.5, 1.0, 512, 1000, rng)
    assert rep.ks_max <= 0.07
    with pytest.raises(ValidationError):
        bs_invariance_stat(0.5, 1.0, 512, 100, rng)
