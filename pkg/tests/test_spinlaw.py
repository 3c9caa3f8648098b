import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spinlab.errors import ValidationError
from spinlab.model import MixtureFunction, RsbMeasure, random_fixture, s_zeta_discrete
from spinlab.spinlaw import (MomentReport, MomentSpec, denominator_tail_probe, f_rce_estimate, frce_scan,
                             gaussian_moment, log_moment_integrals, predict_moments, rho_moment)
from spinlab.tilted import endpoint_variance


def _rho_dblquad(f, xi, zeta, e):
    """Independent oracle: the two-variable density integrated by adaptive quadrature."""
    a = 1.0 + s_zeta_discrete(xi, zeta)
    v = xi(1.0, 1) - xi(zeta.q_star, 1)
    dens = lambda y, s: np.exp(-0.5 * a * s * s + s * y - (y - f) ** 2 / (2 * v))  # noqa: E731
    lim = 12.0
    num = integrate.dblquad(lambda y, s: s**e * dens(y, s), -lim, lim, -lim + f, lim + f, epsabs=1e-13)[0]
    den = integrate.dblquad(dens, -lim, lim, -lim + f, lim + f, epsabs=1e-13)[0]
    return num / den


def test_rho_values(f1, rs):
    assert rho_moment(0.0, *f1, 1) == 0.0
    assert rho_moment(1.0, *f1, 1) == pytest.approx(1 / 1.1625, abs=1e-15)
    assert rho_moment(0.0, *rs, 2) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("f,e", [(1.0, 1), (-0.7, 2), (2.0, 3), (0.3, 4)])
def test_rho_closed_form_against_dblquad(f1, f, e):
    assert rho_moment(f, *f1, e) == pytest.approx(_rho_dblquad(f, *f1, e), abs=1e-8)


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.integers(0, 6))
@settings(max_examples=60, deadline=None)
def test_rho_closed_form_against_tensor_quadrature(seed, f, e):
    xi, zeta = random_fixture(np.random.default_rng(seed))
    assert abs(rho_moment(f, xi, zeta, e) - rho_moment(f, xi, zeta, e, "quadrature")) <= 1e-8 * max(1, abs(f)) ** e


def test_gaussian_moment_small_cases():
    assert gaussian_moment(0.0, 2.0, 4) == pytest.approx(12.0)
    assert gaussian_moment(1.5, 0.0, 3) == pytest.approx(3.375)
    assert gaussian_moment(1.0, 1.0, 2) == pytest.approx(2.0)


def test_moment_spec_validation():
    assert MomentSpec([[1, 0], [0, 2]]).k == 2
    assert MomentSpec.from_json({"exponents": [[2]]}).n == 1
    assert MomentSpec([[1, 1]]).is_odd and not MomentSpec([[1], [1]]).is_odd
    with pytest.raises(ValidationError):
        MomentSpec([[-1]])
    with pytest.raises(ValidationError):
        MomentSpec([[0.5]])
    with pytest.raises(ValidationError):
        MomentReport(float("nan"), 0.0, "rpc")


def test_predict_closed_form_f1(f1):
    rep = predict_moments(*f1, MomentSpec.single(2), "closed-form")
    expected = 1 / 1.1625 + endpoint_variance(*f1) / 1.1625**2
    assert rep.estimate == pytest.approx(expected, abs=1e-15)
    assert rep.estimate == pytest.approx(1.057966, abs=1e-6)


def test_predict_replica_symmetric_is_one(rs, rng):
    rep = predict_moments(*rs, MomentSpec.single(2), "rpc", {"n_rep": 50}, rng)
    assert rep.estimate == pytest.approx(1.0, abs=1e-14) and rep.se == pytest.approx(0.0, abs=1e-14)


def test_predict_monte_carlo_methods_agree(f1, rng):
    target = predict_moments(*f1, MomentSpec.single(2), "closed-form").estimate
    for method in ("rpc", "sde"):
        rep = predict_moments(*f1, MomentSpec.single(2), method, {"n_rep": 2000, "K": 256, "dt": 1e-2}, rng)
        assert abs(rep.estimate - target) <= 3 * rep.se + 0.01
    odd = predict_moments(*f1, MomentSpec.single(1), "rpc", {"n_rep": 2000, "K": 256}, rng)
    assert abs(odd.estimate) <= 3 * odd.se


def test_predict_two_replicas_rpc_vs_sde(f1, rng):
    spec = MomentSpec([[1], [1]])
    a = predict_moments(*f1, spec, "rpc", {"n_rep": 3000, "K": 256}, rng)
    b = predict_moments(*f1, spec, "sde", {"n_rep": 3000, "K": 256, "dt": 1e-2}, rng)
    assert abs(a.estimate - b.estimate) <= 3 * np.hypot(a.se, b.se) + 0.01


def test_predict_needs_rng(f1):
    with pytest.raises(ValidationError):
        predict_moments(*f1, MomentSpec.single(2), "rpc")
    with pytest.raises(ValidationError):
        predict_moments(*f1, MomentSpec([[2], [2]]), "closed-form")


def test_log_moment_integrals_against_quad():
    quad2 = np.array([-0.6, -0.3])
    lin = np.array([0.4, -1.2])
    top, vals = log_moment_integrals(quad2, lin, 1e-3, 4.0, [0, 2])
    for i in range(2):
        for e in (0, 2):
            ref = integrate.quad(lambda s: s**e * np.exp(quad2[i] * s * s + lin[i] * s + 1e-3 * s**4), -4, 4,
                                 epsabs=1e-14, epsrel=1e-13)[0]
            assert vals[e][i] * np.exp(top[i]) == pytest.approx(ref, rel=1e-10)


def test_frce_odd_spec_vanishes(f1, rng):
    rep = f_rce_estimate(*f1, MomentSpec.single(1), 4.0, 20.0, 256, rng, n_rep=300)
    assert abs(rep.estimate) <= 3 * rep.se
    with pytest.raises(ValidationError):
        f_rce_estimate(*f1, MomentSpec.single(1), -1.0, 20.0, 256, rng, n_rep=3)


def test_frce_tilt_modes_agree_at_small_scale(f1):
    spec = MomentSpec.single(2)
    a = f_rce_estimate(*f1, spec, 3.0, 1.0, 1024, np.random.default_rng(1), n_rep=600, y_tilt="exact")
    b = f_rce_estimate(*f1, spec, 3.0, 1.0, 1024, np.random.default_rng(2), n_rep=600, y_tilt="explicit")
    assert abs(a.estimate - b.estimate) <= 3 * np.hypot(a.se, b.se) + 0.01


def test_frce_scan_shape(f1):
    res = frce_scan(*f1, MomentSpec.single(2), 3, R_values=(10.0, 20.0), C_values=(4.0,), K=256, n_rep=40)
    assert len(res.r_scan) == 2 and len(res.c_scan) == 1
    assert res.final is res.c_scan[-1]
    assert res.target == pytest.approx(1.057966, abs=1e-6)


def test_denominator_probe_trivial_cases(f1, rng):
    assert 0.0 <= denominator_tail_probe(*f1, 1.0, 2.0, 1.0, 50, rng, K=128) <= 1.0
    zero = MixtureFunction.zero()
    zeta = RsbMeasure([0.0, 0.5], [0.3, 1.0])
    # deterministic denominator sqrt(2 pi) (2 Phi(1) - 1) ~ 1.71 exceeds 1/L for L >= 1
    assert denominator_tail_probe(zero, zeta, 1.0, 2.0, 1.0, 20, rng, K=16) == 0.0
    with pytest.raises(ValidationError):
        denominator_tail_probe(*f1, 1.0, 2.0, 0.0, 5, rng)
