"""Spin-moment predictions three ways, and the finite-(R, C) cavity estimator.

The closed form, the cascade average and the correlated-SDE average should
agree; the cavity estimator approaches them as R and C grow.
"""

from spinlab.model import fixture_f1
from spinlab.seeding import derive_rng
from spinlab.spinlaw import MomentSpec, f_rce_estimate, predict_moments

if __name__ == "__main__":
    xi, zeta = fixture_f1()
    spec = MomentSpec.single(2)
    print("closed form:", f"{predict_moments(xi, zeta, spec, 'closed-form').estimate:.6f}")
    for method in ("rpc", "sde"):
        rep = predict_moments(xi, zeta, spec, method, {"n_rep": 4000, "K": 512, "dt": 1e-3}, derive_rng(4, 0))
        print(f"{method:11s}: {rep.estimate:.4f} +- {rep.se:.4f}")

    for C, R in ((2.0, 10.0), (6.0, 100.0)):
        rep = f_rce_estimate(xi, zeta, spec, C, R, 1024, derive_rng(4, 1), n_rep=300)
        print(f"cavity estimator C={C:g}, R={R:g}: {rep.estimate:.4f} +- {rep.se:.4f}")
