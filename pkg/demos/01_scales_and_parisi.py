"""Scale constants and the Parisi solution for a one-step fixture.

Builds the pure 2-spin mixture with a one-step overlap law, prints the scale
constants, then compares the finite-difference Parisi solver against the
closed-form quadratic solution.
"""

import numpy as np

from spinlab.model import fixture_f1, scale_constants
from spinlab.parisi import cole_hopf_quadratic, fd_gap, solve_pde_fd, u_x_eval

if __name__ == "__main__":
    xi, zeta = fixture_f1()
    c = scale_constants(xi, zeta)
    print(f"atoms {zeta.atoms}, cdf {zeta.cdf}")
    print(f"S_zeta = {c.s_zeta:.6f}, S_hat = {c.s_hat:.6f}, S_p = {np.round(c.s_seq, 6)}")

    exact = cole_hopf_quadratic(xi, zeta)
    print(f"closed form u_x(q*, 1) = {u_x_eval(exact, zeta.q_star, 1.0):.6f}")

    for n in (100, 400, 2000):
        sol = solve_pde_fd(xi, zeta, n, None, n)
        print(f"FD grid {n}x{n}: sup gap on |x| <= 3 is {fd_gap(xi, zeta, sol):.2e}")
