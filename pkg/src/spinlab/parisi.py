"""Parisi initial value problem: exact quadratic Cole-Hopf form and a finite-difference solver.

The terminal value problem is

    u_t + (xi''(t) / 2) (u_xx + zeta([0, t]) u_x**2) = 0,   u(1, x) = x**2 / (2 (1 + S_zeta)),

solved backward from ``t = 1``. For a finite-RSB measure the solution stays
quadratic in ``x`` at every time, which gives an exact reference for the grid
solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .errors import OutOfWindow, QuadratureOverflow, UnstableScheme, ValidationError
from .model import MixtureFunction, RsbMeasure, mixture_eval, s_sequence, scale_at


@dataclass(frozen=True)
class ParisiQuadratic:
    """Levels ``(q_p, C_p, S_p)`` with ``u(q_p, x) = C_p + x**2 / (2 (1 + S_p))``.

    ``times`` includes the terminal level ``q_{r+1} = 1`` where ``C = 0``.
    """

    times: np.ndarray
    consts: np.ndarray
    scales: np.ndarray
    xi: MixtureFunction = field(repr=False)
    zeta: RsbMeasure = field(repr=False)

    def scale(self, t):
        return scale_at(self.xi, self.zeta, t)

    def const(self, t: float) -> float:
        """``C(t)`` between atoms, from a partial Cole-Hopf layer."""
        t = float(t)
        if t >= 1.0:
            return 0.0
        j = self.zeta.level_of(t)
        m = self.zeta.cdf[j]
        s_next = self.scales[j + 1]
        if m > 0.0:
            return float(self.consts[j + 1] + np.log((1.0 + s_next) / (1.0 + self.scale(t))) / (2.0 * m))
        var = mixture_eval(self.xi, self.times[j + 1], 1) - mixture_eval(self.xi, t, 1)
        return float(self.consts[j + 1] + var / (2.0 * (1.0 + s_next)))

    def u(self, t: float, x):
        x = np.asarray(x, dtype=float)
        return self.const(t) + x**2 / (2.0 * (1.0 + self.scale(t)))

    def u_x(self, t: float, x):
        x = np.asarray(x, dtype=float)
        return x / (1.0 + self.scale(t))


@dataclass(frozen=True)
class PdeSolution:
    """Grid solution; rows of ``u`` and ``u_x`` follow ``t_grid``, columns ``x_grid``."""

    t_grid: np.ndarray
    x_grid: np.ndarray
    u: np.ndarray
    u_x: np.ndarray

    @property
    def x_window(self) -> float:
        return float(self.x_grid[-1])

    def u_xx(self) -> np.ndarray:
        """Interior second differences at every stored time."""
        dx = self.x_grid[1] - self.x_grid[0]
        return (self.u[:, 2:] - 2.0 * self.u[:, 1:-1] + self.u[:, :-2]) / dx**2


def cole_hopf_quadratic(xi: MixtureFunction, zeta: RsbMeasure) -> ParisiQuadratic:
    """Closed-form finite-RSB solution built level by level from ``t = 1``."""
    s = s_sequence(xi, zeta)
    q = zeta.atoms_ext
    dxi = np.diff(mixture_eval(xi, q, 1))
    c = np.zeros(zeta.r + 2)
    for p in range(zeta.r, -1, -1):
        m = zeta.cdf[p]
        if m > 0.0:
            c[p] = c[p + 1] + np.log((1.0 + s[p + 1]) / (1.0 + s[p])) / (2.0 * m)
        else:
            c[p] = c[p + 1] + dxi[p] / (2.0 * (1.0 + s[p + 1]))
    return ParisiQuadratic(q, c, s, xi, zeta)


def cole_hopf_layer(xi: MixtureFunction, zeta: RsbMeasure, u_next: Callable[[np.ndarray], np.ndarray],
                    j: int, gh_points: int = 64, t: float | None = None) -> Callable:
    """One Cole-Hopf layer from ``q_{j+1}`` back to ``q_j`` (or to ``t`` inside the layer).

    Returns ``x -> (1/m_j) log E exp(m_j u_next(x + g sqrt(var)))`` with ``g``
    standard normal, evaluated by Gauss-Hermite quadrature in log space. For
    ``m_j = 0`` the plain Gaussian average is returned.
    """
    if gh_points < 16:
        raise ValidationError("gh_points must be >= 16")
    if not 0 <= j <= zeta.r:
        raise ValidationError(f"level j must lie in [0, {zeta.r}]")
    q = zeta.atoms_ext
    start = q[j] if t is None else float(t)
    if not q[j] <= start <= q[j + 1]:
        raise ValidationError("t must lie inside the layer [q_j, q_{j+1}]")
    var = mixture_eval(xi, q[j + 1], 1) - mixture_eval(xi, start, 1)
    if var < 0.0:
        raise ValidationError("negative variance increment")
    m = float(zeta.cdf[j])
    nodes, weights = np.polynomial.hermite.hermgauss(gh_points)
    shifts = np.sqrt(2.0 * var) * nodes
    log_w = np.log(weights / np.sqrt(np.pi))

    def layer(x):
        x = np.asarray(x, dtype=float)
        vals = np.asarray(u_next(x[..., None] + shifts), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureOverflow("Cole-Hopf integrand is not finite; narrow the window")
        if m == 0.0:
            return vals @ np.exp(log_w)
        out = logsumexp(m * vals + log_w, axis=-1) / m
        if not np.all(np.isfinite(out)):
            raise QuadratureOverflow("Cole-Hopf layer overflowed")
        return out

    return layer


def time_grid(zeta: RsbMeasure, t_steps: int, t_end: float = 1.0) -> np.ndarray:
    """Grid on ``[0, t_end]`` containing every atom below ``t_end``.

    Steps are spread over the atom segments in proportion to their length,
    with at least one step per nonempty segment.
    """
    knots = np.unique(np.append(zeta.atoms[zeta.atoms < t_end], t_end))
    lengths = np.diff(knots)
    if t_steps < lengths.size:
        raise ValidationError("t_steps smaller than the number of atom segments")
    counts = np.maximum(1, np.floor(t_steps * lengths / lengths.sum()).astype(int))
    while counts.sum() < t_steps:
        counts[np.argmax(lengths / counts)] += 1
    while counts.sum() > t_steps:
        counts[np.argmax(np.where(counts > 1, counts, 0))] -= 1
    pieces = [np.linspace(a, b, n + 1)[:-1] for a, b, n in zip(knots[:-1], knots[1:], counts)]
    return np.append(np.concatenate(pieces), t_end)


def _grad(u: np.ndarray, dx: float, kappa: float) -> np.ndarray:
    """Central ``u_x``; at the edges the ghost node carries ``u_xx = kappa``."""
    g = np.empty_like(u)
    g[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
    g[0] = (u[1] - u[0]) / dx - 0.5 * dx * kappa
    g[-1] = (u[-1] - u[-2]) / dx + 0.5 * dx * kappa
    return g


def solve_pde_fd(xi: MixtureFunction, zeta: RsbMeasure, t_steps: int = 2000,
                 x_window: float | None = None, x_steps: int = 2000) -> PdeSolution:
    """Backward Crank-Nicolson solve with a Heun treatment of ``u_x**2``.

    The window edges use a ghost node whose second difference is pinned to the
    analytic curvature ``1 / (1 + S(t))`` of the quadratic solution.
    """
    s = s_sequence(xi, zeta)
    min_window = 6.0 * np.sqrt(1.0 + s[-1])
    if x_window is None:
        x_window = float(np.ceil(min_window))
    if x_window < min_window:
        raise ValidationError(f"x_window must be >= {min_window:.4g} (6 terminal standard deviations)")
    if x_steps < 4 or t_steps < 1:
        raise ValidationError("need x_steps >= 4 and t_steps >= 1")

    x = np.linspace(-x_window, x_window, x_steps + 1)
    x = 0.5 * (x - x[::-1])  # exactly antisymmetric nodes
    dx = x[1] - x[0]
    t = time_grid(zeta, t_steps)
    n_t = t.size

    kappa = 1.0 / (1.0 + np.asarray(scale_at(xi, zeta, t)))
    u = np.empty((n_t, x.size))
    ux = np.empty_like(u)
    u[-1] = x**2 / (2.0 * (1.0 + s[-1]))
    ux[-1] = _grad(u[-1], dx, kappa[-1])

    ab = np.zeros((3, x.size))
    for n in range(n_t - 2, -1, -1):
        dtau = t[n + 1] - t[n]
        t_mid = 0.5 * (t[n] + t[n + 1])
        a = 0.5 * mixture_eval(xi, t_mid, 2)
        m = zeta.cdf_at(t[n])
        k_mid = 0.5 * (kappa[n] + kappa[n + 1])
        cur = u[n + 1]
        g_cur = ux[n + 1]

        if a * 2.0 * m * np.max(np.abs(g_cur)) * dtau / dx > 1.0:
            raise UnstableScheme(
                f"explicit gradient term violates the step bound at t={t[n]:.4g}; refine t_steps")

        lam = 0.5 * dtau * a / dx**2
        ab[0, 2:] = -lam
        ab[1, 1:-1] = 1.0 + 2.0 * lam
        ab[2, :-2] = -lam
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0

        explicit = cur.copy()
        explicit[1:-1] += lam * (cur[2:] - 2.0 * cur[1:-1] + cur[:-2])
        explicit[[0, -1]] += dtau * a * k_mid

        nl_cur = dtau * a * m * g_cur**2
        pred = solve_banded((1, 1), ab, explicit + nl_cur)
        g_pred = _grad(pred, dx, kappa[n])
        nl_pred = dtau * a * m * g_pred**2
        new = solve_banded((1, 1), ab, explicit + 0.5 * (nl_cur + nl_pred))
        new = 0.5 * (new + new[::-1])  # even terminal data: remove rounding asymmetry

        u[n] = new
        ux[n] = _grad(new, dx, kappa[n])

    return PdeSolution(t, x, u, ux)


def _time_interp(sol: PdeSolution, t: float, rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t must lie in [0, 1]")
    if np.any(np.abs(x) > sol.x_window):
        raise OutOfWindow(f"|x| exceeds the grid window {sol.x_window:.4g}")
    tg = sol.t_grid
    i = int(np.clip(np.searchsorted(tg, t, side="right") - 1, 0, tg.size - 2))
    w = (t - tg[i]) / (tg[i + 1] - tg[i])
    lo = np.interp(x, sol.x_grid, rows[i])
    if w <= 1e-14:
        return lo
    hi = np.interp(x, sol.x_grid, rows[i + 1])
    return (1.0 - w) * lo + w * hi


def u_x_eval(solution: ParisiQuadratic | PdeSolution, t: float, x):
    """``u_x(t, x)``: exact for the quadratic form, interpolated on a grid."""
    x_arr = np.asarray(x, dtype=float)
    if isinstance(solution, ParisiQuadratic):
        if not 0.0 <= t <= 1.0:
            raise ValidationError("t must lie in [0, 1]")
        out = solution.u_x(t, x_arr)
    else:
        out = _time_interp(solution, float(t), solution.u_x, x_arr)
    return float(out) if np.ndim(out) == 0 else out


def u_eval(solution: ParisiQuadratic | PdeSolution, t: float, x):
    x_arr = np.asarray(x, dtype=float)
    if isinstance(solution, ParisiQuadratic):
        out = solution.u(t, x_arr)
    else:
        out = _time_interp(solution, float(t), solution.u, x_arr)
    return float(out) if np.ndim(out) == 0 else out


def fd_gap(xi: MixtureFunction, zeta: RsbMeasure, sol: PdeSolution, x_max: float = 3.0) -> float:
    """Sup-norm gap between a grid solution and the closed form at atom times and ``t = 1``."""
    exact = cole_hopf_quadratic(xi, zeta)
    mask = np.abs(sol.x_grid) <= x_max
    gap = 0.0
    for tq in exact.times:
        i = int(np.argmin(np.abs(sol.t_grid - tq)))
        if abs(sol.t_grid[i] - tq) > 1e-12:
            continue
        diff = sol.u[i, mask] - exact.u(tq, sol.x_grid[mask])
        gap = max(gap, float(np.max(np.abs(diff))))
    return gap
