"""Cavity and local-field diffusions driven by tree-correlated Brownian motion.

Replicas ``i`` and ``j`` share their driving increment on ``[t, t + dt)`` when
``t < q_ij`` and move independently afterwards. The cavity field ``Z`` is the
driving noise itself (variance increments ``xi'(t + dt) - xi'(t)``); the local
field adds the drift ``xi''(t) zeta([0, t]) u_x(t, X)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMisaligned, ValidationError
from .model import MixtureFunction, RsbMeasure, mixture_eval, scale_at
from .parisi import ParisiQuadratic, PdeSolution, cole_hopf_quadratic, u_x_eval
from .tilted import endpoint_variance, second_moment_exact

ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class UltrametricMatrix:
    """Symmetric overlap matrix with constant diagonal ``q_*`` and ultrametric entries."""

    q: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        d = q.shape[0]
        if q.shape != (d, d):
            raise ValidationError("overlap matrix must be square")
        if not np.array_equal(q, q.T):
            raise ValidationError("overlap matrix must be symmetric")
        diag = np.diag(q)
        if np.any(diag != diag[0]):
            raise ValidationError("overlap matrix diagonal must be constant (q_*)")
        if np.any(q > diag[0]) or np.any(q < 0.0):
            raise ValidationError("overlaps must lie in [0, q_*]")
        lower = np.minimum(q[:, :, None], q[None, :, :])  # min(q_ik, q_kj) at [i, k, j]
        if np.any(q[:, None, :] < lower - 1e-15):
            raise ValidationError("overlap matrix is not ultrametric")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def single(cls, q_star: float) -> "UltrametricMatrix":
        return cls([[q_star]])

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def q_star(self) -> float:
        return float(self.q[0, 0])

    def check_atoms(self, zeta: RsbMeasure) -> None:
        vals = np.unique(self.q)
        hit = np.min(np.abs(vals[:, None] - zeta.atoms[None, :]), axis=1)
        if np.any(hit > 1e-12):
            raise ValidationError("overlap entries must be atoms of zeta")
        if abs(self.q_star - zeta.q_star) > 1e-12:
            raise ValidationError("overlap diagonal must equal q_* of zeta")

    def blocks(self, t: float) -> np.ndarray:
        """Partition labels ``0..B-1`` of replicas that share increments just after ``t``."""
        share = self.q > t
        first = np.where(share.any(axis=1), np.argmax(share, axis=1), np.arange(self.d))
        return np.unique(first, return_inverse=True)[1]


@dataclass(frozen=True)
class FieldPaths:
    """Recorded values: ``z[n, p, i]``, ``x[n, p, i]`` at ``times[n]`` for path ``p``, replica ``i``."""

    times: np.ndarray
    z: np.ndarray
    x: np.ndarray
    dt: float

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(np.abs(self.times - t) <= ALIGN_TOL)
        if idx.size == 0:
            raise ValidationError(f"time {t} was not recorded")
        return self.z[idx[0]], self.x[idx[0]]


def _grid_index(t: float, dt: float) -> int:
    n = int(round(t / dt))
    if abs(n * dt - t) > ALIGN_TOL:
        raise GridMisaligned(f"time {t!r} is not a multiple of dt={dt!r}")
    return n


def simulate(xi: MixtureFunction, zeta: RsbMeasure, Q: UltrametricMatrix | np.ndarray, dt: float,
             n_paths: int, rng: np.random.Generator,
             parisi_solution: ParisiQuadratic | PdeSolution | None = None,
             t_end: float | None = None, record: str = "atoms") -> FieldPaths:
    """Euler-Maruyama for the local field with exact-variance shared noise.

    The grid is ``0, dt, 2 dt, ...`` up to ``t_end`` (default ``q_*``). Every atom
    and every overlap entry must be a grid point. With ``record="atoms"`` only
    times ``0``, the atoms and ``t_end`` are kept; ``record="all"`` keeps every step.
    """
    if not isinstance(Q, UltrametricMatrix):
        Q = UltrametricMatrix(Q)
    Q.check_atoms(zeta)
    if dt <= 0.0:
        raise ValidationError("dt must be positive")
    t_end = zeta.q_star if t_end is None else float(t_end)
    if not zeta.q_star <= t_end <= 1.0:
        raise ValidationError("t_end must lie in [q_*, 1]")
    n_steps = _grid_index(t_end, dt)
    atom_idx = {_grid_index(q, dt): q for q in zeta.atoms}
    for q in np.unique(Q.q):
        _grid_index(q, dt)
    if record not in ("atoms", "all"):
        raise ValidationError("record must be 'atoms' or 'all'")
    sol = cole_hopf_quadratic(xi, zeta) if parisi_solution is None else parisi_solution

    times = np.arange(n_steps + 1) * dt
    for n, q in atom_idx.items():
        if n <= n_steps:
            times[n] = q
    times[-1] = t_end
    keep = set(range(n_steps + 1)) if record == "all" else {0, n_steps, *[n for n in atom_idx if n <= n_steps]}
    keep = sorted(keep)

    d = Q.d
    z = np.zeros((n_paths, d))
    x = np.zeros((n_paths, d))
    rec_z = np.zeros((len(keep), n_paths, d))
    rec_x = np.zeros_like(rec_z)
    slot = {n: i for i, n in enumerate(keep)}

    dxi = np.diff(mixture_eval(xi, times, 1))
    drift_coef = mixture_eval(xi, times, 2) * zeta.cdf_at(times)
    quadratic = isinstance(sol, ParisiQuadratic)
    if quadratic:
        inv_scale = 1.0 / (1.0 + np.asarray(scale_at(xi, zeta, times)))

    labels_cache: dict[int, np.ndarray] = {}
    for n in range(n_steps):
        key = int(np.searchsorted(np.unique(Q.q), times[n], side="right"))
        labels = labels_cache.get(key)
        if labels is None:
            labels = labels_cache[key] = Q.blocks(times[n])
        n_blocks = int(labels.max()) + 1
        noise = np.sqrt(max(dxi[n], 0.0)) * rng.standard_normal((n_paths, n_blocks))
        dz = noise[:, labels]
        if drift_coef[n] != 0.0:
            ux = x * inv_scale[n] if quadratic else u_x_eval(sol, times[n], x)
            x = x + drift_coef[n] * ux * dt + dz
        else:
            x = x + dz
        z = z + dz
        if n + 1 in slot:
            rec_z[slot[n + 1]] = z
            rec_x[slot[n + 1]] = x
    return FieldPaths(times[keep], rec_z, rec_x, float(dt))


@dataclass(frozen=True)
class EndpointComparison:
    time: float
    exact_moments: np.ndarray  # E[X^p], p = 1..4
    sample_moments: np.ndarray
    se: np.ndarray
    allowance: float
    n_se: float

    @property
    def gaps(self) -> np.ndarray:
        return self.sample_moments - self.exact_moments

    @property
    def second_moment_passed(self) -> bool:
        return bool(abs(self.gaps[1]) <= self.n_se * self.se[1] + self.allowance)

    @property
    def odd_moments_passed(self) -> bool:
        return bool(np.all(np.abs(self.gaps[[0, 2]]) <= self.n_se * self.se[[0, 2]] + 1e-15))


@dataclass(frozen=True)
class GirsanovReport:
    at_q_star: EndpointComparison
    at_one: EndpointComparison | None

    @property
    def passed(self) -> bool:
        ok = self.at_q_star.second_moment_passed
        if self.at_one is not None:
            ok = ok and self.at_one.second_moment_passed
        return ok


def _compare(sample: np.ndarray, var: float, time: float, allowance: float, n_se: float) -> EndpointComparison:
    powers = sample[:, None] ** np.arange(1, 5)
    exact = np.array([0.0, var, 0.0, 3.0 * var**2])
    n = sample.size
    se = powers.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(4)
    return EndpointComparison(time, exact, powers.mean(axis=0), se, allowance, n_se)


def girsanov_endpoint_check(xi: MixtureFunction, zeta: RsbMeasure, n_paths: int, dt: float,
                            rng: np.random.Generator, continue_to_one: bool = True,
                            n_se: float = 3.0) -> GirsanovReport:
    """Moments of the single-replica local field against the exact tilted chain.

    At ``q_*`` the reference is the chain stopped at ``q_*``; with
    ``continue_to_one`` the diffusion is run on to ``t = 1`` and compared with
    the chain after its final step. Both laws are centered Gaussians, so the
    exact moments follow from the variance.
    """
    t_end = 1.0 if continue_to_one else zeta.q_star
    paths = simulate(xi, zeta, UltrametricMatrix.single(zeta.q_star), dt, n_paths, rng, t_end=t_end)
    allowance = 2.0 * dt * mixture_eval(xi, 1.0, 2)
    _, x_star = paths.at(zeta.q_star)
    at_star = _compare(x_star[:, 0], endpoint_variance(xi, zeta), zeta.q_star, allowance, n_se)
    at_one = None
    if continue_to_one:
        _, x_one = paths.at(1.0)
        at_one = _compare(x_one[:, 0], float(second_moment_exact(xi, zeta)[-1]), 1.0, allowance, n_se)
    return GirsanovReport(at_star, at_one)
