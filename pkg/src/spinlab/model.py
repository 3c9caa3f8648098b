"""Mixture functions, finite-RSB overlap measures and their scale constants.

The mixture function is ``xi(x) = sum_p beta_p**2 * x**p``. An overlap measure
with finitely many atoms ``0 = q_0 < ... < q_r = q_*`` is stored through its
CDF values ``m_k = zeta([0, q_k])``; the convention ``q_{r+1} = 1`` is used by
every level-indexed formula below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import NonPositiveScale, ValidationError

P_MAX_DEFAULT = 32
ATOM_TOL = 1e-12


@dataclass(frozen=True)
class MixtureFunction:
    """Coefficients ``beta_p`` for ``p = 2..p_max``.

    ``beta`` is indexed by degree: ``beta[p]`` is the coefficient of the
    ``p``-spin part, entries 0 and 1 are always zero.
    """

    beta: np.ndarray
    p_max: int = P_MAX_DEFAULT

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1 or beta.size != self.p_max + 1:
            raise ValidationError(
                f"beta must have length p_max + 1 = {self.p_max + 1}, got {beta.shape}")
        if np.any(beta[:2] != 0.0):
            raise ValidationError("beta_0 and beta_1 must vanish (xi(0) = xi'(0) = 0)")
        if not np.all(np.isfinite(beta)):
            raise ValidationError("beta coefficients must be finite")
        if np.any(beta < 0):
            raise ValidationError("beta_p must be nonnegative")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_dict(cls, coeffs: Mapping[int, float], p_max: int = P_MAX_DEFAULT,
                  require_decay: bool = False) -> "MixtureFunction":
        beta = np.zeros(p_max + 1)
        for p, value in coeffs.items():
            p = int(p)
            if p < 2:
                raise ValidationError(f"degree p={p} not allowed, need p >= 2")
            if p > p_max:
                raise ValidationError(f"degree p={p} exceeds p_max={p_max}")
            beta[p] = float(value)
        xi = cls(beta, p_max)
        if require_decay and not xi.satisfies_decay():
            raise ValidationError("coefficients violate beta_p <= 1/p^2")
        return xi

    @classmethod
    def pure(cls, p: int, beta_p: float, p_max: int = P_MAX_DEFAULT) -> "MixtureFunction":
        return cls.from_dict({p: beta_p}, p_max)

    @classmethod
    def zero(cls, p_max: int = P_MAX_DEFAULT) -> "MixtureFunction":
        return cls(np.zeros(p_max + 1), p_max)

    def to_dict(self) -> dict[int, float]:
        return {p: float(b) for p, b in enumerate(self.beta) if b != 0.0}

    def satisfies_decay(self) -> bool:
        """True when every coefficient obeys ``beta_p <= 1/p**2``."""
        p = np.arange(2, self.p_max + 1)
        return bool(np.all(self.beta[2:] <= 1.0 / p**2))

    @property
    def degrees(self) -> np.ndarray:
        return np.nonzero(self.beta)[0]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.beta)

    def __call__(self, x, order: int = 0):
        return mixture_eval(self, x, order)


def mixture_eval(xi: MixtureFunction, x, order: int = 0):
    """Evaluate ``xi``, ``xi'`` or ``xi''`` termwise at ``x`` in [-1, 1].

    Accepts scalars or arrays; returns the same shape.
    """
    if order not in (0, 1, 2):
        raise ValidationError(f"order must be 0, 1 or 2, got {order!r}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.abs(x_arr) > 1.0):
        raise ValidationError("mixture function is only defined on |x| <= 1")
    p = np.arange(xi.p_max + 1, dtype=float)
    b2 = xi.beta**2
    if order == 0:
        coef, powers = b2, p
    elif order == 1:
        coef, powers = b2 * p, p - 1
    else:
        coef, powers = b2 * p * (p - 1), p - 2
    keep = coef != 0.0
    coef, powers = coef[keep], powers[keep]
    out = np.sum(coef * x_arr[..., None] ** powers, axis=-1) if coef.size else np.zeros_like(x_arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RsbMeasure:
    """Finite-RSB overlap law: atoms ``q_0 = 0 < ... < q_r`` with CDF ``m_k``."""

    atoms: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        m = np.atleast_1d(np.asarray(self.cdf, dtype=float))
        if q.ndim != 1 or q.shape != m.shape or q.size == 0:
            raise ValidationError("atoms and cdf must be 1-D of equal nonzero length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(m))):
            raise ValidationError("atoms and cdf must be finite")
        if q[0] != 0.0:
            raise ValidationError("first atom must be q_0 = 0")
        if q[-1] > 1.0:
            raise ValidationError("atoms must lie in [0, 1]")
        if np.any(np.diff(q) <= ATOM_TOL):
            raise ValidationError("atoms must be strictly increasing (gap > 1e-12)")
        if m[0] < 0.0 or np.any(np.diff(m) < 0.0):
            raise ValidationError("cdf must be nondecreasing and nonnegative")
        if m[-1] != 1.0:
            raise ValidationError("cdf must reach 1 at the last atom q_*")
        q.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "atoms", q)
        object.__setattr__(self, "cdf", m)

    @classmethod
    def replica_symmetric(cls) -> "RsbMeasure":
        """The point mass at 0."""
        return cls([0.0], [1.0])

    @property
    def r(self) -> int:
        return self.atoms.size - 1

    @property
    def q_star(self) -> float:
        return float(self.atoms[-1])

    @property
    def weights(self) -> np.ndarray:
        """Point masses ``zeta({q_k})``."""
        return np.diff(self.cdf, prepend=0.0)

    @property
    def atoms_ext(self) -> np.ndarray:
        """Atoms with ``q_{r+1} = 1`` appended."""
        return np.append(self.atoms, 1.0)

    def cdf_at(self, t):
        """Right-continuous ``zeta([0, t])``."""
        idx = np.searchsorted(self.atoms, np.asarray(t, dtype=float), side="right") - 1
        out = np.where(idx >= 0, self.cdf[np.clip(idx, 0, None)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def level_of(self, t) -> int:
        """Index ``j`` with ``q_j <= t < q_{j+1}`` (``r`` for ``t >= q_*``)."""
        return int(np.searchsorted(self.atoms, float(t), side="right") - 1)


@dataclass(frozen=True)
class ScaleConstants:
    s_zeta: float
    s_hat: float
    s_seq: np.ndarray


def s_zeta_discrete(xi: MixtureFunction, zeta: RsbMeasure) -> float:
    """``sum_{i=1}^{r+1} [q_i xi'(q_i) - q_{i-1} xi'(q_{i-1})] m_{i-1}`` with ``q_{r+1} = 1``."""
    q = zeta.atoms_ext
    g = q * mixture_eval(xi, q, 1)
    return float(np.sum(np.diff(g) * zeta.cdf))


def s_zeta_integral(xi: MixtureFunction, zeta: RsbMeasure, quad_points: int = 64) -> float:
    """``int_0^1 zeta([0,l]) (l xi''(l) + xi'(l)) dl`` by Gauss-Legendre per constancy segment."""
    if quad_points < 64:
        raise ValidationError("quad_points must be >= 64")
    nodes, w = np.polynomial.legendre.leggauss(quad_points)
    q = zeta.atoms_ext
    total = 0.0
    for a, b, m in zip(q[:-1], q[1:], zeta.cdf):
        if m == 0.0:
            continue
        x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        f = x * mixture_eval(xi, x, 2) + mixture_eval(xi, x, 1)
        total += m * 0.5 * (b - a) * float(np.dot(w, f))
    return total


def s_hat(xi: MixtureFunction, zeta: RsbMeasure) -> float:
    """Renormalized scale at ``q_*``.

    ``xi'(q_*)(1 - q_*) + sum_{i=1}^r [q_i xi'(q_i) - q_{i-1} xi'(q_{i-1})] m_{i-1}``,
    with the sum taken over a running index.
    """
    q = zeta.atoms
    qs = zeta.q_star
    g = q * mixture_eval(xi, q, 1)
    return float(mixture_eval(xi, qs, 1) * (1.0 - qs) + np.sum(np.diff(g) * zeta.cdf[:-1]))


def s_sequence(xi: MixtureFunction, zeta: RsbMeasure) -> np.ndarray:
    """Levels ``S_0..S_{r+1}``: ``S_{r+1} = S_zeta`` and
    ``S_p = S_{p+1} - m_p (xi'(q_{p+1}) - xi'(q_p))``.

    Raises NonPositiveScale if any ``1 + S_p <= 0``.
    """
    q = zeta.atoms_ext
    dxi = np.diff(mixture_eval(xi, q, 1))
    s = np.empty(zeta.r + 2)
    s[-1] = s_zeta_discrete(xi, zeta)
    for p in range(zeta.r, -1, -1):
        s[p] = s[p + 1] - zeta.cdf[p] * dxi[p]
    if np.any(1.0 + s <= 0.0):
        bad = int(np.argmax(1.0 + s <= 0.0))
        raise NonPositiveScale(f"1 + S_{bad} = {1.0 + s[bad]:.6g} <= 0")
    return s


def scale_at(xi: MixtureFunction, zeta: RsbMeasure, t):
    """Curvature level ``S(t)`` of the quadratic solution at time ``t``.

    Between atoms this is the partial-layer value
    ``S_{j+1} - m_j (xi'(q_{j+1}) - xi'(t))`` for ``q_j <= t < q_{j+1}``;
    at atoms it coincides with ``S_j`` and ``S(1) = S_zeta``.
    """
    s = s_sequence(xi, zeta)
    q = zeta.atoms_ext
    t_arr = np.asarray(t, dtype=float)
    j = np.clip(np.searchsorted(zeta.atoms, t_arr, side="right") - 1, 0, zeta.r)
    out = s[j + 1] - zeta.cdf[j] * (mixture_eval(xi, q[j + 1], 1) - mixture_eval(xi, t_arr, 1))
    out = np.where(t_arr >= 1.0, s[-1], out)
    return float(out) if np.ndim(out) == 0 else out


def scale_constants(xi: MixtureFunction, zeta: RsbMeasure) -> ScaleConstants:
    return ScaleConstants(s_zeta_discrete(xi, zeta), s_hat(xi, zeta), s_sequence(xi, zeta))


# --- fixtures -------------------------------------------------------------

def load_fixture(path: str | Path, p_max: int = P_MAX_DEFAULT) -> tuple[MixtureFunction, RsbMeasure]:
    with open(path) as fh:
        return fixture_from_json(json.load(fh), p_max)


def fixture_from_json(data: Mapping, p_max: int = P_MAX_DEFAULT) -> tuple[MixtureFunction, RsbMeasure]:
    unknown = set(data) - {"beta", "zeta"}
    if unknown:
        raise ValidationError(f"unknown fixture keys: {sorted(unknown)}")
    try:
        beta = data["beta"]
        z = data["zeta"]
        atoms, cdf = z["atoms"], z["cdf"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed fixture: missing {exc}") from None
    return MixtureFunction.from_dict({int(k): v for k, v in beta.items()}, p_max), RsbMeasure(atoms, cdf)


def fixture_to_json(xi: MixtureFunction, zeta: RsbMeasure) -> dict:
    return {
        "beta": {str(p): b for p, b in xi.to_dict().items()},
        "zeta": {"atoms": [float(q) for q in zeta.atoms], "cdf": [float(m) for m in zeta.cdf]},
    }


def save_fixture(path: str | Path, xi: MixtureFunction, zeta: RsbMeasure) -> None:
    with open(path, "w") as fh:
        json.dump(fixture_to_json(xi, zeta), fh, indent=2)


def random_fixture(rng: np.random.Generator, r_max: int = 4, p_top: int = 6,
                   m0_positive: bool = True) -> tuple[MixtureFunction, RsbMeasure]:
    """Draw a valid fixture with ``beta_p <= 1/p^2`` and ``r <= r_max``."""
    p = np.arange(2, p_top + 1)
    beta = {int(k): float(rng.uniform(0, 1.0 / k**2)) for k in p}
    r = int(rng.integers(0, r_max + 1))
    while True:
        inner = np.sort(rng.uniform(0.0, 1.0, size=r))
        atoms = np.concatenate([[0.0], inner])
        if r == 0 or np.all(np.diff(atoms) > 1e-6):
            break
    lo = 1e-3 if m0_positive else 0.0
    cdf = np.concatenate([np.sort(rng.uniform(lo, 1.0, size=r)), [1.0]])
    return MixtureFunction.from_dict(beta), RsbMeasure(atoms, cdf)


def fixture_f1() -> tuple[MixtureFunction, RsbMeasure]:
    """Pure 2-spin, ``beta_2 = 0.5``, one-step measure with atoms (0, 0.5), CDF (0.3, 1)."""
    return MixtureFunction.pure(2, 0.5), RsbMeasure([0.0, 0.5], [0.3, 1.0])


def as_arrays(values: Sequence[float]) -> np.ndarray:
    return np.asarray(values, dtype=float)
