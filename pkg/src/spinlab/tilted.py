"""The tilted cascade field as an exact Gaussian Markov chain.

Step ``k`` moves the partial sum from level ``q_k`` to ``q_{k+1}`` with the
kernel ``phi_var(z) exp(m_k (u(q_{k+1}, Z + z) - u(q_k, Z)))``, where ``u`` is the
quadratic Parisi solution. Because ``u`` is quadratic the kernel is Gaussian.
Steps ``0..r-1`` end at ``q_*``; the optional step ``r`` continues to ``t = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import ValidationError
from .model import MixtureFunction, RsbMeasure, mixture_eval, s_sequence
from .parisi import cole_hopf_quadratic


@dataclass(frozen=True)
class TiltedChain:
    """Samples of the chain: ``steps[:, k]`` is the increment of step ``k``."""

    steps: np.ndarray
    partial: np.ndarray  # partial[:, k] = Z'_{k+1}
    r: int

    @property
    def endpoint(self) -> np.ndarray:
        """Value at ``q_*`` (zero when ``r = 0``)."""
        if self.r == 0:
            return np.zeros(self.partial.shape[0])
        return self.partial[:, self.r - 1]

    @property
    def terminal(self) -> np.ndarray:
        """Value after the final step to ``t = 1``."""
        if self.partial.shape[1] <= self.r:
            raise ValidationError("chain was sampled without the final step")
        return self.partial[:, self.r]


@dataclass(frozen=True)
class MomentBound:
    per_level: np.ndarray
    bound: float
    cap: float


def _increments(xi: MixtureFunction, zeta: RsbMeasure) -> np.ndarray:
    return np.diff(mixture_eval(xi, zeta.atoms_ext, 1))


def conditional_params(xi: MixtureFunction, zeta: RsbMeasure, k: int, z_sum) -> tuple:
    """Mean and variance of step ``k`` given the partial sum ``z_sum``.

    Completing the square in the kernel gives mean ``z_sum m_k d_k / (1 + S_k)``
    and variance ``(1 + S_{k+1}) d_k / (1 + S_k)`` with ``d_k = xi'(q_{k+1}) - xi'(q_k)``.
    """
    if not 0 <= k <= zeta.r:
        raise ValidationError(f"step k must lie in [0, {zeta.r}]")
    s = s_sequence(xi, zeta)
    d = _increments(xi, zeta)[k]
    m = zeta.cdf[k]
    mean = np.asarray(z_sum, dtype=float) * m * d / (1.0 + s[k])
    var = (1.0 + s[k + 1]) * d / (1.0 + s[k])
    return (float(mean) if np.ndim(mean) == 0 else mean), float(var)


def kernel_moments_quadrature(xi: MixtureFunction, zeta: RsbMeasure, k: int, z_sum: float) -> tuple:
    """Mass, mean and variance of the step-``k`` kernel by 1-D adaptive quadrature.

    The kernel is built literally from the Cole-Hopf solution (constants
    included), so the mass should be one. Used as an oracle for
    ``conditional_params``.
    """
    sol = cole_hopf_quadratic(xi, zeta)
    q = zeta.atoms_ext
    d = mixture_eval(xi, q[k + 1], 1) - mixture_eval(xi, q[k], 1)
    m = zeta.cdf[k]
    if d <= 0.0:
        return 1.0, 0.0, 0.0

    # u(q_{k+1}, .) is read off once; the integrand stays the literal kernel
    c_next, inv_next = sol.consts[k + 1], 1.0 / (1.0 + sol.scales[k + 1])
    base = m * float(sol.u(q[k], z_sum)) + 0.5 * np.log(2.0 * np.pi * d)

    def log_kernel(z):
        y = z_sum + z
        return -0.5 * z * z / d + m * (c_next + 0.5 * y * y * inv_next) - base

    peak = optimize.minimize_scalar(lambda z: -log_kernel(z), bracket=(-1.0, 1.0)).x
    ref = log_kernel(peak)
    width = np.sqrt(d) * 40.0
    lo, hi = peak - width, peak + width

    def moment(p):
        val, _ = integrate.quad(lambda z: (z - peak) ** p * np.exp(log_kernel(z) - ref), lo, hi,
                                points=[peak], epsabs=1e-14, epsrel=1e-12, limit=200)
        return val

    m0, m1, m2 = moment(0), moment(1), moment(2)
    mass = m0 * np.exp(ref)
    mean_rel = m1 / m0
    var = m2 / m0 - mean_rel**2
    return float(mass), float(peak + mean_rel), float(var)


def sample_chain(xi: MixtureFunction, zeta: RsbMeasure, n_samples: int,
                 rng: np.random.Generator, include_final: bool = True) -> TiltedChain:
    """Ancestral sampling through the Gaussian conditionals."""
    n_steps = zeta.r + (1 if include_final else 0)
    steps = np.zeros((n_samples, n_steps))
    partial = np.zeros((n_samples, n_steps))
    z = np.zeros(n_samples)
    for k in range(n_steps):
        mean, var = conditional_params(xi, zeta, k, z)
        inc = mean + np.sqrt(var) * rng.standard_normal(n_samples)
        z = z + inc
        steps[:, k] = inc
        partial[:, k] = z
    return TiltedChain(steps, partial, zeta.r)


def second_moment_exact(xi: MixtureFunction, zeta: RsbMeasure) -> np.ndarray:
    """``E[Z'_k^2]`` for ``k = 1..r+1`` from the linear second-moment recursion."""
    s = s_sequence(xi, zeta)
    d = _increments(xi, zeta)
    out = np.empty(zeta.r + 1)
    prev = 0.0
    for k in range(zeta.r + 1):
        ratio = (1.0 + s[k + 1]) / (1.0 + s[k])
        prev = ratio**2 * prev + ratio * d[k]
        out[k] = prev
    return out


def endpoint_variance(xi: MixtureFunction, zeta: RsbMeasure) -> float:
    """``E[Z'_r^2]``, the variance of the chain stopped at ``q_*``."""
    if zeta.r == 0:
        return 0.0
    return float(second_moment_exact(xi, zeta)[zeta.r - 1])


def moment_bound(xi: MixtureFunction, zeta: RsbMeasure) -> MomentBound:
    """Product bound ``prod_i (1 + (B + 1) d_i)**2`` with ``B = max(xi'(1), 1)``.

    ``per_level[k]`` bounds ``E[Z'_{k+1}^2]``; ``cap = exp((B + 1)**2)`` is the
    level-free bound, valid when ``xi'(1) <= 1``.
    """
    b = max(mixture_eval(xi, 1.0, 1), 1.0)
    d = _increments(xi, zeta)
    per_level = np.cumprod(1.0 + (b + 1.0) * d) ** 2
    return MomentBound(per_level, float(per_level[-1]), float(np.exp((b + 1.0) ** 2)))


@dataclass(frozen=True)
class SubmartingaleReport:
    level: np.ndarray
    bin_gap: np.ndarray  # mean(|Z'_{k+1}| - |Z'_k|) per (level, bin)
    bin_se: np.ndarray
    passed: bool


def submartingale_test(xi: MixtureFunction, zeta: RsbMeasure, n_samples: int,
                       rng: np.random.Generator, n_bins: int = 20,
                       n_se: float = 3.0) -> SubmartingaleReport:
    """Binned check that ``E[|Z'_{k+1}| | Z'_k] >= |Z'_k|`` at every level.

    Bins are quantiles of ``|Z'_k|``; a bin fails if its mean increment of the
    absolute value is below ``-n_se`` standard errors.
    """
    chain = sample_chain(xi, zeta, n_samples, rng, include_final=True)
    padded = np.column_stack([np.zeros(n_samples), chain.partial])
    levels, gaps, ses = [], [], []
    for k in range(chain.partial.shape[1]):
        a, b = np.abs(padded[:, k]), np.abs(padded[:, k + 1])
        diff = b - a
        if np.all(a == 0.0):
            edges = np.array([-np.inf, np.inf])
        else:
            edges = np.quantile(a, np.linspace(0.0, 1.0, n_bins + 1))
            edges[0], edges[-1] = -np.inf, np.inf
        idx = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, edges.size - 2)
        count = np.bincount(idx, minlength=edges.size - 1)
        sums = np.bincount(idx, weights=diff, minlength=edges.size - 1)
        sq = np.bincount(idx, weights=diff**2, minlength=edges.size - 1)
        ok = count > 1
        mean = sums[ok] / count[ok]
        var = (sq[ok] / count[ok] - mean**2) * count[ok] / (count[ok] - 1)
        levels.append(np.full(mean.size, k))
        gaps.append(mean)
        ses.append(np.sqrt(np.maximum(var, 0.0) / count[ok]))
    level, gap, se = map(np.concatenate, (levels, gaps, ses))
    return SubmartingaleReport(level, gap, se, bool(np.all(gap >= -n_se * se)))
