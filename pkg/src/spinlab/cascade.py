"""Truncated Ruelle probability cascades and Gaussian fields on their leaves.

A depth-``r`` cascade is a regular tree. Each node at depth ``k`` has ``K``
children carrying the top ``K`` points of a Poisson process with intensity
``x**(-1 - m_k)`` (a single child when ``m_k = 0``). A leaf's weight is the
product of the points along its path, normalized over all leaves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import ks_2samp

from .errors import BudgetExceeded, ValidationError
from .model import MixtureFunction, RsbMeasure, mixture_eval

LEAF_CAP_DEFAULT = 1 << 20


def _pd_log_points(m: float, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Log of the first ``shape[-1]`` points ``t_k**(-1/m)`` of a unit-rate Poisson process."""
    arrivals = np.cumsum(rng.standard_exponential(shape), axis=-1)
    return -np.log(arrivals) / m


def sample_pd(m: float, K: int, rng: np.random.Generator) -> np.ndarray:
    """Top-``K`` Poisson-Dirichlet(``m``) weights, normalized and descending.

    ``m = 0`` is the degenerate limit: a single atom of mass one.
    """
    if m == 0.0:
        return np.ones(1)
    if not 0.0 < m < 1.0:
        raise ValidationError(f"PD parameter must lie in (0, 1), got {m}")
    if K < 2:
        raise ValidationError("K must be >= 2")
    logs = _pd_log_points(m, (K,), rng)
    return np.exp(logs - logsumexp(logs))


@dataclass(frozen=True)
class CascadeTree:
    """Regular truncated cascade.

    ``branching[k]`` is the number of children of a depth-``k`` node, and the
    ancestor of leaf ``a`` at depth ``k`` is ``a // strides[k]``.
    """

    atoms: np.ndarray
    cdf: np.ndarray
    K: int
    branching: np.ndarray
    log_weights: np.ndarray

    @property
    def r(self) -> int:
        return self.atoms.size - 1

    @property
    def n_leaves(self) -> int:
        return self.log_weights.size

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def strides(self) -> np.ndarray:
        """``strides[k]`` = number of leaves below a depth-``k`` node, ``k = 0..r``."""
        return np.append(np.cumprod(self.branching[::-1])[::-1], 1).astype(np.int64)

    def n_nodes(self, depth: int) -> int:
        return int(np.prod(self.branching[:depth]))

    def ancestors(self, depth: int, leaves=None) -> np.ndarray:
        leaves = np.arange(self.n_leaves) if leaves is None else np.asarray(leaves)
        return leaves // self.strides[depth]

    def common_depth(self, a, b) -> np.ndarray:
        """Depth of the deepest common ancestor of leaves ``a`` and ``b``."""
        a, b = np.broadcast_arrays(np.asarray(a), np.asarray(b))
        depth = np.zeros(a.shape, dtype=np.int64)
        for k in range(1, self.r + 1):
            same = (a // self.strides[k]) == (b // self.strides[k])
            depth = np.where(same, k, depth)
        return depth

    def overlap(self, a, b):
        out = self.atoms[self.common_depth(a, b)]
        return float(out) if np.ndim(out) == 0 else out

    def overlap_matrix(self, leaves) -> np.ndarray:
        leaves = np.asarray(leaves)
        return self.overlap(leaves[:, None], leaves[None, :])


@dataclass(frozen=True)
class LeafFields:
    """``y[a, i]``, ``z[a, i]``: copy ``i`` of the fields at leaf ``a``.

    ``y_edges[k-1]`` and ``z_edges[k-1]`` hold the depth-``k`` edge increments,
    one row per depth-``k`` node.
    """

    y: np.ndarray
    z: np.ndarray
    y_edges: list
    z_edges: list


def _check_levels(zeta: RsbMeasure) -> None:
    inner = zeta.cdf[:-1]
    if np.any(inner >= 1.0):
        raise ValidationError("cascade levels need m_k < 1 below q_*")


def sample_cascade(zeta: RsbMeasure, K: int, rng: np.random.Generator,
                   leaf_cap: int = LEAF_CAP_DEFAULT) -> CascadeTree:
    """Sample a depth-``r`` cascade truncated to ``K`` children per node."""
    _check_levels(zeta)
    if K < 2:
        raise ValidationError("K must be >= 2")
    levels = zeta.cdf[:-1]
    branching = np.array([1 if m == 0.0 else K for m in levels], dtype=np.int64)
    n_leaves = int(np.prod(branching.astype(float)))
    if n_leaves > leaf_cap:
        raise BudgetExceeded(f"{n_leaves} leaves exceed the cap {leaf_cap}; lower K")
    logw = np.zeros(1)
    for m, b in zip(levels, branching):
        if b == 1:
            continue
        pts = _pd_log_points(m, (logw.size, b), rng)
        logw = (logw[:, None] + pts).ravel()
    logw = logw - logsumexp(logw)
    return CascadeTree(zeta.atoms.copy(), zeta.cdf.copy(), int(K), branching, logw)


def edge_variances(xi: MixtureFunction, atoms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Depth-``k`` increments (``k = 1..r``) of ``xi'(q)`` and of ``q xi'(q)``."""
    d1 = mixture_eval(xi, atoms, 1)
    return np.diff(d1), np.diff(atoms * d1)


def sample_fields(tree: CascadeTree, xi: MixtureFunction, n_copies: int, rng: np.random.Generator,
                  y_shift=None) -> LeafFields:
    """Sum independent per-edge Gaussians from root to leaf.

    ``y_shift[k-1]`` is an optional deterministic shift added to every depth-``k``
    edge of ``Y`` (used for the exact cascade tilt).
    """
    z_var, y_var = edge_variances(xi, tree.atoms)
    y = np.zeros((tree.n_leaves, n_copies))
    z = np.zeros((tree.n_leaves, n_copies))
    y_edges, z_edges = [], []
    anc_all = np.arange(tree.n_leaves)
    for k in range(1, tree.r + 1):
        nodes = tree.n_nodes(k)
        ze = np.sqrt(z_var[k - 1]) * rng.standard_normal((nodes, n_copies))
        ye = np.sqrt(y_var[k - 1]) * rng.standard_normal((nodes, n_copies))
        if y_shift is not None:
            ye = ye + y_shift[k - 1]
        anc = anc_all // tree.strides[k]
        y += ye[anc]
        z += ze[anc]
        y_edges.append(ye)
        z_edges.append(ze)
    return LeafFields(y, z, y_edges, z_edges)


@dataclass(frozen=True)
class BSReport:
    ks_max_weight: float
    ks_mean_field: float
    pvalue_max_weight: float
    pvalue_mean_field: float
    n_rep: int

    @property
    def ks_max(self) -> float:
        return max(self.ks_max_weight, self.ks_mean_field)


def bs_functionals(m: float, t_shift: float, K: int, n: int, rng: np.random.Generator,
                   oversample: int = 4):
    """Paired draws of (largest weight, weighted mean of g) before and after the tilt.

    A pool of ``oversample * K`` points is drawn. The untilted side keeps the top
    ``K`` points; the tilted side keeps the top ``K`` tilted points of the same
    pool, so both sides are top-``K`` truncations of processes that agree in law.
    """
    pool = K * max(1, int(oversample))
    logu = _pd_log_points(m, (n, pool), rng)
    g = rng.standard_normal((n, pool))
    lu, gu = logu[:, :K], g[:, :K]
    w = np.exp(lu - logsumexp(lu, axis=1, keepdims=True))
    if t_shift == 0.0:
        lt, gt = lu, gu
    else:
        logt = logu + t_shift * g
        top = np.argpartition(-logt, K - 1, axis=1)[:, :K]
        lt = np.take_along_axis(logt, top, axis=1)
        gt = np.take_along_axis(g, top, axis=1)
    wt = np.exp(lt - logsumexp(lt, axis=1, keepdims=True))
    base = np.column_stack([w.max(axis=1), np.sum(w * gu, axis=1)])
    tilt = np.column_stack([wt.max(axis=1), np.sum(wt * (gt - m * t_shift), axis=1)])
    return base, tilt


def bs_invariance_stat(m: float, t_shift: float, K: int, n_rep: int, rng: np.random.Generator,
                       chunk: int = 250, oversample: int = 4) -> BSReport:
    """Two-sample KS distances between untilted and tilted functionals.

    Bolthausen-Sznitman invariance says ``(u e^{t g}, g - m t)`` renormalized has
    the law of ``(u, g)``; both functionals are bounded and continuous in the
    normalized weights.
    """
    if not 0.0 < m < 1.0:
        raise ValidationError("m must lie in (0, 1)")
    if n_rep < 1000:
        raise ValidationError("n_rep must be >= 1000")
    base, tilt = [], []
    for start in range(0, n_rep, chunk):
        b, t = bs_functionals(m, t_shift, K, min(chunk, n_rep - start), rng, oversample)
        base.append(b)
        tilt.append(t)
    base, tilt = np.concatenate(base), np.concatenate(tilt)
    r0 = ks_2samp(base[:, 0], tilt[:, 0])
    r1 = ks_2samp(base[:, 1], tilt[:, 1])
    return BSReport(float(r0.statistic), float(r1.statistic), float(r0.pvalue), float(r1.pvalue), n_rep)
