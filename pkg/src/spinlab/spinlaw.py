"""Single-spin law, moment predictions and the finite-(R, C) cavity estimator.

The spin law with exponent ``f`` is the ``s``-marginal of the density

    exp(-(1 + S_zeta) s**2 / 2 - (y - f)**2 / (2 V) + s y),   V = xi'(1) - xi'(q_*),

which is Gaussian with mean ``f / (1 + S_hat)`` and variance ``1 / (1 + S_hat)``
because ``1 + S_zeta - V = 1 + S_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.special import logsumexp

from .cascade import CascadeTree, edge_variances, sample_cascade, sample_fields
from .errors import NonPositiveScale, QuadratureFailure, ValidationError
from .localfield import UltrametricMatrix, simulate
from .model import MixtureFunction, RsbMeasure, mixture_eval, s_hat, s_zeta_discrete
from .tilted import conditional_params, endpoint_variance


@dataclass(frozen=True)
class RhoParams:
    f: float
    mean: float
    var: float


@dataclass(frozen=True)
class MomentSpec:
    """Exponents ``e[l, i]`` for replica ``l`` and cavity coordinate ``i``."""

    exponents: np.ndarray

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.exponents))
        if e.ndim != 2 or e.size == 0:
            raise ValidationError("exponents must be a nonempty k x n array")
        if not np.issubdtype(e.dtype, np.integer):
            if not np.all(e == np.round(e)):
                raise ValidationError("exponents must be integers")
            e = e.astype(np.int64)
        if np.any(e < 0):
            raise ValidationError("exponents must be nonnegative")
        e.setflags(write=False)
        object.__setattr__(self, "exponents", e)

    @classmethod
    def single(cls, e: int) -> "MomentSpec":
        return cls([[e]])

    @classmethod
    def from_json(cls, data) -> "MomentSpec":
        if isinstance(data, dict):
            data = data.get("exponents", data)
        return cls(data)

    @property
    def k(self) -> int:
        return self.exponents.shape[0]

    @property
    def n(self) -> int:
        return self.exponents.shape[1]

    @property
    def is_odd(self) -> bool:
        """Some coordinate carries an odd total power, so the moment vanishes by symmetry."""
        return bool(np.any(self.exponents.sum(axis=0) % 2))


@dataclass(frozen=True)
class MomentReport:
    estimate: float
    se: float
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.estimate) or not self.se >= 0.0:
            raise ValidationError("report must carry a finite estimate and a nonnegative SE")


def _one_plus_s_hat(xi: MixtureFunction, zeta: RsbMeasure) -> float:
    a = 1.0 + s_hat(xi, zeta)
    if a <= 0.0:
        raise NonPositiveScale(f"1 + S_hat = {a:.6g} <= 0")
    return a


def rho_params(f, xi: MixtureFunction, zeta: RsbMeasure) -> RhoParams:
    a = _one_plus_s_hat(xi, zeta)
    return RhoParams(f, np.asarray(f, dtype=float) / a, 1.0 / a)


def gaussian_moment(mean, var: float, e: int):
    """``E[(mean + sqrt(var) G)**e]`` for standard normal ``G``."""
    mean = np.asarray(mean, dtype=float)
    out = np.zeros_like(mean)
    dfact = 1.0  # (j - 1)!! for even j
    for j in range(0, e + 1, 2):
        if j > 0:
            dfact *= j - 1
        out = out + comb(e, j) * mean ** (e - j) * var ** (j // 2) * dfact
    return out


def _rho_quadrature(f, xi: MixtureFunction, zeta: RsbMeasure, e: int, gh_points: int):
    """Tensor Gauss-Hermite on the literal two-variable integrand.

    The integrand's exponent is a quadratic form in ``(s, y)``; its precision
    matrix and linear term are read off the two-variable density and the nodes are
    placed in the whitened coordinates.
    """
    a = 1.0 + s_zeta_discrete(xi, zeta)
    v = mixture_eval(xi, 1.0, 1) - mixture_eval(xi, zeta.q_star, 1)
    f = np.atleast_1d(np.asarray(f, dtype=float))
    nodes, w = np.polynomial.hermite.hermgauss(gh_points)
    if v <= 0.0:
        # y is pinned at f; only the s-integral remains
        if a <= 0.0:
            raise NonPositiveScale("1 + S_zeta <= 0")
        mu, sd = f / a, np.sqrt(1.0 / a)
        s = mu[:, None] + np.sqrt(2.0) * sd * nodes
        out = (s**e) @ w / w.sum()
        return out
    prec = np.array([[a, -1.0], [-1.0, 1.0 / v]])
    if np.linalg.det(prec) <= 0.0:
        raise NonPositiveScale("two-variable density is not normalizable")
    cov = np.linalg.inv(prec)
    chol = np.linalg.cholesky(cov)
    u1, u2 = np.meshgrid(nodes, nodes, indexing="ij")
    ww = np.outer(w, w).ravel()
    pts = np.sqrt(2.0) * (chol @ np.vstack([u1.ravel(), u2.ravel()]))
    out = np.empty_like(f)
    for i, fi in enumerate(f):
        mean = cov @ np.array([0.0, fi / v])
        s = mean[0] + pts[0]
        out[i] = np.dot(ww, s**e) / ww.sum()
    return out


def rho_moment(f, xi: MixtureFunction, zeta: RsbMeasure, e: int, mode: str = "closed-form",
               gh_points: int = 40):
    """``e``-th moment of the spin law with exponent ``f`` (scalar or array)."""
    if e < 0 or int(e) != e:
        raise ValidationError("e must be a nonnegative integer")
    e = int(e)
    if mode == "closed-form":
        p = rho_params(f, xi, zeta)
        out = gaussian_moment(p.mean, p.var, e)
    elif mode == "quadrature":
        _one_plus_s_hat(xi, zeta)
        out = _rho_quadrature(f, xi, zeta, e, gh_points)
        if np.ndim(f) == 0:
            out = out[0]
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    return float(out) if np.ndim(out) == 0 else out


# --- predictions ------------------------------------------------------------

def _summary(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    se = values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else 0.0
    return float(values.mean()), float(se)


def tilted_on_tree(xi: MixtureFunction, zeta: RsbMeasure, tree: CascadeTree, n_copies: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Tilted field at each leaf via the chain conditionals along tree edges.

    Returns ``(n_leaves, n_copies)``; copies are independent.
    """
    node_vals = np.zeros((1, n_copies))
    for k in range(1, tree.r + 1):
        parent = np.arange(tree.n_nodes(k)) // int(tree.branching[k - 1])
        base = node_vals[parent]
        mean, var = conditional_params(xi, zeta, k - 1, base)
        node_vals = base + mean + np.sqrt(var) * rng.standard_normal(base.shape)
    return node_vals[tree.ancestors(tree.r)] if tree.r > 0 else np.repeat(node_vals, tree.n_leaves, 0)


def _replica_product(rho_vals: list[np.ndarray], w: np.ndarray | None) -> float:
    """``prod_l sum_a w_a prod_i rho[l][a, i]`` (weights ``None`` for a single path)."""
    total = 1.0
    for vals in rho_vals:
        per_leaf = np.prod(vals, axis=1)
        total *= float(per_leaf @ w) if w is not None else float(per_leaf)
    return total


def predict_moments(xi: MixtureFunction, zeta: RsbMeasure, spec: MomentSpec, method: str = "rpc",
                    params: dict | None = None, rng: np.random.Generator | None = None) -> MomentReport:
    """Limiting prediction ``E prod_l prod_i rho^{X^i(sigma^l)}(s^{e_li})``.

    Methods:
      * ``closed-form``: one replica; each coordinate is Gaussian with variance
        ``1/a + v/a**2`` (``a = 1 + S_hat``, ``v`` the stopped-chain variance).
      * ``rpc``: cascade weights with tilted fields sampled along the tree.
      * ``sde``: replica overlaps drawn by cascade weight, then the correlated
        local-field diffusion.
    """
    params = dict(params or {})
    a = _one_plus_s_hat(xi, zeta)
    e = spec.exponents
    if method == "closed-form":
        if spec.k != 1:
            raise ValidationError("closed-form prediction covers a single replica")
        var = 1.0 / a + endpoint_variance(xi, zeta) / a**2
        est = float(np.prod([gaussian_moment(0.0, var, int(ei)) for ei in e[0]]))
        return MomentReport(est, 0.0, method, params)
    if rng is None:
        raise ValidationError("Monte Carlo methods need an rng")
    n_rep = int(params.setdefault("n_rep", 20000))
    K = int(params.setdefault("K", 1024))
    if method == "rpc":
        vals = np.empty(n_rep)
        for rep in range(n_rep):
            tree = sample_cascade(zeta, K, rng)
            zp = tilted_on_tree(xi, zeta, tree, spec.n, rng)
            rho_vals = [np.column_stack([rho_moment(zp[:, i], xi, zeta, int(e[l, i])) for i in range(spec.n)])
                        for l in range(spec.k)]
            vals[rep] = _replica_product(rho_vals, tree.weights)
        return MomentReport(*_summary(vals), method, params)
    if method == "sde":
        dt = float(params.setdefault("dt", 1e-3))
        patterns: dict[bytes, list] = {}
        for rep in range(n_rep):
            tree = sample_cascade(zeta, K, rng)
            leaves = rng.choice(tree.n_leaves, size=spec.k, p=tree.weights / tree.weights.sum())
            Q = tree.overlap_matrix(leaves)
            patterns.setdefault(Q.tobytes(), [Q, 0])[1] += 1
        vals = []
        for key in sorted(patterns):
            Q, count = patterns[key]
            paths = simulate(xi, zeta, UltrametricMatrix(Q), dt, count * spec.n, rng)
            _, x = paths.at(zeta.q_star)
            x = x.reshape(count, spec.n, spec.k)
            prod = np.ones(count)
            for l in range(spec.k):
                for i in range(spec.n):
                    prod *= rho_moment(x[:, i, l], xi, zeta, int(e[l, i]))
            vals.append(prod)
        return MomentReport(*_summary(np.concatenate(vals)), method, params)
    raise ValidationError(f"unknown method {method!r}")


# --- cavity estimator -------------------------------------------------------

def _gl_panels(C: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-C, C, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def log_moment_integrals(quad2, lin, quart: float, C: float, exps, tol: float = 1e-10,
                         panels: int = 8, order: int = 10, max_panels: int = 512):
    """``int_{-C}^{C} s**e exp(quad2 s**2 + lin s + quart s**4) ds`` per row.

    Returns ``(log_scale, scaled)`` with ``scaled[e]`` the integral divided by
    ``exp(log_scale)``. Composite Gauss-Legendre panels are doubled until every
    requested moment changes by at most ``tol`` relative to ``int |s|**e ...``.
    """
    quad2 = np.asarray(quad2, dtype=float)
    lin = np.asarray(lin, dtype=float)
    exps = sorted(set(int(x) for x in exps) | {0})

    def evaluate(p):
        s, w = _gl_panels(C, p, order)
        phi = quad2[:, None] * s**2 + lin[:, None] * s + quart * s**4
        top = phi.max(axis=1)
        kern = np.exp(phi - top[:, None]) * w
        vals = {e: kern @ s**e for e in exps}
        absv = {e: kern @ np.abs(s) ** e for e in exps}
        return top, vals, absv

    top, vals, _ = evaluate(panels)
    p = panels
    while True:
        p *= 2
        top2, vals2, abs2 = evaluate(p)
        shift = np.exp(top - top2)
        ok = all(np.all(np.abs(vals2[e] - vals[e] * shift) <= tol * abs2[e]) for e in exps)
        top, vals = top2, vals2
        if ok:
            return top, vals
        if p >= max_panels:
            raise QuadratureFailure(f"panel quadrature did not reach rel. tol {tol} with {p} panels")


def _frce_replica(xi, zeta, spec, C, R, K, rng, y_tilt, tol, q_exp_shift=None):
    """One cascade replication of the ratio-of-sums estimator."""
    qs = zeta.q_star
    d1q = mixture_eval(xi, qs, 1)
    rr = np.sqrt(R * R + 1.0)
    quart = (mixture_eval(xi, 1.0, 1) - qs * d1q) / (4.0 * (R * R + 1.0))
    tree = sample_cascade(zeta, K, rng)
    shift = None
    if y_tilt == "exact":
        _, y_var = edge_variances(xi, tree.atoms)
        shift = tree.cdf[:-1] * rr * y_var
    fields = sample_fields(tree, xi, spec.n, rng, y_shift=shift)
    e = spec.exponents
    log_base = tree.log_weights.copy()
    ratios = []
    for i in range(spec.n):
        quad2 = -0.5 * (1.0 + d1q * (1.0 - qs)) - fields.y[:, i] / (2.0 * rr)
        top, vals = log_moment_integrals(quad2, fields.z[:, i], quart, C, e[:, i], tol)
        log_base += top + np.log(vals[0])
        if y_tilt == "explicit":
            log_base += rr * fields.y[:, i]
        ratios.append({ex: vals[ex] / vals[0] for ex in vals})
    p = np.exp(log_base - logsumexp(log_base))
    total = 1.0
    for l in range(spec.k):
        per_leaf = np.ones(tree.n_leaves)
        for i in range(spec.n):
            per_leaf = per_leaf * ratios[i][int(e[l, i])]
        total *= float(p @ per_leaf)
    return total


def f_rce_estimate(xi: MixtureFunction, zeta: RsbMeasure, spec: MomentSpec, C: float, R: float, K: int,
                   rng: np.random.Generator, n_rep: int = 1000, y_tilt: str = "exact",
                   tol: float = 1e-10) -> MomentReport:
    """Finite-(R, C) cavity estimator averaged over cascade replications.

    Each leaf carries the full cavity integrand, including the quartic term
    and the ``Y [sqrt(R^2+1) - s^2 / (2 sqrt(R^2+1))]`` coupling. The factor
    ``exp(sqrt(R^2+1) Y)`` is applied either literally (``y_tilt="explicit"``)
    or through the exact cascade tilt (``"exact"``, default): weights are left
    alone and each depth-``k`` ``Y`` edge is shifted by
    ``m_{k-1} sqrt(R^2+1) var_k``. The two agree in law for an untruncated
    cascade; the literal form needs ``K`` far beyond desk scale once ``R`` is large.
    """
    if C <= 0.0 or R < 0.0:
        raise ValidationError("need C > 0 and R >= 0")
    if y_tilt not in ("exact", "explicit"):
        raise ValidationError("y_tilt must be 'exact' or 'explicit'")
    vals = np.array([_frce_replica(xi, zeta, spec, C, R, K, rng, y_tilt, tol) for _ in range(n_rep)])
    return MomentReport(*_summary(vals), "frce",
                        {"C": C, "R": R, "K": K, "n_rep": n_rep, "y_tilt": y_tilt})


def denominator_tail_probe(xi: MixtureFunction, zeta: RsbMeasure, C: float, R: float, L: float,
                           n_rep: int, rng: np.random.Generator, K: int = 1024) -> float:
    """Frequency of ``sum_a w_a int_{-C}^{C} exp(-s^2/2 + Z s + [sqrt(R^2+1) - s^2/(2 sqrt(R^2+1))] Y) ds <= 1/L``."""
    if L <= 0.0:
        raise ValidationError("L must be positive")
    rr = np.sqrt(R * R + 1.0)
    hits = 0
    for _ in range(n_rep):
        tree = sample_cascade(zeta, K, rng)
        f = sample_fields(tree, xi, 1, rng)
        y, z = f.y[:, 0], f.z[:, 0]
        top, vals = log_moment_integrals(-0.5 - y / (2.0 * rr), z, 0.0, C, [0])
        log_den = logsumexp(tree.log_weights + top + np.log(vals[0]) + rr * y)
        hits += log_den <= -np.log(L)
    return hits / n_rep


@dataclass(frozen=True)
class ScanPoint:
    C: float
    R: float
    estimate: float
    se: float
    gap: float


@dataclass(frozen=True)
class ScanResult:
    target: float
    target_se: float
    r_scan: list
    c_scan: list
    n_se_trend: float = 2.0
    n_se_final: float = 3.0

    @staticmethod
    def _nonincreasing(points, target_se, n_se) -> bool:
        for a, b in zip(points[:-1], points[1:]):
            comb_se = np.sqrt(a.se**2 + b.se**2)  # shared target cancels in differences
            if abs(b.gap) > abs(a.gap) + n_se * comb_se:
                return False
        return True

    @property
    def r_trend_ok(self) -> bool:
        return self._nonincreasing(self.r_scan, self.target_se, self.n_se_trend)

    @property
    def c_trend_ok(self) -> bool:
        return self._nonincreasing(self.c_scan, self.target_se, self.n_se_trend)

    @property
    def final(self) -> ScanPoint:
        return self.c_scan[-1] if self.c_scan else self.r_scan[-1]

    @property
    def final_ok(self) -> bool:
        f = self.final
        return abs(f.gap) <= self.n_se_final * np.sqrt(f.se**2 + self.target_se**2)

    @property
    def passed(self) -> bool:
        return self.r_trend_ok and self.c_trend_ok and self.final_ok


def frce_scan(xi: MixtureFunction, zeta: RsbMeasure, spec: MomentSpec, seed: int,
              R_values=(10.0, 20.0, 40.0, 80.0), C_fixed: float = 6.0,
              C_values=(2.0, 4.0, 6.0), R_fixed: float = 100.0, K: int = 4096, n_rep: int = 1000,
              target: MomentReport | None = None) -> ScanResult:
    """Gaps of the cavity estimator to the prediction along an R scan and a C scan.

    Every scan point reuses the same per-replication streams (common random
    numbers), so gap differences carry little Monte Carlo noise.
    """
    from .seeding import derive_rng

    if target is None:
        method = "closed-form" if spec.k == 1 else "rpc"
        target = predict_moments(xi, zeta, spec, method, {"K": K}, derive_rng(seed, 1))

    def point(C, R):
        vals = np.array([_frce_replica(xi, zeta, spec, C, R, K, derive_rng(seed, 0, rep), "exact", 1e-10)
                         for rep in range(n_rep)])
        est, se = _summary(vals)
        return ScanPoint(C, R, est, se, est - target.estimate)

    r_scan = [point(C_fixed, R) for R in R_values]
    c_scan = [point(C, R_fixed) for C in C_values]
    return ScanResult(target.estimate, target.se, r_scan, c_scan)
