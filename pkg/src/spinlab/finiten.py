"""Finite-N spherical mixed p-spin models, a constraint-preserving Metropolis sampler,
and the covariance comparison for the renormalized cavity coordinates.

The Hamiltonian is ``H(s) = sum_p beta_p N**(-(p-1)/2) sum g_{i_1..i_p} s_{i_1}..s_{i_p}``
with i.i.d. standard Gaussian couplings, so ``Cov(H(s), H(t)) = N xi(s.t / N)``
exactly. The Gibbs weight is ``exp(H)`` on the sphere of radius ``sqrt(N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import permutations
from typing import Mapping, Sequence

import numba
import numpy as np

from .errors import BudgetExceeded, ValidationError
from .model import MixtureFunction
from .spinlaw import MomentReport, MomentSpec

ENTRY_BUDGET_DEFAULT = 1 << 27
N_MAX = 512
CHUNK_SWEEPS = 256


@dataclass(frozen=True)
class PSpinModel:
    N: int
    beta: np.ndarray  # indexed by degree, length 5
    tensors: dict
    seed: int

    @property
    def coef(self) -> np.ndarray:
        """Effective prefactors ``beta_p N**(-(p-1)/2)`` for ``p = 0..4``."""
        p = np.arange(5)
        return self.beta * self.N ** (-(p - 1) / 2.0)

    def _args(self):
        dummy = {2: np.zeros((1, 1)), 3: np.zeros((1, 1, 1)), 4: np.zeros((1, 1, 1, 1))}
        t = {p: self.tensors.get(p, dummy[p]) for p in (2, 3, 4)}
        c = self.coef
        return t[2], t[3], t[4], float(c[2]), float(c[3]), float(c[4])

    def energy(self, sigma) -> float:
        return float(_energy(np.asarray(sigma, dtype=float), *self._args()))


def _symmetrize(g: np.ndarray) -> np.ndarray:
    p = g.ndim
    out = np.zeros_like(g)
    perms = list(permutations(range(p)))
    for perm in perms:
        out += np.transpose(g, perm)
    return out / len(perms)


def _beta_array(beta, p_max: int) -> np.ndarray:
    if isinstance(beta, MixtureFunction):
        beta = beta.to_dict()
    if isinstance(beta, Mapping):
        arr = np.zeros(5)
        for p, v in beta.items():
            p = int(p)
            if not 2 <= p <= p_max:
                raise ValidationError(f"degree {p} outside 2..{p_max}")
            arr[p] = float(v)
        return arr
    arr = np.zeros(5)
    b = np.asarray(beta, dtype=float)
    arr[: b.size] = b
    if np.any(arr[:2] != 0) or b.size > p_max + 1:
        raise ValidationError("beta must be indexed by degree with entries for p = 2..p_max")
    return arr


def build(N: int, beta, p_max: int = 4, seed: int = 0,
          entry_budget: int = ENTRY_BUDGET_DEFAULT) -> PSpinModel:
    """Draw dense symmetrized coupling tensors for every active degree ``p <= 4``."""
    if not 2 <= N <= N_MAX:
        raise ValidationError(f"N must lie in [2, {N_MAX}]")
    if not 2 <= p_max <= 4:
        raise ValidationError("p_max must lie in [2, 4]")
    b = _beta_array(beta, p_max)
    if np.any(b < 0):
        raise ValidationError("beta_p must be nonnegative")
    entries = sum(N**p for p in range(2, 5) if b[p] != 0.0)
    if entries > entry_budget:
        raise BudgetExceeded(f"{entries} tensor entries exceed the budget {entry_budget}")
    tensors = {}
    for p in range(2, 5):
        if b[p] != 0.0:
            # one stream per degree, so adding a degree leaves the others unchanged
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), p]))
            tensors[p] = np.ascontiguousarray(_symmetrize(rng.standard_normal((N,) * p)))
    return PSpinModel(int(N), b, tensors, int(seed))


# --- numba kernels ------------------------------------------------------------

@numba.njit(cache=True)
def _energy(s, t2, t3, t4, c2, c3, c4):
    n = s.size
    h = 0.0
    if c2 != 0.0:
        for a in range(n):
            acc = 0.0
            for b in range(n):
                acc += t2[a, b] * s[b]
            h += c2 * acc * s[a]
    if c3 != 0.0:
        for a in range(n):
            for b in range(n):
                acc = 0.0
                for c in range(n):
                    acc += t3[a, b, c] * s[c]
                h += c3 * acc * s[a] * s[b]
    if c4 != 0.0:
        for a in range(n):
            for b in range(n):
                sab = s[a] * s[b]
                for c in range(n):
                    acc = 0.0
                    for d in range(n):
                        acc += t4[a, b, c, d] * s[d]
                    h += c4 * acc * sab * s[c]
    return h


@numba.njit(cache=True)
def _pair_coeffs(s, i, j, t2, t3, t4, c2, c3, c4, out):
    """Coefficients ``out[a, b]`` of the part of H that depends on ``(s_i, s_j)``.

    Uses ``st`` = ``s`` with entries ``i, j`` zeroed and multinomial weights
    ``p! / (a! b! c!)`` for ``T[e_i^a, e_j^b, st^c]``.
    """
    n = s.size
    out[:, :] = 0.0
    si, sj = s[i], s[j]
    s[i] = 0.0
    s[j] = 0.0
    if c2 != 0.0:
        vi = 0.0
        vj = 0.0
        for k in range(n):
            vi += t2[i, k] * s[k]
            vj += t2[j, k] * s[k]
        out[1, 0] += c2 * 2.0 * vi
        out[0, 1] += c2 * 2.0 * vj
        out[2, 0] += c2 * t2[i, i]
        out[0, 2] += c2 * t2[j, j]
        out[1, 1] += c2 * 2.0 * t2[i, j]
    if c3 != 0.0:
        ai = 0.0
        aj = 0.0
        bii = 0.0
        bij = 0.0
        bjj = 0.0
        for k in range(n):
            sk = s[k]
            bii += t3[i, i, k] * sk
            bij += t3[i, j, k] * sk
            bjj += t3[j, j, k] * sk
            if sk != 0.0:
                ri = 0.0
                rj = 0.0
                for l in range(n):
                    ri += t3[i, k, l] * s[l]
                    rj += t3[j, k, l] * s[l]
                ai += ri * sk
                aj += rj * sk
        out[1, 0] += c3 * 3.0 * ai
        out[0, 1] += c3 * 3.0 * aj
        out[2, 0] += c3 * 3.0 * bii
        out[1, 1] += c3 * 6.0 * bij
        out[0, 2] += c3 * 3.0 * bjj
        out[3, 0] += c3 * t3[i, i, i]
        out[2, 1] += c3 * 3.0 * t3[i, i, j]
        out[1, 2] += c3 * 3.0 * t3[i, j, j]
        out[0, 3] += c3 * t3[j, j, j]
    if c4 != 0.0:
        d10 = 0.0
        d01 = 0.0
        d20 = 0.0
        d11 = 0.0
        d02 = 0.0
        d30 = 0.0
        d21 = 0.0
        d12 = 0.0
        d03 = 0.0
        for k in range(n):
            sk = s[k]
            d30 += t4[i, i, i, k] * sk
            d21 += t4[i, i, j, k] * sk
            d12 += t4[i, j, j, k] * sk
            d03 += t4[j, j, j, k] * sk
            if sk != 0.0:
                for l in range(n):
                    sl = s[l]
                    if sl == 0.0:
                        continue
                    skl = sk * sl
                    d20 += t4[i, i, k, l] * skl
                    d11 += t4[i, j, k, l] * skl
                    d02 += t4[j, j, k, l] * skl
                    ri = 0.0
                    rj = 0.0
                    for m in range(n):
                        ri += t4[i, k, l, m] * s[m]
                        rj += t4[j, k, l, m] * s[m]
                    d10 += ri * skl
                    d01 += rj * skl
        out[1, 0] += c4 * 4.0 * d10
        out[0, 1] += c4 * 4.0 * d01
        out[2, 0] += c4 * 6.0 * d20
        out[1, 1] += c4 * 12.0 * d11
        out[0, 2] += c4 * 6.0 * d02
        out[3, 0] += c4 * 4.0 * d30
        out[2, 1] += c4 * 12.0 * d21
        out[1, 2] += c4 * 12.0 * d12
        out[0, 3] += c4 * 4.0 * d03
        out[4, 0] += c4 * t4[i, i, i, i]
        out[3, 1] += c4 * 4.0 * t4[i, i, i, j]
        out[2, 2] += c4 * 6.0 * t4[i, i, j, j]
        out[1, 3] += c4 * 4.0 * t4[i, j, j, j]
        out[0, 4] += c4 * t4[j, j, j, j]
    s[i] = si
    s[j] = sj


@numba.njit(cache=True)
def _poly(c, x, y):
    v = 0.0
    xa = 1.0
    for a in range(5):
        yb = 1.0
        for b in range(5 - a):
            v += c[a, b] * xa * yb
            yb *= y
        xa *= x
    return v


@numba.njit(cache=True)
def _run(s, energy, t2, t3, t4, c2, c3, c4, pairs, angles, logu, gvec, gang, glogu, thin,
         sweep0, samples, n_rec):
    """Run ``angles.shape[0]`` sweeps in place; returns (energy, accepted, proposed, n_rec)."""
    n = s.size
    coeffs = np.zeros((5, 5))
    accepted = 0
    proposed = 0
    n_target = float(n)
    s_new = np.empty(n)
    for sw in range(angles.shape[0]):
        for mv in range(n):
            i = pairs[sw, mv, 0]
            j = pairs[sw, mv, 1]
            _pair_coeffs(s, i, j, t2, t3, t4, c2, c3, c4, coeffs)
            th = angles[sw, mv]
            ct = np.cos(th)
            st = np.sin(th)
            x, y = s[i], s[j]
            xn = ct * x - st * y
            yn = st * x + ct * y
            dh = _poly(coeffs, xn, yn) - _poly(coeffs, x, y)
            proposed += 1
            if logu[sw, mv] < dh:
                s[i] = xn
                s[j] = yn
                energy += dh
                accepted += 1
        # one global rotation in a random plane
        u = gvec[sw, 0]
        v = gvec[sw, 1].copy()
        nu = np.sqrt(np.sum(u * u))
        u = u / nu
        v = v - np.sum(v * u) * u
        v = v / np.sqrt(np.sum(v * v))
        a = np.sum(s * u)
        b = np.sum(s * v)
        ct = np.cos(gang[sw])
        st = np.sin(gang[sw])
        for k in range(n):
            s_new[k] = s[k] + a * ((ct - 1.0) * u[k] + st * v[k]) + b * (-st * u[k] + (ct - 1.0) * v[k])
        e_new = _energy(s_new, t2, t3, t4, c2, c3, c4)
        proposed += 1
        if glogu[sw] < e_new - energy:
            s[:] = s_new
            energy = e_new
            accepted += 1
        # project back onto the sphere to stop rounding drift
        scale = np.sqrt(n_target / np.sum(s * s))
        for k in range(n):
            s[k] *= scale
        if thin > 0 and (sweep0 + sw + 1) % thin == 0 and n_rec < samples.shape[0]:
            samples[n_rec, :] = s
            n_rec += 1
    return energy, accepted, proposed, n_rec


# --- sampler API ------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerState:
    sigma: np.ndarray
    energy: float
    sweeps: int = 0
    accepted: int = 0
    proposed: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def initial_state(model: PSpinModel, rng: np.random.Generator) -> SamplerState:
    """Uniform draw on the sphere of radius ``sqrt(N)``."""
    g = rng.standard_normal(model.N)
    sigma = g * np.sqrt(model.N / np.sum(g * g))
    return SamplerState(sigma, model.energy(sigma))


def _draw_randomness(n: int, n_sweeps: int, rng: np.random.Generator):
    i = rng.integers(0, n, size=(n_sweeps, n))
    j = (i + rng.integers(1, n, size=(n_sweeps, n))) % n  # distinct from i, uniform otherwise
    pairs = np.stack([i, j], axis=-1).astype(np.int64)
    angles = rng.uniform(-np.pi, np.pi, size=(n_sweeps, n))
    logu = np.log(rng.random((n_sweeps, n)))
    gvec = rng.standard_normal((n_sweeps, 2, n))
    gang = rng.uniform(-np.pi, np.pi, size=n_sweeps)
    glogu = np.log(rng.random(n_sweeps))
    return pairs, angles, logu, gvec, gang, glogu


def run_sweeps(model: PSpinModel, state: SamplerState, n_sweeps: int, rng: np.random.Generator,
               thin: int = 0) -> tuple[SamplerState, np.ndarray]:
    """Advance ``n_sweeps`` sweeps; returns the new state and every ``thin``-th configuration."""
    s = state.sigma.copy()
    energy = state.energy
    acc, prop = state.accepted, state.proposed
    n_keep = (state.sweeps + n_sweeps) // thin - state.sweeps // thin if thin > 0 else 0
    samples = np.empty((n_keep, model.N))
    n_rec = 0
    done = 0
    args = model._args()
    while done < n_sweeps:
        m = min(CHUNK_SWEEPS, n_sweeps - done)
        rand = _draw_randomness(model.N, m, rng)
        energy, a, p, n_rec = _run(s, energy, *args, *rand, thin, state.sweeps + done, samples, n_rec)
        acc += a
        prop += p
        done += m
    new = SamplerState(s, float(energy), state.sweeps + n_sweeps, acc, prop)
    return new, samples[:n_rec]


def mcmc_sweep(model: PSpinModel, state: SamplerState, rng: np.random.Generator) -> SamplerState:
    """One sweep: ``N`` pair rotations and one global rotation, each Metropolis-accepted."""
    return run_sweeps(model, state, 1, rng)[0]


def sample_chain(model: PSpinModel, sweeps: int, burnin: int, rng: np.random.Generator,
                 thin: int = 10) -> tuple[SamplerState, np.ndarray]:
    state = initial_state(model, rng)
    state, _ = run_sweeps(model, state, burnin, rng)
    state = replace(state, sweeps=0)
    return run_sweeps(model, state, sweeps, rng, thin)


def _as_models(model) -> list[PSpinModel]:
    return [model] if isinstance(model, PSpinModel) else list(model)


def _batch_se(values: np.ndarray, n_batches: int = 10) -> float:
    batches = np.array_split(values, n_batches)
    means = np.array([b.mean() for b in batches if b.size])
    return float(means.std(ddof=1) / np.sqrt(means.size))


def estimate_spin_moments(model: PSpinModel | Sequence[PSpinModel], spec: MomentSpec, sweeps: int,
                          burnin: int, n_chains: int, rng: np.random.Generator,
                          thin: int = 10) -> MomentReport:
    """Disorder and thermal average of ``prod_l <prod_i s_i**e_li>`` over the first ``n`` coordinates.

    Chains for one disorder sample are grouped ``k`` at a time, one chain per
    replica. With several disorder samples the SE is taken across them; with
    one, across chain groups, or from batch means of a single group.
    """
    models = _as_models(model)
    if n_chains < spec.k:
        raise ValidationError("need at least one chain per replica")
    e = spec.exponents
    per_model, group_vals, last_series = [], [], None
    for mdl in models:
        if spec.n > mdl.N:
            raise ValidationError("spec has more coordinates than the model")
        groups = []
        for _ in range(n_chains // spec.k):
            prod = 1.0
            for l in range(spec.k):
                _, smp = sample_chain(mdl, sweeps, burnin, rng, thin)
                last_series = np.prod(smp[:, : spec.n] ** e[l], axis=1)
                prod *= last_series.mean()
            groups.append(prod)
        per_model.append(np.mean(groups))
        group_vals = groups
    vals = np.array(per_model)
    if vals.size > 1:
        se = vals.std(ddof=1) / np.sqrt(vals.size)
    elif len(group_vals) > 1:
        se = np.std(group_vals, ddof=1) / np.sqrt(len(group_vals))
    elif spec.k == 1:
        se = _batch_se(last_series)
    else:
        se = 0.0
    params = {"sweeps": sweeps, "burnin": burnin, "n_chains": n_chains, "thin": thin,
              "disorder_reps": len(models), "N": models[0].N}
    return MomentReport(float(vals.mean()), float(se), "finite-n", params)


@dataclass(frozen=True)
class OverlapHistogram:
    edges: np.ndarray
    probs: np.ndarray
    second_moment: float
    second_moment_se: float
    n_samples: int


def estimate_overlap_hist(model: PSpinModel | Sequence[PSpinModel], sweeps: int, burnin: int,
                          n_chains: int, bins, rng: np.random.Generator,
                          thin: int = 10) -> OverlapHistogram:
    """Empirical law of ``R_12 = s^1 . s^2 / N`` from pairs of independent chains."""
    models = _as_models(model)
    if n_chains < 2:
        raise ValidationError("need two chains per disorder sample")
    edges = np.histogram_bin_edges([-1.0, 1.0], bins=bins, range=(-1.0, 1.0))
    counts = np.zeros(edges.size - 1)
    second = []
    total = 0
    for mdl in models:
        r_all = []
        for _ in range(n_chains // 2):
            _, a = sample_chain(mdl, sweeps, burnin, rng, thin)
            _, b = sample_chain(mdl, sweeps, burnin, rng, thin)
            r_all.append(np.sum(a * b, axis=1) / mdl.N)
        r = np.concatenate(r_all)
        counts += np.histogram(r, bins=edges)[0]
        second.append(np.mean(r**2))
        total += r.size
    second = np.array(second)
    se = second.std(ddof=1) / np.sqrt(second.size) if second.size > 1 else 0.0
    return OverlapHistogram(edges, counts / max(total, 1), float(second.mean()), float(se), total)


def hamiltonian_covariance_mc(N: int, beta, sigma, rho, n_draws: int, seed: int) -> tuple[float, float]:
    """Empirical ``Cov(H(sigma), H(rho)) / N`` over coupling redraws, with its SE."""
    hs, hr = np.empty(n_draws), np.empty(n_draws)
    for d in range(n_draws):
        mdl = build(N, beta, seed=int(np.random.SeedSequence([seed, d]).generate_state(1)[0]))
        hs[d], hr[d] = mdl.energy(sigma), mdl.energy(rho)
    prod = hs * hr / N  # centered law, so E[H H] is the covariance
    return float(prod.mean()), float(prod.std(ddof=1) / np.sqrt(n_draws))


# --- cavity covariance comparison -------------------------------------------------

@dataclass(frozen=True)
class CavityCovDiff:
    difference: float
    bound: float


def cavity_cov_diff(xi: MixtureFunction, tail_sigma, tail_rho, R: float, C: float | None = None) -> CavityCovDiff:
    """Covariance change from renormalizing ``n`` cavity coordinates at scale ``R``.

    ``difference = sum_p (p/2) beta_p**2 sum_i s_i**2 r_i**2 / (4 (R**2 + 1))`` and
    ``bound = n C**4 sum_p (p/2) beta_p**2 / (4 (R**2 + 1))`` with ``C`` defaulting
    to the largest absolute tail value.
    """
    s = np.atleast_1d(np.asarray(tail_sigma, dtype=float))
    t = np.atleast_1d(np.asarray(tail_rho, dtype=float))
    if s.shape != t.shape:
        raise ValidationError("tail vectors must have equal length")
    c_max = float(max(np.max(np.abs(s)), np.max(np.abs(t)))) if s.size else 0.0
    C = c_max if C is None else float(C)
    if c_max > C:
        raise ValidationError("tail values exceed C")
    p = np.arange(xi.p_max + 1)
    weight = float(np.sum(0.5 * p * xi.beta**2))
    denom = 4.0 * (R * R + 1.0)
    diff = weight * float(np.sum(s**2 * t**2)) / denom
    bound = s.size * C**4 * weight / denom
    if diff > bound * (1.0 + 1e-12):
        raise ArithmeticError("covariance difference exceeds its bound")
    return CavityCovDiff(diff, bound)
