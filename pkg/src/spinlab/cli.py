"""Batch front end: ``python -m spinlab <subcommand>`` or the ``spinlab`` script.

Every run writes a CSV whose first line is a ``#`` header with the operation,
parameters, seed and a timestamp. The body depends only on the parameters and
the seed. Exit codes: 0 ok, 1 numerical failure, 2 invalid input, 3 budget.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import asdict, dataclass, field
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from functools import partial
from pathlib import Path

import numpy as np

from . import cascade, finiten, localfield, model, parisi, spinlaw, tilted
from .errors import BudgetExceeded, SpinlabError, ValidationError
from .seeding import derive_rng, map_chunks

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

OPERATIONS = ("constants", "pde", "cascade", "tilted", "localfield", "predict", "frce-scan",
              "finiten", "selftest")
CONFIG_KEYS = {"operation", "fixture", "params", "seed", "workers", "out"}
HIGH_TEMP_THRESHOLD = 0.25
PARAM_KEYS = {
    "constants": set(),
    "pde": {"t_steps", "x_window", "x_steps", "t_stride", "x_stride"},
    "cascade": {"K", "reps"},
    "tilted": {"samples"},
    "localfield": {"Q", "dt", "paths"},
    "predict": {"spec", "method", "reps", "K", "dt"},
    "frce-scan": {"spec", "R", "C", "C_fixed", "R_fixed", "K", "reps"},
    "finiten": {"N", "beta", "sweeps", "burnin", "chains", "disorder_reps", "bins", "spec", "warn_threshold"},
    "selftest": set(),
}


@dataclass
class ExperimentConfig:
    operation: str
    fixture: str | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise ValidationError(f"unknown operation {self.operation!r}")
        if not isinstance(self.params, dict):
            raise ValidationError("params must be a table/object")
        unknown = set(self.params) - PARAM_KEYS[self.operation]
        if unknown:
            raise ValidationError(f"unknown params for {self.operation}: {sorted(unknown)}")
        if int(self.seed) < 0 or int(self.workers) < 1:
            raise ValidationError("seed must be >= 0 and workers >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "operation" not in data:
            raise ValidationError("config needs an 'operation'")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        return tomllib.loads(text)
    data = json.loads(text)
    # a report sidecar carries the config under "config"
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    return data


# --- CSV output -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return str(v)


class Report:
    """Named CSV tables written below one reproducibility header."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.tables: list[tuple[str, list[str], list[list]]] = []
        self.summary: dict = {}

    def table(self, name: str, columns: list[str], rows) -> None:
        self.tables.append((name, columns, [list(r) for r in rows]))

    def header(self) -> str:
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        params = json.dumps({"fixture": self.cfg.fixture, **self.cfg.params}, sort_keys=True, default=str)
        return f"# spinlab {self.cfg.operation} params={params} seed={self.cfg.seed} created={stamp}\n"

    def body(self, index: int) -> str:
        _, cols, rows = self.tables[index]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self) -> list[str]:
        out = self.cfg.out
        written = []
        for i, (name, _, _) in enumerate(self.tables):
            text = self.header() + self.body(i)
            if out in (None, "-"):
                sys.stdout.write(text)
                continue
            path = Path(out)
            if i > 0:
                path = path.with_name(f"{path.stem}_{name}{path.suffix or '.csv'}")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
            written.append(str(path))
        if written:
            # machine-readable sidecar: the config replays the run exactly
            meta = {"config": self.cfg.to_dict(), "summary": self.summary, "tables": written}
            side = Path(written[0]).with_suffix(".json")
            side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
            written.append(str(side))
        return written


# --- operations -----------------------------------------------------------------

def _fixture(cfg: ExperimentConfig):
    if cfg.fixture is None:
        raise ValidationError("this operation needs --fixture")
    return model.load_fixture(cfg.fixture)


def _spec(p: dict) -> spinlaw.MomentSpec:
    spec = p.get("spec", [[2]])
    if isinstance(spec, str):
        spec = json.loads(Path(spec).read_text()) if Path(spec).exists() else json.loads(spec)
    return spinlaw.MomentSpec.from_json(spec)


def op_constants(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    c = model.scale_constants(xi, zeta)
    rows = [["s_zeta", c.s_zeta], ["s_zeta_integral", model.s_zeta_integral(xi, zeta)], ["s_hat", c.s_hat]]
    rows += [[f"S_{p}", v] for p, v in enumerate(c.s_seq)]
    rep.table("constants", ["quantity", "value"], rows)
    rep.summary = {"s_zeta": c.s_zeta, "s_hat": c.s_hat}


def op_pde(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    p = cfg.params
    sol = parisi.solve_pde_fd(xi, zeta, int(p.get("t_steps", 2000)), p.get("x_window"),
                              int(p.get("x_steps", 2000)))
    ts, xs = int(p.get("t_stride", 100)), int(p.get("x_stride", 20))
    rows = []
    t_idx = sorted(set(range(0, sol.t_grid.size, ts)) | {sol.t_grid.size - 1})
    for i in t_idx:
        for j in range(0, sol.x_grid.size, xs):
            rows.append([sol.t_grid[i], sol.x_grid[j], sol.u[i, j], sol.u_x[i, j]])
    rep.table("pde", ["t", "x", "u", "u_x"], rows)
    rep.summary = {"sup_gap_vs_closed_form": parisi.fd_gap(xi, zeta, sol)}


def _cascade_chunk(size, rng, zeta, xi, K):
    rows = []
    for _ in range(size):
        tree = cascade.sample_cascade(zeta, K, rng)
        f = cascade.sample_fields(tree, xi, 1, rng)
        ov = tree.overlap(0, np.arange(tree.n_leaves))
        rows.append(np.column_stack([tree.weights, np.atleast_1d(ov), f.y[:, 0], f.z[:, 0]]))
    return rows


def op_cascade(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    p = cfg.params
    K, reps = int(p.get("K", 64)), int(p.get("reps", 1))
    parts = map_chunks(partial(_cascade_chunk, zeta=zeta, xi=xi, K=K), reps, 1, cfg.seed, 0, cfg.workers)
    rows = []
    for r, part in enumerate(parts):
        for leaf, (w, ov, y, z) in enumerate(part[0]):
            rows.append([r, leaf, w, ov, y, z])
    rep.table("cascade", ["rep", "leaf", "weight", "overlap_to_first", "Y", "Z"], rows)


def _tilted_chunk(size, rng, xi, zeta):
    c = tilted.sample_chain(xi, zeta, size, rng)
    return np.column_stack([c.partial**2, c.partial**4])


def op_tilted(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    n = int(cfg.params.get("samples", 100000))
    parts = map_chunks(partial(_tilted_chunk, xi=xi, zeta=zeta), n, 1 << 16, cfg.seed, 0, cfg.workers)
    data = np.concatenate(parts)
    L = zeta.r + 1
    m2 = data[:, :L].mean(axis=0)
    var_sq = data[:, L:].mean(axis=0) - m2**2
    se = np.sqrt(np.maximum(var_sq, 0.0) / n)
    exact = tilted.second_moment_exact(xi, zeta)
    bound = tilted.moment_bound(xi, zeta)
    rows = [[k + 1, m2[k], se[k], exact[k], bound.per_level[k]] for k in range(L)]
    rep.table("tilted", ["level", "sample_second_moment", "se", "exact_second_moment", "bound"], rows)


def op_localfield(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    p = cfg.params
    Q = p.get("Q", [[zeta.q_star]])
    if isinstance(Q, str):
        Q = json.loads(Path(Q).read_text()) if Path(Q).exists() else json.loads(Q)
    Q = localfield.UltrametricMatrix(Q)
    dt, n = float(p.get("dt", 1e-3)), int(p.get("paths", 1000))
    parts = map_chunks(partial(_sim_chunk, xi=xi, zeta=zeta, Q=Q, dt=dt), n, 4096, cfg.seed, 0, cfg.workers)
    rows = []
    base = 0
    for z, x in parts:
        for a in range(z.shape[0]):
            for i in range(Q.d):
                rows.append([base + a, i, z[a, i], x[a, i]])
        base += z.shape[0]
    rep.table("localfield", ["path", "replica", "Z_qstar", "X_qstar"], rows)


def _sim_chunk(size, rng, xi, zeta, Q, dt):
    paths = localfield.simulate(xi, zeta, Q, dt, size, rng)
    return paths.at(zeta.q_star)


def _predict_chunk(size, rng, xi, zeta, spec, method, params):
    r = spinlaw.predict_moments(xi, zeta, spec, method, {**params, "n_rep": size}, rng)
    return r.estimate, r.se, size


def _pool(parts) -> tuple[float, float]:
    """Combine chunk means and SEs into an overall mean and SE."""
    est = np.array([p[0] for p in parts])
    se = np.array([p[1] for p in parts])
    n = np.array([p[2] for p in parts], dtype=float)
    mean = float(np.sum(est * n) / n.sum())
    # within-chunk variance recovered from each chunk SE
    within = np.sum((se**2 * n) * (n - 1)) + np.sum(n * (est - mean) ** 2)
    var = within / max(n.sum() - 1.0, 1.0)
    return mean, float(np.sqrt(var / n.sum()))


def op_predict(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    p = dict(cfg.params)
    spec = _spec(p)
    methods = p.get("method", "closed-form,rpc")
    methods = methods.split(",") if isinstance(methods, str) else list(methods)
    mc = {"K": int(p.get("K", 1024)), "dt": float(p.get("dt", 1e-3))}
    n_rep = int(p.get("reps", 20000))
    rows = []
    for idx, method in enumerate(methods):
        if method == "closed-form":
            r = spinlaw.predict_moments(xi, zeta, spec, method)
            est, se, used = r.estimate, r.se, {}
        else:
            used = {**mc, "n_rep": n_rep}
            parts = map_chunks(partial(_predict_chunk, xi=xi, zeta=zeta, spec=spec, method=method, params=mc),
                               n_rep, 2000, cfg.seed, idx, cfg.workers)
            est, se = _pool(parts)
        rows.append([method, json.dumps(used, sort_keys=True), est, se])
    rep.table("predict", ["method", "params", "estimate", "se"], rows)


def op_frce_scan(cfg: ExperimentConfig, rep: Report) -> None:
    xi, zeta = _fixture(cfg)
    p = cfg.params
    spec = _spec(p)
    R_values = [float(v) for v in p.get("R", [10, 20, 40, 80])]
    C_values = [float(v) for v in p.get("C", [2, 4, 6])]
    res = spinlaw.frce_scan(xi, zeta, spec, cfg.seed, R_values, float(p.get("C_fixed", 6.0)), C_values,
                            float(p.get("R_fixed", 100.0)), int(p.get("K", 4096)), int(p.get("reps", 1000)))
    rows = [["frce", json.dumps({"C": q.C, "R": q.R}), q.estimate, q.se, q.gap]
            for q in res.r_scan + res.c_scan]
    rows.append(["target", "{}", res.target, res.target_se, 0.0])
    rep.table("frce_scan", ["method", "params", "estimate", "se", "gap"], rows)
    rep.summary = {"r_trend_ok": res.r_trend_ok, "c_trend_ok": res.c_trend_ok, "final_ok": res.final_ok}


def _parse_beta(beta) -> dict:
    if isinstance(beta, dict):
        return {int(k): float(v) for k, v in beta.items()}
    out = {}
    for item in str(beta).split(","):
        if item.strip():
            k, v = item.split(":")
            out[int(k)] = float(v)
    return out


def _finiten_task(size, rng, N, beta, seed, sweeps, burnin, chains, spec, bins):
    # size is always 1: one disorder sample per task
    mdl = finiten.build(N, beta, seed=seed)
    mom = finiten.estimate_spin_moments(mdl, spec, sweeps, burnin, max(chains, spec.k), rng)
    hist = finiten.estimate_overlap_hist(mdl, sweeps, burnin, max(2, chains), bins, rng)
    return mom.estimate, hist.probs * hist.n_samples, hist.second_moment, hist.edges


def op_finiten(cfg: ExperimentConfig, rep: Report) -> None:
    p = cfg.params
    beta = _parse_beta(p.get("beta", "2:0.2"))
    if sum(b * b for b in beta.values()) > float(p.get("warn_threshold", HIGH_TEMP_THRESHOLD)):
        warnings.warn("sum of beta_p^2 above the high-temperature threshold; mixing is not certified")
    N = int(p.get("N", 64))
    reps = int(p.get("disorder_reps", 16))
    spec = _spec(p)
    tasks = []
    for d in range(reps):
        seed_d = int(np.random.SeedSequence([cfg.seed, 1, d]).generate_state(1)[0])
        tasks.append(partial(_finiten_task, N=N, beta=beta, seed=seed_d, sweeps=int(p.get("sweeps", 20000)),
                             burnin=int(p.get("burnin", 2000)), chains=int(p.get("chains", 2)), spec=spec,
                             bins=int(p.get("bins", 40))))
    results = _run_tasks(tasks, cfg)
    est = np.array([r[0] for r in results])
    r2 = np.array([r[2] for r in results])
    counts = np.sum([r[1] for r in results], axis=0)
    edges = results[0][3]
    rep.table("moments", ["quantity", "estimate", "se"],
              [["moment", est.mean(), _se(est)], ["R12_second_moment", r2.mean(), _se(r2)]])
    rep.table("hist", ["bin_left", "bin_right", "probability"],
              [[edges[i], edges[i + 1], counts[i] / counts.sum()] for i in range(counts.size)])


def _se(a: np.ndarray) -> float:
    return float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0


def _run_tasks(tasks, cfg):
    """One derived stream per disorder task, so results do not depend on ``workers``."""
    if cfg.workers <= 1:
        return [t(1, derive_rng(cfg.seed, 2, d)) for d, t in enumerate(tasks)]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futs = [pool.submit(t, 1, derive_rng(cfg.seed, 2, d)) for d, t in enumerate(tasks)]
        return [f.result() for f in futs]


def selftest_checks(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Fast invariant suite used by the ``selftest`` subcommand."""
    out = []
    rng = derive_rng(seed, 99)

    worst = 0.0
    for _ in range(100):
        xi, zeta = model.random_fixture(rng)
        c = model.scale_constants(xi, zeta)
        worst = max(worst, abs(c.s_zeta - model.s_zeta_integral(xi, zeta)) * 1e4,
                    abs(c.s_hat - (c.s_zeta - xi(1.0, 1) + xi(zeta.q_star, 1))) * 1e12,
                    abs(c.s_seq[zeta.r] - c.s_hat) * 1e12)
    out.append(("scale identities", worst <= 1.0, f"scaled worst {worst:.3g}"))

    xi, zeta = model.fixture_f1()
    sol = parisi.solve_pde_fd(xi, zeta, 400, None, 400)
    gap = parisi.fd_gap(xi, zeta, sol)
    out.append(("parisi fd vs closed form", gap <= 1e-3, f"gap {gap:.3g}"))

    worst = 0.0
    for _ in range(20):
        xf, zf = model.random_fixture(rng)
        k = int(rng.integers(0, zf.r + 1))
        zs = float(rng.normal(0.0, 1.0))
        m, v = tilted.conditional_params(xf, zf, k, zs)
        mass, mq, vq = tilted.kernel_moments_quadrature(xf, zf, k, zs)
        worst = max(worst, abs(m - mq), abs(v - vq), abs(mass - 1.0))
    out.append(("kernel conjugacy", worst <= 1e-8, f"worst {worst:.3g}"))

    exact = tilted.second_moment_exact(xi, zeta)
    ok = bool(np.all(exact <= tilted.moment_bound(xi, zeta).per_level))
    out.append(("second moment bound", ok, f"exact {exact}"))

    f = rng.uniform(-5, 5, 20)
    worst = max(float(np.max(np.abs(spinlaw.rho_moment(f, xi, zeta, e) -
                                    spinlaw.rho_moment(f, xi, zeta, e, "quadrature")))) for e in range(7))
    out.append(("rho closed form vs quadrature", worst <= 1e-8, f"worst {worst:.3g}"))

    d = finiten.cavity_cov_diff(model.MixtureFunction.pure(2, 0.5), [1.0], [1.0], 10.0)
    out.append(("cavity covariance example", abs(d.difference - 0.25 / 404) <= 1e-15, f"{d.difference:.6g}"))

    chain = tilted.sample_chain(xi, zeta, 200000, rng)
    m2 = (chain.partial**2).mean(axis=0)
    se = (chain.partial**2).std(axis=0) / np.sqrt(chain.partial.shape[0])
    out.append(("tilted chain moments", bool(np.all(np.abs(m2 - exact) <= 4 * se)), f"{m2}"))
    return out


def op_selftest(cfg: ExperimentConfig, rep: Report) -> None:
    checks = selftest_checks(cfg.seed)
    rep.table("selftest", ["check", "passed", "detail"], checks)
    rep.summary = {"passed": all(c[1] for c in checks)}


DISPATCH = {
    "constants": op_constants, "pde": op_pde, "cascade": op_cascade, "tilted": op_tilted,
    "localfield": op_localfield, "predict": op_predict, "frce-scan": op_frce_scan,
    "finiten": op_finiten, "selftest": op_selftest,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one configured operation; returns the process exit code."""
    rep = Report(cfg)
    try:
        DISPATCH[cfg.operation](cfg, rep)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except (SpinlabError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    rep.write()
    for k, v in rep.summary.items():
        print(f"{k}: {v}", file=sys.stderr)
    if cfg.operation == "selftest" and not rep.summary.get("passed", False):
        return 1
    return 0


# --- argument parsing -------------------------------------------------------------

def _add(sp, *names, **kw):
    kw.setdefault("default", None)
    sp.add_argument(*names, **kw)


def build_parser() -> argparse.ArgumentParser:
    def common_flags(parser, default):
        parser.add_argument("--config", default=default, help="TOML or JSON experiment config")
        parser.add_argument("--seed", type=int, default=default)
        parser.add_argument("--workers", type=int, default=default)
        parser.add_argument("--out", default=default, help="CSV path (default: stdout)")

    ap = argparse.ArgumentParser(prog="spinlab", description=__doc__.splitlines()[0])
    common_flags(ap, None)
    # the same flags after the subcommand; SUPPRESS keeps values given before it
    common = argparse.ArgumentParser(add_help=False)
    common_flags(common, argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="operation")

    def fixture_cmd(name, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        _add(sp, "--fixture", "--zeta", dest="fixture", help="fixture JSON with beta and zeta")
        return sp

    fixture_cmd("constants", "scale constants of a fixture")
    sp = fixture_cmd("pde", "finite-difference Parisi solution")
    _add(sp, "--t-steps", type=int)
    _add(sp, "--x-window", type=float)
    _add(sp, "--x-steps", type=int)
    _add(sp, "--t-stride", type=int)
    _add(sp, "--x-stride", type=int)
    sp = fixture_cmd("cascade", "sample cascades with leaf fields")
    _add(sp, "--K", type=int)
    _add(sp, "--reps", type=int)
    sp = fixture_cmd("tilted", "tilted chain moments")
    _add(sp, "--samples", type=int)
    sp = fixture_cmd("localfield", "local-field endpoint samples")
    _add(sp, "--Q", help="overlap matrix as JSON text or file")
    _add(sp, "--dt", type=float)
    _add(sp, "--paths", type=int)
    sp = fixture_cmd("predict", "spin-moment predictions")
    _add(sp, "--spec", help="exponent matrix as JSON text or file")
    _add(sp, "--method", help="comma list of closed-form, rpc, sde")
    _add(sp, "--reps", type=int)
    _add(sp, "--K", type=int)
    _add(sp, "--dt", type=float)
    sp = fixture_cmd("frce-scan", "cavity estimator limit scans")
    _add(sp, "--spec")
    _add(sp, "--R", type=float, nargs="+")
    _add(sp, "--C", type=float, nargs="+")
    _add(sp, "--K", type=int)
    _add(sp, "--reps", type=int)
    sp = sub.add_parser("finiten", help="finite-N Gibbs sampling", parents=[common])
    _add(sp, "--N", type=int)
    _add(sp, "--beta", help="degree:value list, e.g. 2:0.2,3:0.1")
    _add(sp, "--sweeps", type=int)
    _add(sp, "--burnin", type=int)
    _add(sp, "--chains", type=int)
    _add(sp, "--disorder-reps", type=int)
    _add(sp, "--bins", type=int)
    _add(sp, "--spec")
    sub.add_parser("selftest", help="fast invariant suite", parents=[common])
    return ap


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    base = load_config(ns.config) if ns.config else {}
    if base:
        unknown = set(base) - CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    data = dict(base)
    data["params"] = dict(base.get("params", {}))
    if ns.operation:
        if base.get("operation") not in (None, ns.operation):
            raise ValidationError("config operation conflicts with the subcommand")
        data["operation"] = ns.operation
    for key in ("seed", "workers", "out"):
        if getattr(ns, key) is not None:
            data[key] = getattr(ns, key)
    skip = {"config", "seed", "workers", "out", "operation", "fixture"}
    for key, val in vars(ns).items():
        if key not in skip and val is not None:
            data["params"][key] = val
    if getattr(ns, "fixture", None) is not None:
        data["fixture"] = ns.fixture
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (ValidationError, ValueError, OSError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
