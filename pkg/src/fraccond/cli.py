"""Command-line interface: configuration, dispatch, and result persistence.

Subcommands: forward | dn | reduce | invert | walk | limits.
Every command reads a JSON config (schema fraccond-config-v1, shipped as
config_schema_v1.json next to this module), writes CSV outputs with 17
significant digits and an atomically written manifest.json that echoes the
config and records per-check pass/fail values.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical failure.
Re-running a command with identical config and seed reproduces every data
file byte-for-byte (the manifest's wall_clock_s field is the only
non-reproducible output).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .core import FracParams, Grid
from .forward import (
    SolverError,
    assemble_dn,
    dn_gap,
    solve_dirichlet,
    verify_reduction,
)
from .inverse import InversionConfig, ReconstructionError, reconstruct_gamma
from .limits import (
    bilinear_limit_study,
    grad_limit_study,
    gradient_distributional_decay,
    operator_limit_check,
)
from .operators import Conductivity, assemble_conductivity
from .profiles import bump_m, gaussian, make_conductivity, profile_from_name
from .walk import (Ensemble, WalkParams, master_step, q_master_step,
                   simulate, truncation_tail_mass)

FMT = "%.17g"
SCHEMA_NAME = "fraccond-config-v1"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

_TASK_KEYS = {
    "forward": {"source"},
    "dn": {"W1", "W2"},
    "reduce": set(),
    "invert": {"observed_dn", "truth_gamma", "reg_lambda", "max_iter", "tol",
               "step_damping"},
    "walk": {"K", "steps", "particles", "initial_site", "compare_master"},
    "limits": {"study", "s_list"},
}

_TOP_KEYS = {"schema", "grid", "frac", "gamma", "task", "seed", "output_dir"}
_GRID_KEYS = {"L", "N", "omega"}
_FRAC_KEYS = {"s", "n"}
_GAMMA_KEYS = {"profile", "amplitude", "center", "width", "separation", "path"}


def _reject_unknown(block: dict, allowed: set, where: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def load_config(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(cfg, _TOP_KEYS, "config root")
    if cfg.get("schema") != SCHEMA_NAME:
        raise ConfigError(f"config schema must be {SCHEMA_NAME!r}")
    for block, keys in (("grid", _GRID_KEYS), ("frac", _FRAC_KEYS)):
        if block not in cfg or not isinstance(cfg[block], dict):
            raise ConfigError(f"missing required block {block!r}")
        _reject_unknown(cfg[block], keys, f"block {block!r}")
    if "gamma" in cfg:
        _reject_unknown(cfg["gamma"], _GAMMA_KEYS, "block 'gamma'")
    task = cfg.get("task", {})
    if not isinstance(task, dict):
        raise ConfigError("block 'task' must be an object")
    _reject_unknown(task, _TASK_KEYS[command], f"task block for {command!r}")
    return cfg


def build_grid(cfg: dict) -> Grid:
    gblock = cfg["grid"]
    try:
        omega = gblock["omega"]
        if not (isinstance(omega, (list, tuple)) and len(omega) == 2):
            raise ConfigError("grid.omega must be a pair [a, b]")
        if not omega[0] < omega[1]:
            raise ConfigError("grid.omega bounds must satisfy a < b")
        return Grid(L=float(gblock["L"]), N=int(gblock["N"]),
                    a=float(omega[0]), b=float(omega[1]))
    except KeyError as exc:
        raise ConfigError(f"grid block missing key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def build_frac(cfg: dict) -> FracParams:
    fblock = cfg["frac"]
    try:
        return FracParams(float(fblock["s"]), int(fblock.get("n", 1)))
    except KeyError as exc:
        raise ConfigError(f"frac block missing key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"frac: {exc}") from exc


def build_gamma(cfg: dict, grid: Grid, seed: int) -> Conductivity:
    gblock = cfg.get("gamma", {"profile": "constant"})
    name = gblock.get("profile")
    if name is None:
        raise ConfigError("gamma.profile is required")
    if name == "from-file":
        path = gblock.get("path")
        if path is None:
            raise ConfigError("gamma.path is required for profile 'from-file'")
        data = _read_csv(path)
        vals = data[:, 1]
        if vals.shape != (grid.N,):
            raise ConfigError("gamma file length does not match grid.N")
        m = np.sqrt(vals) - 1.0
        m[grid.exterior_idx] = 0.0
        return Conductivity.from_m(grid, m)
    try:
        m_fn = profile_from_name(name, seed=seed, **{
            k: gblock[k] for k in ("amplitude", "center", "width", "separation")
            if k in gblock})
        return make_conductivity(grid, m_fn)
    except ValueError as exc:
        raise ConfigError(f"gamma: {exc}") from exc


# ---------------------------------------------------------------- io

def _write_csv(path: str, header: str, columns) -> str:
    arr = np.column_stack(columns)
    np.savetxt(path, arr, fmt=FMT, delimiter=",", header=header, comments="")
    return path


def _read_csv(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _write_manifest(outdir: str, command: str, cfg: dict, seed: int,
                    checks: dict, outputs: list, t0: float) -> str:
    manifest = {
        "artifact": "fraccond",
        "version": __version__,
        "command": command,
        "config": cfg,
        "seed": seed,
        "wall_clock_s": time.time() - t0,
        "checks": checks,
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    path = os.path.join(outdir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _exterior_set(grid: Grid, selector, name: str) -> np.ndarray:
    if selector is None or selector == "exterior":
        return grid.exterior_idx
    if isinstance(selector, (list, tuple)) and len(selector) == 2:
        lo, hi = float(selector[0]), float(selector[1])
        idx = grid.exterior_idx
        sel = idx[(grid.nodes[idx] >= lo) & (grid.nodes[idx] <= hi)]
        if sel.size == 0:
            raise ConfigError(f"task.{name}: interval contains no exterior nodes")
        return sel
    raise ConfigError(f"task.{name} must be 'exterior' or an [lo, hi] pair")


# ---------------------------------------------------------------- commands

def cmd_forward(cfg, grid, fp, gamma, seed, outdir):
    task = cfg.get("task", {})
    src = task.get("source", {"type": "zero"})
    kind = src.get("type", "zero")
    g = np.zeros(grid.N)
    if kind == "unit":
        node = int(src.get("node", grid.exterior_idx[0]))
        if node not in grid.exterior_idx:
            raise ConfigError("task.source.node must be an exterior node index")
        g[node] = 1.0
    elif kind == "gaussian":
        prof = gaussian(float(src.get("center", -0.75 * grid.L)),
                        float(src.get("width", grid.L / 10.0)))
        g[grid.exterior_idx] = prof(grid.nodes[grid.exterior_idx])
    elif kind != "zero":
        raise ConfigError("task.source.type must be zero | unit | gaussian")
    op = assemble_conductivity(grid, fp, gamma)
    u = solve_dirichlet(op, g)
    I = grid.interior_idx
    resid = float(np.max(np.abs((op.matrix @ u)[I]))) if I.size else 0.0
    scale = float(np.max(np.abs(op.matrix)) * max(np.max(np.abs(u)), 1e-300))
    rel = resid / scale
    files = [_write_csv(os.path.join(outdir, "solution.csv"), "x,u",
                        (grid.nodes, u))]
    checks = {"interior_residual": {"value": rel, "pass": bool(rel <= 1e-10),
                                    "criterion": "<= 1e-10 relative"}}
    return files, checks


def cmd_dn(cfg, grid, fp, gamma, seed, outdir):
    task = cfg.get("task", {})
    W1 = _exterior_set(grid, task.get("W1"), "W1")
    W2 = _exterior_set(grid, task.get("W2"), "W2")
    M = assemble_dn(grid, fp, gamma, W1, W2)
    files = [
        _write_csv(os.path.join(outdir, "dn_matrix.csv"),
                   ",".join(f"src{k}" for k in W1),
                   tuple(M.matrix[:, j] for j in range(W1.size))),
        _write_csv(os.path.join(outdir, "dn_sources.csv"), "index,x",
                   (W1.astype(float), grid.nodes[W1])),
        _write_csv(os.path.join(outdir, "dn_observations.csv"), "index,x",
                   (W2.astype(float), grid.nodes[W2])),
        _write_csv(os.path.join(outdir, "gamma.csv"), "x,gamma,m",
                   (grid.nodes, gamma.values, gamma.m_values)),
    ]
    checks = {}
    if np.array_equal(W1, W2):
        asym = float(np.max(np.abs(M.matrix - M.matrix.T))
                     / max(np.max(np.abs(M.matrix)), 1e-300))
        checks["dn_symmetry"] = {"value": asym, "pass": bool(asym <= 1e-10),
                                 "criterion": "<= 1e-10 relative"}
    return files, checks


def cmd_reduce(cfg, grid, fp, gamma, seed, outdir):
    resid = verify_reduction(grid, fp, gamma)
    E = grid.exterior_idx
    f = np.zeros(grid.N)
    v = np.zeros(grid.N)
    f[E] = gaussian(-0.6 * grid.L, grid.L / 4)(grid.nodes[E])
    v[E] = gaussian(-0.4 * grid.L, grid.L / 3)(grid.nodes[E])
    left, right = dn_gap(grid, fp, gamma, f, v)
    gap_err = abs(left - right) / max(abs(right), 1e-300)
    files = [_write_csv(os.path.join(outdir, "reduction.csv"),
                        "reduction_residual,dn_gap_left,dn_gap_right",
                        ([resid], [left], [right]))]
    checks = {
        "reduction_residual": {"value": resid, "pass": bool(resid <= 1e-10),
                               "criterion": "<= 1e-10 relative to matrix scale"},
        "dn_gap_identity": {"value": gap_err, "pass": bool(gap_err <= 1e-9),
                            "criterion": "left = right to 1e-9 relative"},
    }
    return files, checks


def cmd_invert(cfg, grid, fp, gamma, seed, outdir):
    task = cfg.get("task", {})
    obs_path = task.get("observed_dn")
    if obs_path is None:
        raise ConfigError("task.observed_dn is required for invert")
    matrix = _read_csv(obs_path)
    E = grid.exterior_idx
    if matrix.shape != (E.size, E.size):
        raise ConfigError("observed DN matrix shape does not match the "
                          "exterior node set of this grid")
    from .forward import DnMatrix

    observed = DnMatrix(E, E, matrix)
    inv_cfg = InversionConfig(
        reg_lambda=float(task.get("reg_lambda", 1e-12)),
        max_iter=int(task.get("max_iter", 40)),
        tol=float(task.get("tol", 1e-9)),
        step_damping=float(task.get("step_damping", 0.5)),
    )
    report = reconstruct_gamma(observed, grid, fp, inv_cfg)
    files = [
        _write_csv(os.path.join(outdir, "recovered_gamma.csv"), "x,gamma,m,q",
                   (grid.nodes, report.gamma.values, report.m, report.q.values)),
        _write_csv(os.path.join(outdir, "iterations.csv"), "iteration,residual",
                   (np.arange(len(report.residual_history), dtype=float),
                    np.array(report.residual_history))),
    ]
    checks = {
        "converged": {"value": bool(report.converged),
                      "pass": bool(report.converged),
                      "criterion": "relative data residual below tol"},
        "data_residual": {"value": report.data_residual,
                          "pass": bool(report.data_residual <= 1e-6),
                          "criterion": "<= 1e-6 relative (noiseless data)"},
        "monotone_residuals": {
            "value": bool(all(a >= b for a, b in
                              zip(report.residual_history,
                                  report.residual_history[1:]))),
            "pass": bool(all(a >= b for a, b in
                             zip(report.residual_history,
                                 report.residual_history[1:]))),
            "criterion": "damped objective non-increasing"},
    }
    truth_path = task.get("truth_gamma")
    if truth_path is not None:
        truth = _read_csv(truth_path)[:, 1]
        err = float(np.max(np.abs(report.gamma.values - truth))
                    / np.max(np.abs(truth)))
        checks["recovery_error"] = {"value": err, "pass": bool(err <= 0.01),
                                    "criterion": "<= 1% Linf vs truth"}
    return files, checks


def cmd_walk(cfg, grid, fp, gamma, seed, outdir):
    task = cfg.get("task", {})
    K = task.get("K")
    wp = WalkParams.from_grid(grid, fp, gamma, None if K is None else int(K))
    steps = int(task.get("steps", 10))
    particles = int(task.get("particles", 100_000))
    init = task.get("initial_site", "center")
    site = grid.N // 2 if init == "center" else int(init)
    if not 0 <= site < grid.N:
        raise ConfigError("task.initial_site outside the lattice")
    ens = Ensemble.point_source(particles, site, rng_seed=seed)
    _, hist = simulate(ens, wp, steps)
    files = [_write_csv(os.path.join(outdir, f"histogram_{steps:04d}.csv"),
                        "x,density", (grid.nodes, hist))]
    checks = {
        "tail_mass_fraction": {"value": truncation_tail_mass(wp),
                               "pass": True,
                               "criterion": "reported (truncation at K)"},
    }
    if task.get("compare_master", True):
        # the simulator realizes the row-normalized transpose kernel; that is
        # its deterministic counterpart for any gamma, and it coincides with
        # the incoming-form master equation exactly when gamma is constant
        v = np.zeros(grid.N)
        v[site] = 1.0
        u = v.copy()
        for _ in range(steps):
            v = q_master_step(v, wp)
            u = master_step(u, wp)
        files.append(_write_csv(os.path.join(outdir, f"master_{steps:04d}.csv"),
                                "x,density", (grid.nodes, u)))
        files.append(_write_csv(os.path.join(outdir,
                                             f"transpose_{steps:04d}.csv"),
                                "x,density", (grid.nodes, v)))
        tv_q = 0.5 * float(np.sum(np.abs(hist - v)))
        checks["mc_transpose_tv"] = {"value": tv_q, "pass": bool(tv_q <= 0.02),
                                     "criterion": "total variation <= 0.02"}
        if np.all(gamma.m_values == 0.0):
            tv = 0.5 * float(np.sum(np.abs(hist - u)))
            checks["mc_master_tv"] = {"value": tv, "pass": bool(tv <= 0.02),
                                      "criterion": "total variation <= 0.02 "
                                                   "(constant gamma)"}
    return files, checks


def cmd_limits(cfg, grid, fp, gamma, seed, outdir):
    task = cfg.get("task", {})
    study = task.get("study", "all")
    s_list = [float(s) for s in task.get("s_list", [0.6, 0.8, 0.9, 0.95])]
    if study not in ("grad", "bilinear", "operator", "decay", "all"):
        raise ConfigError("task.study must be grad|bilinear|operator|decay|all")
    files, checks = [], {}
    u_fn = gaussian(0.0, 1.0)
    m_fn = bump_m(0.3, 0.0, (grid.b - grid.a) / 2.0)

    def dump(name, st):
        files.append(_write_csv(
            os.path.join(outdir, f"limit_{name}.csv"),
            "s,value,reference,gap,n_used,converged",
            ([r.s for r in st.rows], [r.value for r in st.rows],
             [r.reference for r in st.rows], [r.gap for r in st.rows],
             [float(r.n_used) for r in st.rows],
             [float(r.converged) for r in st.rows])))
        gaps = st.gaps()
        mono = all(a >= b for a, b in zip(gaps, gaps[1:]))
        checks[f"{name}_gap_monotone"] = {
            "value": bool(mono), "pass": bool(mono),
            "criterion": "gap column non-increasing in s"}

    if study in ("grad", "all"):
        dump("grad", grad_limit_study(u_fn, s_list, L=grid.L))
    if study in ("bilinear", "all"):
        st = bilinear_limit_study(m_fn, gaussian(-grid.L / 12, 1.0),
                                  gaussian(grid.L / 8, 1.2), s_list,
                                  L=grid.L, omega=(grid.a, grid.b))
        dump("bilinear", st)
    if study in ("operator", "all"):
        st = operator_limit_check(m_fn, u_fn, s_list, L=grid.L,
                                  omega=(grid.a, grid.b))
        files.append(_write_csv(
            os.path.join(outdir, "limit_operator.csv"),
            "s,value,reference,gap,n_used,converged",
            ([r.s for r in st.rows], [r.value for r in st.rows],
             [r.reference for r in st.rows], [r.gap for r in st.rows],
             [float(r.n_used) for r in st.rows],
             [float(r.converged) for r in st.rows])))
    if study in ("decay", "all"):
        ub = bump_m(1.0, grid.L / 20.0, grid.L / 3.0)

        def t_fn(x, y):
            return np.exp(-(((x + grid.L / 6.0) ** 2
                             + (y - grid.L / 10.0) ** 2)) / 0.5)

        vals = gradient_distributional_decay(ub, t_fn, s_list, L=grid.L / 2.0)
        files.append(_write_csv(os.path.join(outdir, "limit_decay.csv"),
                                "s,pairing", (s_list, vals)))
        mags = np.abs(vals)
        dec = bool(mags[-1] <= 0.5 * mags[0])
        checks["decay_halving"] = {
            "value": float(mags[-1] / mags[0]) if mags[0] else 0.0,
            "pass": dec,
            "criterion": "final pairing magnitude <= 0.5 x first"}
    return files, checks


_COMMANDS = {
    "forward": cmd_forward,
    "dn": cmd_dn,
    "reduce": cmd_reduce,
    "invert": cmd_invert,
    "walk": cmd_walk,
    "limits": cmd_limits,
}


# ---------------------------------------------------------------- driver

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fraccond",
        description="fractional conductivity toolkit: forward solves, DN maps, "
                    "reduction checks, inversion, random walks, limit studies")
    p.add_argument("command", choices=sorted(_COMMANDS))
    p.add_argument("--config", required=True, help="path to a JSON run config")
    p.add_argument("--out", default=None, help="output directory "
                   "(default: config output_dir, else '.')")
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread cap (best effort, recorded in manifest)")
    return p


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    t0 = time.time()
    try:
        cfg = load_config(args.config, args.command)
        grid = build_grid(cfg)
        fp = build_frac(cfg)
        seed = int(cfg.get("seed", 0)) if args.seed is None else args.seed
        gamma = build_gamma(cfg, grid, seed)
        outdir = args.out or cfg.get("output_dir", ".")
    except FileNotFoundError as exc:
        print(f"fraccond: missing input file: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"fraccond: config error: {exc}", file=sys.stderr)
        return 2

    limiter = None
    if args.threads is not None:
        try:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(limits=args.threads)
        except ImportError:
            pass
    try:
        os.makedirs(outdir, exist_ok=True)
        files, checks = _COMMANDS[args.command](cfg, grid, fp, gamma, seed, outdir)
    except ConfigError as exc:
        print(f"fraccond: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"fraccond: missing input file: {exc}", file=sys.stderr)
        return 3
    except (SolverError, ReconstructionError, FloatingPointError) as exc:
        print(f"fraccond: {args.command}: numerical failure: {exc}",
              file=sys.stderr)
        return 4
    finally:
        if limiter is not None:
            limiter.unregister()

    if args.threads is not None:
        checks["threads"] = {"value": args.threads, "pass": True,
                             "criterion": "requested BLAS thread cap"}
    files.append(_write_manifest(outdir, args.command, cfg, seed, checks,
                                 files, t0))
    failed = [k for k, v in checks.items() if not v["pass"]]
    for k, v in checks.items():
        print(f"{k}: {'PASS' if v['pass'] else 'FAIL'} ({v['value']})")
    if failed:
        print(f"fraccond: {len(failed)} check(s) failed: {failed}",
              file=sys.stderr)
        return 4
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
