"""Command line front end: config parsing, dispatch and deterministic output.

Configs are JSON objects. Top-level keys::

    schema_version  1
    grid            {"T": float, "n_t": int, "n_u": int}
    seed, paths, tol, threads
    solver          {"tol": float, "coercivity_tol": float}
    game            finite game (solve-finite, validate)
    graphon         graphon game (solve-graphon, sample, converge, validate)
    sampling        {"kind", "N", "kappa"} (sample)
    convergence     run settings (converge)
    example         {"family", "params"} (example, validate)

Unknown keys are rejected at every level. Kernels come from the named
registry of :mod:`fredholm_games.timekernel` or from inline grids; graphons
from a small named registry or inline cell values. Every run writes a
``manifest.json`` with the normalized config, its hash, seeds, versions and
wall time; ``--config manifest.json`` reruns it.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import CoercivityError, FredholmGamesError, InvalidArgument
from .finite_game import FiniteGameSpec, build_from_graph, nash_gap, solve_equilibrium
from .graphon import (GraphonGameSpec, GraphonGrid, coercivity_check_graphon, graphon_noise,
                      solve_graphon, spectral_decompose, step_graphon)
from .noise import NoiseModel, idiosyncratic_model, noise_from_config, noise_to_config, simulate
from .timekernel import KernelGrid, TimeGrid, kernel_from_config, make_grid, zero_kernel

SCHEMA_VERSION = 1
TOP_KEYS = {"schema_version", "grid", "seed", "paths", "tol", "threads", "solver", "game", "graphon",
            "sampling", "convergence", "example", "output"}
EXIT_OK, EXIT_SCHEMA, EXIT_ASSUMPTION, EXIT_SOLVER, EXIT_NUMERICAL = 0, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# Config helpers


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise InvalidArgument(f"{where} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise InvalidArgument(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path) -> dict:
    """Read a config file, or the config recorded in a manifest."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"config {path} is not valid JSON: {exc}")
    if isinstance(cfg, dict) and "config_sha256" in cfg and "config" in cfg:
        cfg = cfg["config"]
    return cfg


def normalize_config(cfg: dict) -> dict:
    """Validate the top level and fill defaults; sections are checked by their builders."""
    _check_keys(cfg, TOP_KEYS, "config")
    out = json.loads(json.dumps(cfg))
    v = out.setdefault("schema_version", SCHEMA_VERSION)
    if v != SCHEMA_VERSION:
        raise InvalidArgument(f"unsupported schema_version {v!r}")
    g = out.setdefault("grid", {})
    _check_keys(g, {"T", "n_t", "n_u"}, "grid")
    g.setdefault("T", 1.0)
    g.setdefault("n_t", 32)
    g.setdefault("n_u", 64)
    for key in ("n_t", "n_u"):
        if not isinstance(g[key], int) or isinstance(g[key], bool):
            raise InvalidArgument(f"grid.{key} must be an integer")
    out.setdefault("seed", 0)
    out.setdefault("paths", 1000)
    if not isinstance(out["seed"], int) or not isinstance(out["paths"], int) or out["paths"] < 1:
        raise InvalidArgument("seed and paths must be integers (paths >= 1)")
    s = out.setdefault("solver", {})
    _check_keys(s, {"tol", "coercivity_tol", "energy_tol"}, "solver")
    s.setdefault("coercivity_tol", 1e-8)
    s.setdefault("energy_tol", 1e-10)
    if out.get("tol") is not None:
        s["tol"] = float(out["tol"])
    s.setdefault("tol", None)
    out.pop("tol", None)
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def build_grid(cfg: dict) -> TimeGrid:
    g = cfg["grid"]
    return make_grid(float(g["T"]), int(g["n_t"]))


def _positive(x, name):
    try:
        v = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise InvalidArgument(f"{name} must be numeric")
    if v.size == 0 or np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise InvalidArgument(f"{name} must be strictly positive")
    return v


GAME_KEYS = {"N", "B", "Bbar", "Lambda", "noise", "A_tilde", "B_tilde", "lam", "w", "kappa"}


def build_game(cfg: dict, grid: TimeGrid) -> FiniteGameSpec:
    """Finite game from either the graph form (A_tilde, B_tilde, lam, w) or the block form (N, B, Bbar, Lambda)."""
    gc = cfg.get("game")
    if gc is None:
        raise InvalidArgument("config has no 'game' section")
    _check_keys(gc, GAME_KEYS, "game")
    if "w" in gc:
        if {"B", "Bbar", "Lambda"} & set(gc):
            raise InvalidArgument("game: use either the graph form or the block form")
        w = np.asarray(gc["w"], dtype=float)
        N = w.shape[0]
        lam = float(_positive(gc.get("lam", 1.0), "game.lam"))
        A = kernel_from_config(grid, gc.get("A_tilde"), 1)
        B = kernel_from_config(grid, gc.get("B_tilde"), 1)
        noise = noise_from_config(grid, gc.get("noise"), N)
        kappa = float(gc.get("kappa", 1.0))
        return build_from_graph(A, B, lam, w, noise, kappa=kappa, check_weights=kappa == 1.0)
    if {"A_tilde", "B_tilde", "lam", "kappa"} & set(gc):
        raise InvalidArgument("game: graph-form keys need 'w'")
    if "N" not in gc:
        raise InvalidArgument("game needs 'N' (block form) or 'w' (graph form)")
    N = gc["N"]
    if not isinstance(N, int) or N < 1:
        raise InvalidArgument("game.N must be a positive integer")
    lam = _positive(gc.get("Lambda", 1.0), "game.Lambda") * np.ones(N)
    B = _causal_kernel(grid, gc.get("B"), N, "B")
    Bbar = _causal_kernel(grid, gc.get("Bbar"), N, "Bbar")
    noise = noise_from_config(grid, gc.get("noise"), N)
    return FiniteGameSpec(B, Bbar, lam, noise)


def _causal_kernel(grid, kc, N, name) -> KernelGrid:
    # causality (zero for s > t) is checked by FiniteGameSpec
    return kernel_from_config(grid, kc, N)


GRAPHON_FUNCS = {
    "product": lambda u, v, p: u * v,
    "half_one_plus_product": lambda u, v, p: 0.5 * (1.0 + u * v),
    "constant": lambda u, v, p: p.get("value", 1.0) + 0.0 * u * v,
    "min": lambda u, v, p: np.minimum(u, v),
    "exp_distance": lambda u, v, p: np.exp(-p.get("rate", 1.0) * np.abs(u - v)),
}


def build_graphon_values(gc: dict, n_u: int) -> GraphonGrid:
    W = gc.get("W")
    if W is None:
        raise InvalidArgument("graphon section needs 'W'")
    _check_keys(W, {"name", "params", "grid", "step"}, "graphon.W")
    if "name" in W:
        if W["name"] not in GRAPHON_FUNCS:
            raise InvalidArgument(f"unknown graphon {W['name']!r}; known: {sorted(GRAPHON_FUNCS)}")
        params = W.get("params", {})
        f = GRAPHON_FUNCS[W["name"]]
        u = (np.arange(n_u) + 0.5) / n_u
        return GraphonGrid(np.asarray(f(u[:, None], u[None, :], params), dtype=float) * np.ones((n_u, n_u)))
    if "step" in W:
        return step_graphon(np.asarray(W["step"], dtype=float), n_u)
    if "grid" in W:
        g = GraphonGrid(np.asarray(W["grid"], dtype=float))
        if g.n_u != n_u:
            raise InvalidArgument(f"graphon grid has {g.n_u} labels, grid.n_u is {n_u}")
        return g
    raise InvalidArgument("graphon.W needs 'name', 'step' or 'grid'")


GRAPHON_KEYS = {"W", "A_tilde", "B_tilde", "lam", "noise", "energy_tol", "max_rank"}


def build_label_noise(grid: TimeGrid, n_u: int, nc) -> NoiseModel:
    """Label noise: ``{"affine_drift": [a, b], "affine_loadings": [[c, d], ...]}`` gives
    ``m = a + b u`` and common drivers with loadings ``c + d u``; otherwise
    ``{"drift", "idiosyncratic", "common", "blocks", "kind"}`` as in :func:`graphon_noise`."""
    from .convergence import lipschitz_label_noise

    nc = {} if nc is None else nc
    if "affine_drift" in nc or "affine_loadings" in nc:
        _check_keys(nc, {"affine_drift", "affine_loadings", "kinds"}, "graphon.noise")
        a0, a1 = (list(nc.get("affine_drift", [0.0, 0.0])) + [0.0])[:2]
        loads = [tuple((list(x) + [0.0])[:2]) for x in nc.get("affine_loadings", [])]
        drift = (lambda u, t: a0 + a1 * u + 0.0 * t)
        fl = [(lambda u, t, c=c, d=d: c + d * u + 0.0 * t) for c, d in loads]
        return lipschitz_label_noise(grid, n_u, drift, fl, nc.get("kinds"))
    _check_keys(nc, {"drift", "idiosyncratic", "common", "blocks", "kind"}, "graphon.noise")
    return graphon_noise(grid, n_u, nc.get("drift", 0.0), float(nc.get("idiosyncratic", 0.0)),
                         float(nc.get("common", 0.0)), nc.get("blocks"), nc.get("kind", "brownian"))


def build_graphon_game(cfg: dict, grid: TimeGrid) -> GraphonGameSpec:
    gc = cfg.get("graphon")
    if gc is None:
        raise InvalidArgument("config has no 'graphon' section")
    _check_keys(gc, GRAPHON_KEYS, "graphon")
    n_u = int(cfg["grid"]["n_u"])
    W = build_graphon_values(gc, n_u)
    lam = float(_positive(gc.get("lam", 1.0), "graphon.lam"))
    A = kernel_from_config(grid, gc.get("A_tilde"), 1)
    B = kernel_from_config(grid, gc.get("B_tilde"), 1)
    noise = build_label_noise(grid, n_u, gc.get("noise"))
    return GraphonGameSpec(A, B, lam, W, noise)


# ---------------------------------------------------------------------------
# Output


def write_manifest(out_dir: Path, cfg: dict, command: str, seed: int, wall: float, extra=None) -> None:
    man = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "versions": {"fredholm_games": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": wall,
    }
    if extra:
        man.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_field_csv(path, path_ids, values: np.ndarray, times: np.ndarray, index_name: str) -> None:
    """Rows ``path_id,t,<index_name>,value`` for an array (n_paths, n_index, n_t)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", index_name, "value"])
        for p, pid in enumerate(path_ids):
            for i in range(values.shape[1]):
                for k in range(values.shape[2]):
                    w.writerow([int(pid), repr(float(times[k])), i, repr(float(values[p, i, k]))])


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`: ``(path_ids, times, values)``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if len(header) != 4 or header[0] != "path_id" or header[1] != "t" or header[3] != "value":
            raise InvalidArgument(f"unexpected header {header}")
        rows = [(int(a), float(b), int(c), float(d)) for a, b, c, d in r]
    pids = sorted({x[0] for x in rows})
    times = sorted({x[1] for x in rows})
    n_idx = 1 + max(x[2] for x in rows)
    pi = {p: i for i, p in enumerate(pids)}
    ti = {t: i for i, t in enumerate(times)}
    out = np.zeros((len(pids), n_idx, len(times)))
    for p, t, i, v in rows:
        out[pi[p], i, ti[t]] = v
    return np.array(pids), np.array(times), out


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def read_table_csv(path) -> dict:
    """Columns of a CSV written by this package, converted to numbers where possible."""
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        cols = {k: [] for k in r.fieldnames}
        for row in r:
            for k, v in row.items():
                cols[k].append(v)

    def conv(v):
        if v in ("true", "false"):
            return v == "true"
        if v == "":
            return None
        try:
            return int(v)
        except ValueError:
            try:
                return float(v)
            except ValueError:
                return v

    return {k: [conv(x) for x in v] for k, v in cols.items()}


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("output")
    if not out:
        raise InvalidArgument("no output location: pass --out")
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _jsonable(x):
    from .convergence import _jsonable as conv

    return conv(x)


# ---------------------------------------------------------------------------
# Commands


def _finite_report(spec: FiniteGameSpec, ctol: float) -> dict:
    rep = spec.coercivity(ctol)
    return {"kind": "finite", "N": spec.N, "c0_estimate": rep.c0_estimate, "passed": rep.passed,
            "warnings": list(rep.warnings)}


def _graphon_report(spec: GraphonGameSpec, energy_tol: float, ctol: float, max_rank=None) -> dict:
    modes = spectral_decompose(spec.graphon, energy_tol, max_rank)
    rep = coercivity_check_graphon(spec, modes, ctol)
    lip = _lipschitz_estimate(spec.graphon)
    return {"kind": "graphon", "c_W": rep.c0_estimate, "passed": rep.passed, "rank": modes.rank,
            "warnings": list(rep.warnings), "lipschitz_estimate": lip}


def _lipschitz_estimate(W: GraphonGrid) -> float:
    """Largest neighbouring-cell slope of the cell values (a grid proxy for L0)."""
    v = W.values
    n = W.n_u
    if n < 2:
        return 0.0
    return float(np.abs(np.diff(v, axis=0)).max() * n)


def cmd_validate(args, cfg) -> int:
    grid = build_grid(cfg)
    ctol = float(cfg["solver"]["coercivity_tol"])
    reports = []
    status = EXIT_OK
    if "game" in cfg:
        r = _finite_report(build_game(cfg, grid), ctol)
        reports.append(r)
        print(f"finite game: N={r['N']} c0={r['c0_estimate']:.6g} {'pass' if r['passed'] else 'FAIL'}")
        status = status or (EXIT_OK if r["passed"] else EXIT_ASSUMPTION)
    if "graphon" in cfg:
        gc = cfg["graphon"]
        r = _graphon_report(build_graphon_game(cfg, grid), float(gc.get("energy_tol", cfg["solver"]["energy_tol"])),
                            ctol, gc.get("max_rank"))
        reports.append(r)
        print(f"graphon game: c_W={r['c_W']:.6g} rank={r['rank']} {'pass' if r['passed'] else 'FAIL'}")
        status = status or (EXIT_OK if r["passed"] else EXIT_ASSUMPTION)
    if "example" in cfg:
        r, ok = _example_check(cfg, grid)
        reports.append(r)
        status = status or (EXIT_OK if ok else EXIT_ASSUMPTION)
    if not reports:
        raise InvalidArgument("nothing to validate: add a game, graphon or example section")
    print(json.dumps(_jsonable({"config_sha256": config_hash(cfg), "reports": reports}), sort_keys=True))
    return status


def cmd_solve_finite(args, cfg) -> int:
    t0 = time.perf_counter()
    grid = build_grid(cfg)
    spec = build_game(cfg, grid)
    out = _out_dir(args, cfg)
    s = cfg["solver"]
    ens = simulate(spec.noise, cfg["paths"], cfg["seed"])
    res = solve_equilibrium(spec, ens, tol=s["tol"], coercivity_tol=float(s["coercivity_tol"]))
    write_field_csv(out / "equilibrium.csv", ens.path_ids, res.alpha, grid.points, "player")
    write_table_csv(out / "foc_residual.csv", ["path_id", "residual", "tolerance"],
                    [(int(p), float(r), float(t)) for p, r, t in zip(ens.path_ids, res.foc_residual, res.tol)])
    summary = {"N": spec.N, "n_t": grid.n_t, "paths": len(ens), "c0_estimate": res.diagnostics["c0_estimate"],
               "max_foc_residual": res.max_foc_residual, "coercivity_warnings": res.diagnostics["coercivity_warnings"]}
    if getattr(args, "nash_probes", 0):
        gap = nash_gap(spec, res, ens, n_probe=args.nash_probes, seed=cfg["seed"])
        summary["nash_gap"] = gap.to_dict()
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, cfg, "solve-finite", cfg["seed"], time.perf_counter() - t0)
    print(f"solve-finite: N={spec.N} paths={len(ens)} max FOC residual {res.max_foc_residual:.3e} -> {out}")
    return EXIT_OK


def cmd_solve_graphon(args, cfg) -> int:
    t0 = time.perf_counter()
    grid = build_grid(cfg)
    spec = build_graphon_game(cfg, grid)
    out = _out_dir(args, cfg)
    gc = cfg["graphon"]
    s = cfg["solver"]
    ens = simulate(spec.noise, cfg["paths"], cfg["seed"])
    res = solve_graphon(spec, ens, energy_tol=float(gc.get("energy_tol", s["energy_tol"])),
                        max_rank=gc.get("max_rank"), tol=s["tol"], coercivity_tol=float(s["coercivity_tol"]))
    write_field_csv(out / "field.csv", ens.path_ids, res.field, grid.points, "label")
    write_table_csv(out / "modes.csv", ["mode", "theta"], [(i, float(t)) for i, t in enumerate(res.modes.theta)])
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(res.diagnostics), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, cfg, "solve-graphon", cfg["seed"], time.perf_counter() - t0)
    print(f"solve-graphon: n_u={spec.graphon.n_u} rank={res.modes.rank} c_W={res.coercivity.c0_estimate:.6g} -> {out}")
    return EXIT_OK


def cmd_sample(args, cfg) -> int:
    from .sampling import sample

    t0 = time.perf_counter()
    sc = cfg.get("sampling")
    if sc is None:
        raise InvalidArgument("config has no 'sampling' section")
    _check_keys(sc, {"kind", "N", "kappa"}, "sampling")
    gc = cfg.get("graphon")
    if gc is None:
        raise InvalidArgument("sampling needs a 'graphon' section with W")
    W = build_graphon_values(gc, int(cfg["grid"]["n_u"]))
    g = sample(W, sc.get("N", 10), sc.get("kind", "S1"), float(sc.get("kappa", 1.0)), cfg["seed"])
    out = _out_dir(args, cfg)
    with open(out / "graph.json", "w") as fh:
        json.dump(g.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_table_csv(out / "weights.csv", ["i", "j", "value"],
                    [(i, j, float(g.matrix[i, j])) for i in range(g.N) for j in range(g.N)])
    write_manifest(out, cfg, "sample", cfg["seed"], time.perf_counter() - t0)
    print(f"sample: {g.kind} N={g.N} -> {out}")
    return EXIT_OK


CONV_KEYS = {"mode", "N_values", "kind", "kappa", "delta", "replications", "L0", "K0", "method", "crn_check"}


def cmd_converge(args, cfg) -> int:
    from .convergence import ConvergenceProblem, run_given_sequence, run_sampled

    t0 = time.perf_counter()
    cc = cfg.get("convergence", {})
    _check_keys(cc, CONV_KEYS, "convergence")
    mode = args.mode or cc.get("mode", "given")
    if mode not in ("given", "sampled"):
        raise InvalidArgument(f"--mode must be given or sampled, got {mode!r}")
    grid = build_grid(cfg)
    spec = build_graphon_game(cfg, grid)
    problem = ConvergenceProblem(spec.A_tilde, spec.B_tilde, spec.lam, spec.graphon, spec.noise)
    out = _out_dir(args, cfg)
    Ns = cc.get("N_values", [4, 8, 16])
    s = cfg["solver"]
    threads = _threads(args, cfg)
    if mode == "given":
        run = run_given_sequence(problem, Ns, n_paths=cfg["paths"], seed=cfg["seed"],
                                 method=cc.get("method", "dense"), coercivity_tol=float(s["coercivity_tol"]),
                                 crn_check=bool(cc.get("crn_check", True)), tol=s["tol"], threads=threads)
    else:
        run = run_sampled(problem, cc.get("kind", "S1"), Ns, kappa=cc.get("kappa"), delta=float(cc.get("delta", 0.05)),
                          n_rep=int(cc.get("replications", 10)), n_paths=cfg["paths"], seed=cfg["seed"],
                          L0=float(cc.get("L0", 1.0)), K0=float(cc.get("K0", 1.0)),
                          method=cc.get("method", "modes"), tol=s["tol"], threads=threads)
    run.write_csv(out / "errors.csv")
    run.diagnostics.pop("wall_s", None)
    run.write_summary(out / "summary.json")
    write_manifest(out, cfg, f"converge --mode {mode}", cfg["seed"], time.perf_counter() - t0,
                   {"threads": threads})
    print(f"converge ({mode}): K={run.K:.4g} violations={run.violations} monotone={run.monotone} -> {out}")
    return EXIT_OK


def _threads(args, cfg) -> int:
    t = args.threads if getattr(args, "threads", None) else cfg.get("threads")
    if not t:
        t = os.environ.get("FREDHOLM_GAMES_THREADS")
    if not t:
        t = os.cpu_count() or 1
    try:
        t = int(t)
    except ValueError:
        raise InvalidArgument(f"threads must be an integer, got {t!r}")
    if t < 1:
        raise InvalidArgument("threads must be positive")
    return t


EXAMPLE_PARAMS = {
    "systemic": {"N", "atoms", "tau", "w_sys", "kappa", "eps", "c", "h", "xi", "sigma", "common_sigma"},
    "network": {"a", "b", "c", "w_net", "C_f", "C_g", "xi", "sigma"},
    "simple-graph": {"N", "edges", "a_bar", "sigma_bar", "q_sim", "eps_sim", "c_sim", "xi"},
}


def build_example(family: str, params: dict, grid: TimeGrid):
    """``(VolterraGameInput, systemic input or None)`` for a named family."""
    from .examples import (SystemicRiskInput, extended_grid, network_sde_build, simple_graph_build,
                           systemic_risk_build)

    if family not in EXAMPLE_PARAMS:
        raise InvalidArgument(f"unknown example family {family!r}; known: {sorted(EXAMPLE_PARAMS)}")
    _check_keys(params, EXAMPLE_PARAMS[family], f"example params ({family})")
    p = dict(params)
    if family == "systemic":
        w = np.asarray(p.get("w_sys", [[0.0, 0.5], [0.5, 0.0]]), dtype=float)
        N = w.shape[0]
        if "atoms" in p:
            atoms = p["atoms"]
        else:
            tau = float(p.get("tau", 0.5 * grid.T))
            atoms = [(0.0, 1.0), (tau, -1.0)]
        sigma = float(p.get("sigma", 0.0))
        common = float(p.get("common_sigma", 0.0))
        V = idiosyncratic_model(extended_grid(grid), N, 0.0, sigma, common) if (sigma or common) else None
        inp = SystemicRiskInput(grid, atoms, w, p.get("kappa", 0.5), p.get("eps", 1.0), p.get("c", 1.0),
                                p.get("h", 0.0), V, p.get("xi", 0.0))
        return systemic_risk_build(inp), inp
    if family == "network":
        N = np.asarray(p.get("w_net", [[0.0, 1.0], [1.0, 0.0]])).shape[0]
        C_f = p.get("C_f", [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        C_g = p.get("C_g", [[1.0, 0.0], [0.0, 1.0]])
        return network_sde_build(grid, p.get("a", 0.0), p.get("b", 1.0), p.get("c", 0.0),
                                 p.get("w_net", [[0.0, 1.0], [1.0, 0.0]]), C_f, C_g, p.get("xi", 0.0),
                                 p.get("sigma", 1.0)), None
    N = int(p.get("N", 3))
    edges = p.get("edges", [[i, i + 1] for i in range(N - 1)])
    return simple_graph_build(grid, N, edges, float(p.get("a_bar", 1.0)), float(p.get("sigma_bar", 1.0)),
                              float(p.get("q_sim", 0.5)), float(p.get("eps_sim", 1.0)),
                              float(p.get("c_sim", 1.0)), p.get("xi", 0.0)), None


def _example_check(cfg, grid):
    from .examples import systemic_assumption_check, volterra_reduce

    ec = cfg["example"]
    _check_keys(ec, {"family", "params"}, "example")
    inp, sys_inp = build_example(ec.get("family", "systemic"), ec.get("params", {}), grid)
    report = {"kind": "example", "family": ec.get("family", "systemic")}
    ok = True
    if sys_inp is not None:
        chk = systemic_assumption_check(sys_inp)
        report["systemic_check"] = chk.to_dict()
        ok = chk.passed
        print(f"systemic check: {'pass' if ok else 'FAIL'}; critical T = {chk.critical_T:.6g} (T = {chk.T:.6g})")
    game = volterra_reduce(inp)
    rep = game.spec.coercivity(float(cfg["solver"]["coercivity_tol"]))
    report["c0_estimate"] = rep.c0_estimate
    report["coercive"] = rep.passed
    print(f"reduced game: N={game.spec.N} c0={rep.c0_estimate:.6g} {'pass' if rep.passed else 'FAIL'}")
    return report, ok and rep.passed


def game_to_config(spec: FiniteGameSpec, base: dict) -> dict:
    """Config (block form) reproducing ``spec`` for ``solve-finite``."""
    grid = spec.grid
    return {
        "schema_version": SCHEMA_VERSION,
        "grid": {"T": grid.T, "n_t": grid.n_t, "n_u": base["grid"]["n_u"]},
        "seed": base["seed"],
        "paths": base["paths"],
        "solver": dict(base["solver"]),
        "game": {"N": spec.N, "B": {"grid": spec.B.values.tolist()}, "Bbar": {"grid": spec.Bbar.values.tolist()},
                 "Lambda": spec.Lambda.tolist(), "noise": noise_to_config(spec.noise)},
    }


def cmd_example(args, cfg) -> int:
    from .examples import volterra_reduce

    t0 = time.perf_counter()
    grid = build_grid(cfg)
    ec = dict(cfg.get("example", {}))
    if args.family:
        ec["family"] = args.family
    if args.params:
        with open(args.params) as fh:
            try:
                ec["params"] = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidArgument(f"params file is not valid JSON: {exc}")
    cfg = dict(cfg, example=ec)
    report, ok = _example_check(cfg, grid)
    if not ok:
        return EXIT_ASSUMPTION
    inp, _ = build_example(ec.get("family", "systemic"), ec.get("params", {}), grid)
    game = volterra_reduce(inp)
    out = Path(args.out or cfg.get("output") or "game.json")
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "game.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(game_to_config(game.spec, cfg), fh)
        fh.write("\n")
    write_manifest(out.parent, cfg, f"example {ec.get('family', 'systemic')}", cfg["seed"],
                   time.perf_counter() - t0, {"report": _jsonable(report)})
    print(f"example {ec.get('family', 'systemic')}: wrote {out}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve-finite": cmd_solve_finite,
    "solve-graphon": cmd_solve_graphon,
    "sample": cmd_sample,
    "converge": cmd_converge,
    "example": cmd_example,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fredholm-games", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config (or a manifest.json to rerun)")
        p.add_argument("--out", help="output directory (for example: the game.json path)")
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--tol", type=float)
        if name == "converge":
            p.add_argument("--mode", choices=("given", "sampled"))
        if name == "example":
            p.add_argument("family", nargs="?", choices=sorted(EXAMPLE_PARAMS))
            p.add_argument("--params", help="JSON file with family parameters")
        if name == "solve-finite":
            p.add_argument("--nash-probes", type=int, default=0, help="random adapted deviations per player")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        for key in ("seed", "paths"):
            if getattr(args, key) is not None:
                raw[key] = getattr(args, key)
        if args.tol is not None:
            raw["tol"] = args.tol
        cfg = normalize_config(raw)
        return COMMANDS[args.command](args, cfg)
    except FredholmGamesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
