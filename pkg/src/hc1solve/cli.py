"""``hc1solve`` command line: hc1 | sweep | obstacle | validate.

Exit codes: 0 ok, 1 validation failure, 2 configuration error, 3 resource
limit, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, h0_grid, load_config, parse_config
from .elliptic import ConvergenceError
from .grid import GridError, MemoryBudgetError, build_cross_section, embed_cylinder, make_shape
from .io import (
    RunManifest,
    edges_to_nodes,
    faces_to_nodes,
    write_csv,
    write_json,
    write_slice_stack,
    write_vtk,
)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RESOURCES, EXIT_CONVERGENCE = 0, 1, 2, 3, 4

log = logging.getLogger("hc1solve")


class _Run:
    """Shared state of one command: config, output directory, manifest."""

    def __init__(self, command: str, cfg: RunConfig, outdir: Path, deterministic: bool):
        self.cfg = cfg
        self.out = outdir
        self.deterministic = deterministic
        self.hash = cfg.hash
        echo = cfg.to_dict()
        echo["run"] = {"deterministic": deterministic, "threads": cfg.solver.threads}
        self.manifest = RunManifest(command, echo, self.hash, __version__)
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.manifest.outputs.append(name)
        return self.out / name

    def json(self, name, payload):
        if not self.deterministic and name.startswith("report"):
            payload = {**payload, "elapsed_s": time.perf_counter() - self.t0}
        write_json(self.path(name), payload, self.hash)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows, self.hash)

    def finish(self, status="ok"):
        self.manifest.stage("wall_time_s", {"total": time.perf_counter() - self.t0})
        self.manifest.write(self.out, status)

    def want(self, fmt: str) -> bool:
        return fmt in self.cfg.output.formats


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------


def _domain(cfg: RunConfig):
    d = cfg.domain
    cs = build_cross_section(make_shape(d.shape_spec()), d.h)
    dom = embed_cylinder(cs, d.L, d.nz, d.pad_factor, d.memory_budget_mb)
    return cs, dom


def _domain_summary(dom) -> dict:
    return {
        "interior_nodes_per_slice": int(dom.cs.mask.sum()),
        "slices": dom.Nz,
        "h": dom.cs.h,
        "h3": dom.h3,
        "box_resolution": list(dom.box_resolution),
        "area": dom.cs.area,
        "volume": dom.volume,
    }


def _solve_bstar(run: _Run, dom):
    from .bstar import solve_bstar

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = solve_bstar(dom, run.cfg.solver)
    run.manifest.warnings.extend(str(w.message) for w in caught)
    run.manifest.stage("bstar", sol.solve_report.to_dict())
    if not sol.converged:
        run.json("report.partial.json", {
            "status": "not-converged",
            "partial": True,
            "stage": "bstar",
            "solve_report": sol.solve_report.to_dict(),
        })
        run.finish("failed: bstar not converged")
        raise ConvergenceError(f"B_* solve did not converge: {sol.solve_report}")
    return sol


def _bstar_payload(sol) -> dict:
    diag = {k: v for k, v in sol.diagnostics.items() if k != "solve_report"}
    return {
        "energy": sol.energy,
        "energy_zero": sol.energy_zero,
        "field_energy": sol.field_energy,
        "diagnostics": diag,
        "solve_report": sol.solve_report.to_dict(),
    }


def _dump_fields(run: _Run, sol, dom):
    o = run.cfg.output
    if not o.dump_fields:
        return
    write_slice_stack(run.path("w_star.bin"), sol.w_star.w, (dom.cs.h, dom.cs.h, dom.h3), run.hash,
                      ("w",), {"axes": ["x", "y", "slice"], "slice_centers": dom.slice_centers})
    run.manifest.outputs.append("w_star.bin.json")
    if not run.want("vtk"):
        return
    shape = sol.B_star[0].shape
    if int(np.prod(shape)) > o.dump_max_cells:
        run.manifest.warnings.append(
            f"field dump skipped: window {shape} exceeds dump_max_cells={o.dump_max_cells}")
        return
    x, y, z = dom.node_coords
    fw = sol.field_window
    origin = (x[fw[0].start], y[fw[1].start], z[fw[2].start])
    binary = o.vtk_encoding == "binary"
    write_vtk(run.path("B_star.vtk"), {"B_star": edges_to_nodes(sol.B_star.components)},
              dom.spacing, origin, run.hash, binary)
    if sol.A_star is not None:
        write_vtk(run.path("A_star.vtk"), {"A_star": faces_to_nodes(sol.A_star.components)},
                  dom.spacing, origin, run.hash, binary)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_hc1(run: _Run) -> int:
    from .critfield import critical_field_report

    cfg = run.cfg
    cs, dom = _domain(cfg)
    sol = _solve_bstar(run, dom)
    rep, _ = critical_field_report(sol, dom, cfg.solver, None, cfg.task.epsilon, cfg.consistency_tol)
    payload = {"status": "ok", "domain": _domain_summary(dom)}
    payload.update(rep.to_dict())
    payload["bstar"] = _bstar_payload(sol)
    run.json("report.json", payload)
    if run.want("csv"):
        run.csv("slice_curve.csv", ["slice", "x3", "sup_abs_psi", "argmax_i", "argmax_j"],
                [(k, z, v, ij[0], ij[1]) for k, (z, v, ij) in enumerate(rep.slice_curve)])
    _dump_fields(run, sol, dom)
    for f in rep.flags:
        run.manifest.warnings.append(f"flag: {f}")
    run.finish()
    return EXIT_OK


def cmd_sweep(run: _Run) -> int:
    from .critfield import compute_xi, critical_field_report, reconstruct_v, sweep_h0

    cfg = run.cfg
    if cfg.task.h0_grid is None and cfg.task.h0_grid_relative is None:
        raise ConfigError("task.h0_grid is empty")
    cs, dom = _domain(cfg)
    sol = _solve_bstar(run, dom)
    xi = compute_xi(sol, dom, cfg.solver)[0]
    grid = h0_grid(cfg, xi)
    rep, sw = critical_field_report(sol, dom, cfg.solver, grid, cfg.task.epsilon, cfg.consistency_tol)
    run.manifest.stage("sweep", {"iterations": list(map(int, sw.iterations)), "status": sw.status})
    payload = {"status": "ok", "domain": _domain_summary(dom)}
    payload.update(rep.to_dict())
    payload["sweep"] = {
        "label": sw.label,
        "status": sw.status,
        "mass_tol": sw.mass_tol,
        "points": len(grid),
        "h0_min": float(grid[0]),
        "h0_max": float(grid[-1]),
    }
    if sw.onset_h0 is None:
        run.manifest.notes.append(f"onset absent: sweep is entirely {sw.status}")
    else:
        payload["sweep"]["onset_relative"] = sw.onset_h0 * 2 * xi
    # slicing identity at the most supercritical point
    if sw.mass[-1] > sw.mass_tol and sol.A_star is not None:
        last = sweep_h0(sol, dom, grid[-1:], cfg.solver, keep=(float(grid[-1]),))
        v = reconstruct_v(last.reports[float(grid[-1])].u, sol, dom)
        payload["sweep"]["slicing_identity"] = {
            "h0": float(grid[-1]), "tv_3d": v.tv_3d, "tv_slices": v.tv_slices,
            "relative_gap": v.slicing_gap, "label": v.label,
        }
    run.json("report.json", payload)
    if run.want("csv"):
        run.csv("sweep.csv", ["h0", "h0_times_2xi", "total_mass", "iterations"],
                [(h, h * 2 * xi, m, it) for h, m, it in zip(sw.h0, sw.mass, sw.iterations)])
        run.csv("slice_curve.csv", ["slice", "x3", "sup_abs_psi", "argmax_i", "argmax_j"],
                [(k, z, val, ij[0], ij[1]) for k, (z, val, ij) in enumerate(rep.slice_curve)])
    _dump_fields(run, sol, dom)
    run.finish()
    return EXIT_OK


def _load_source(cfg: RunConfig, cs, base: Path) -> np.ndarray:
    t = cfg.task
    if t.f == "constant":
        return np.full(cs.n, float(t.f_value))
    p = Path(t.f)
    if not p.is_absolute():
        p = base / p
    try:
        arr = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as e:
        raise ConfigError(f"task.f: cannot read source grid {p}: {e}") from None
    if arr.shape != cs.n:
        raise ConfigError(f"task.f: grid shape {arr.shape} does not match the node lattice {cs.n}")
    return arr.astype(float)


def cmd_obstacle(run: _Run, base: Path) -> int:
    from .obstacle import (
        ObstacleProblem,
        complementarity_residual,
        sign_condition,
        solve_double_obstacle,
        verify_vi_bounds,
    )

    cfg = run.cfg
    d = cfg.domain
    cs = build_cross_section(make_shape(d.shape_spec()), d.h)
    f = _load_source(cfg, cs, base)
    p = ObstacleProblem(cs, f, cfg.task.a1, cfg.task.a2)
    rep = solve_double_obstacle(p, cfg.solver)
    run.manifest.stage("obstacle", {"iterations": rep.iterations, "converged": rep.converged})
    summary = rep.summary()
    summary.update({
        "status": "ok" if rep.converged else "not-converged",
        "bounds_check": verify_vi_bounds(rep, p),
        "complementarity_residual": complementarity_residual(rep, p),
        "sign_condition": sign_condition(rep, 10 * cs.h**2),
        "tol_active": p.tol_active,
        "interior_nodes": int(cs.mask.sum()),
        "h": cs.h,
    })
    x, y = cs.coords
    rows = [(int(i), int(j), x[i, j], y[i, j], rep.u[i, j], rep.residual_measure[i, j],
             int(rep.lower_set[i, j]), int(rep.upper_set[i, j])) for i, j in np.argwhere(cs.mask)]
    if not rep.converged:
        summary["partial"] = True
        run.json("report.partial.json", summary)
        run.finish("failed: obstacle solve not converged")
        raise ConvergenceError(f"projected SOR stopped after {rep.iterations} sweeps")
    run.json("report.json", summary)
    run.json("sets.json", {
        "lower": np.argwhere(rep.lower_set).tolist(),
        "upper": np.argwhere(rep.upper_set).tolist(),
        "lower_size": int(rep.lower_set.sum()),
        "upper_size": int(rep.upper_set.sum()),
    })
    if run.want("csv"):
        run.csv("u.csv", ["i", "j", "x", "y", "u", "residual", "lower", "upper"], rows)
    if run.want("vtk"):
        origin = (cs.x[0], cs.y[0], 0.0)
        run_vtk = {"u": rep.u, "residual": rep.residual_measure,
                   "coincidence": rep.lower_set.astype(float) - rep.upper_set.astype(float)}
        write_vtk(run.path("u.vtk"), run_vtk, (cs.h, cs.h, cs.h), origin, run.hash,
                  cfg.output.vtk_encoding == "binary")
    run.finish()
    return EXIT_OK


def cmd_validate(run: _Run) -> int:
    from .validation import run_battery

    res = run_battery(run.cfg.task.validate_h)
    for line in res["lines"]:
        print(line)
    run.json("validation.json", {k: v for k, v in res.items() if k != "elapsed_s"})
    run.manifest.stage("validate", {"elapsed_s": res["elapsed_s"], "failures": res["failures"]})
    if res["failures"]:
        print("failed checks:\n  " + "\n  ".join(res["failures"]), file=sys.stderr)
        run.finish("failed: validation")
        return EXIT_FAILED
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hc1solve", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--output-dir", type=Path, help="override output.directory")
    common.add_argument("--deterministic", type=_bool, default=True, metavar="BOOL",
                        help="bit-reproducible reports: no wall-clock values in report files (default true)")
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help="worker threads for FFTs")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("hc1", parents=[common], help="ξ and the leading-order H_c1 coefficient")
    sub.add_parser("sweep", parents=[common], help="vorticity onset sweep over h0")
    sub.add_parser("obstacle", parents=[common], help="standalone double-obstacle solve")
    sub.add_parser("validate", parents=[common], help="oracle battery")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, threads=args.threads))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = args.output_dir or Path(cfg.output.directory)
    base = args.config.parent if args.config else Path.cwd()
    run = _Run(args.command, cfg, outdir, args.deterministic)
    try:
        if args.command == "hc1":
            return cmd_hc1(run)
        if args.command == "sweep":
            return cmd_sweep(run)
        if args.command == "obstacle":
            return cmd_obstacle(run, base)
        return cmd_validate(run)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MemoryBudgetError, MemoryError) as e:
        print(f"resource limit: {e}", file=sys.stderr)
        _fail(run, f"resources: {e}")
        return EXIT_RESOURCES
    except GridError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as e:
        print(f"not converged: {e}", file=sys.stderr)
        _fail(run, f"convergence: {e}")
        return EXIT_CONVERGENCE


def _fail(run: _Run, status: str) -> None:
    if run.manifest.status == "running":
        try:
            run.finish(f"failed: {status}")
        except OSError:
            pass
