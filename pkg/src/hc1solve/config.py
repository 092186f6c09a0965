"""Run configuration: TOML file -> validated dataclasses.

Every section and key is listed below with its default; unknown keys are
rejected.

[domain]   shape ("disk" | "rectangle" | "polygon"), R / radius, width, height,
           vertices, L, h, Nz (default round(L/h)), pad_factor, memory_budget_mb
[solver]   tol_rel, max_iter, preconditioner, freespace_method, kernel,
           curl_kernel, sor_omega, tol_vi, vi_max_iter, consistency_tol
[task]     h0_grid (absolute list) or h0_grid_relative = [start, stop, step]
           (multiples of 1/(2ξ)), epsilon (list), obstacle source f ("constant"
           or a .npy/.csv grid file), f_value, a1, a2, validate_h
[output]   directory, formats (subset of json|csv|vtk), dump_fields,
           vtk_encoding ("binary" | "ascii"), dump_max_cells
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .elliptic import SolverConfig
from .grid import make_shape


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class DomainConfig:
    shape: str = "disk"
    R: float | None = None
    radius: float | None = None
    width: float | None = None
    height: float | None = None
    vertices: list | None = None
    L: float = 1.0
    h: float = 1.0 / 32
    Nz: int | None = None
    pad_factor: float = 1.0
    memory_budget_mb: float = 4096.0

    def shape_spec(self) -> dict:
        d = {"shape": self.shape}
        if self.shape == "disk":
            r = self.radius if self.radius is not None else self.R
            d["radius"] = 1.0 if r is None else r
        elif self.shape == "rectangle":
            d["width"], d["height"] = self.width, self.height
        elif self.shape == "polygon":
            d["vertices"] = self.vertices
        return d

    @property
    def nz(self) -> int:
        return self.Nz if self.Nz is not None else max(2, int(round(self.L / self.h)))


@dataclass(frozen=True)
class TaskConfig:
    h0_grid: list | None = None
    h0_grid_relative: list | None = None
    epsilon: list = field(default_factory=list)
    f: str = "constant"
    f_value: float = 1.0
    a1: float = -0.1
    a2: float = 0.1
    validate_h: float = 1.0 / 32


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["json", "csv"])
    dump_fields: bool = False
    vtk_encoding: str = "binary"
    dump_max_cells: int = 64**3


@dataclass(frozen=True)
class RunConfig:
    domain: DomainConfig = DomainConfig()
    solver: SolverConfig = SolverConfig(preconditioner="slice_poisson")
    task: TaskConfig = TaskConfig()
    output: OutputConfig = OutputConfig()
    consistency_tol: float = 1e-2
    source_text: str = ""

    def to_dict(self) -> dict:
        d = {
            "domain": dataclasses.asdict(self.domain),
            "solver": dataclasses.asdict(self.solver),
            "task": dataclasses.asdict(self.task),
            "output": dataclasses.asdict(self.output),
        }
        d["solver"]["consistency_tol"] = self.consistency_tol
        return d

    @property
    def hash(self) -> str:
        """SHA-256 of the resolved configuration (canonical JSON)."""
        canon = dict(self.to_dict())
        canon["output"] = {k: v for k, v in canon["output"].items() if k != "directory"}
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {"domain": DomainConfig, "solver": SolverConfig, "task": TaskConfig, "output": OutputConfig}


def _build(cls, section: str, table: dict, extra_ok=()):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names - set(extra_ok))
    if unknown:
        raise ConfigError(f"unknown key {section}.{unknown[0]}")
    try:
        return cls(**{k: v for k, v in table.items() if k in names})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from None


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    solver_tab = dict(raw.get("solver", {}))
    consistency_tol = solver_tab.pop("consistency_tol", 1e-2)
    solver_tab.setdefault("preconditioner", "slice_poisson")
    dom = _build(DomainConfig, "domain", raw.get("domain", {}))
    cfg = RunConfig(
        domain=dom,
        solver=_build(SolverConfig, "solver", solver_tab),
        task=_build(TaskConfig, "task", raw.get("task", {})),
        output=_build(OutputConfig, "output", raw.get("output", {})),
        consistency_tol=float(consistency_tol),
        source_text=text,
    )
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def validate(cfg: RunConfig) -> None:
    d = cfg.domain
    try:
        make_shape(d.shape_spec())
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"domain: {e}") from None
    if d.shape == "disk" and d.R is not None and d.radius is not None and d.R != d.radius:
        raise ConfigError("domain: give either R or radius, not both")
    for name, v in (("L", d.L), ("h", d.h), ("pad_factor", d.pad_factor)):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ConfigError(f"domain.{name} must be a positive number, got {v!r}")
    if d.Nz is not None and d.Nz < 2:
        raise ConfigError(f"domain.Nz must be >= 2, got {d.Nz}")
    t = cfg.task
    if t.h0_grid is not None and t.h0_grid_relative is not None:
        raise ConfigError("task: give either h0_grid or h0_grid_relative, not both")
    if t.h0_grid_relative is not None and len(t.h0_grid_relative) != 3:
        raise ConfigError("task.h0_grid_relative must be [start, stop, step]")
    for e in t.epsilon:
        if not (0 < e < 1):
            raise ConfigError(f"task.epsilon values must lie in (0, 1), got {e}")
    if not (t.a1 < 0 < t.a2):
        raise ConfigError(f"task bounds must satisfy a1 < 0 < a2, got a1={t.a1}, a2={t.a2}")
    o = cfg.output
    bad = sorted(set(o.formats) - {"json", "csv", "vtk"})
    if bad:
        raise ConfigError(f"output.formats: unknown format {bad[0]!r}")
    if o.vtk_encoding not in ("binary", "ascii"):
        raise ConfigError("output.vtk_encoding must be 'binary' or 'ascii'")
    if not (0 < cfg.consistency_tol < 1):
        raise ConfigError("solver.consistency_tol must lie in (0, 1)")


def h0_grid(cfg: RunConfig, xi: float | None = None):
    """Resolve the sweep grid (relative grids need ξ)."""
    import numpy as np

    t = cfg.task
    if t.h0_grid is not None:
        g = np.asarray(t.h0_grid, dtype=float)
    elif t.h0_grid_relative is not None:
        start, stop, step = (float(x) for x in t.h0_grid_relative)
        if step <= 0 or stop < start:
            raise ConfigError("task.h0_grid_relative needs start <= stop and step > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        g = (start + step * np.arange(n)) / (2.0 * xi)
    else:
        g = np.array([])
    if g.size == 0:
        raise ConfigError("task.h0_grid is empty")
    if np.any(g <= 0) or np.any(np.diff(g) <= 0):
        raise ConfigError("task.h0_grid must be positive and strictly increasing")
    return g
