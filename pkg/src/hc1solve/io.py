"""Atomic file output: JSON reports, CSV tables, legacy VTK, raw slice stacks."""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

SCHEMA = 1


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, payload: dict, config_hash: str) -> Path:
    doc = {"schema": SCHEMA, "config_hash": config_hash}
    doc.update(_jsonable(payload))
    text = json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path, header, rows, config_hash: str) -> Path:
    """CSV with a ``# config_hash`` comment line, then the header row.

    Floats are written with ``repr`` (shortest round-trip, '.' decimal).
    """
    buf = _io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(config_hash, header, rows as strings)``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    h = lines[0].split(":", 1)[1].strip() if lines and lines[0].startswith("#") else None
    body = lines[1:] if h is not None else lines
    r = list(csv.reader(body))
    return h, r[0], r[1:]


def write_vtk(path, point_data: dict, spacing, origin, config_hash: str,
              binary: bool = True) -> Path:
    """Legacy VTK structured-points file.

    ``point_data`` maps names to scalar arrays ``(nx, ny, nz)`` or 3-tuples of
    such arrays (vectors).  Binary output is big-endian float64 as the legacy
    format requires.
    """
    first = next(iter(point_data.values()))
    shape = (first[0] if isinstance(first, tuple) else first).shape
    if len(shape) == 2:
        shape = shape + (1,)
    nx, ny, nz = shape
    origin = [float(v) for v in origin]
    spacing = [float(v) for v in spacing]
    out = bytearray()
    head = (
        "# vtk DataFile Version 3.0\n"
        f"config_hash {config_hash}\n"
        f"{'BINARY' if binary else 'ASCII'}\n"
        "DATASET STRUCTURED_POINTS\n"
        f"DIMENSIONS {nx} {ny} {nz}\n"
        f"ORIGIN {origin[0]!r} {origin[1]!r} {origin[2]!r}\n"
        f"SPACING {spacing[0]!r} {spacing[1]!r} {spacing[2]!r}\n"
        f"POINT_DATA {nx * ny * nz}\n"
    )
    out += head.encode("ascii")
    for name, arr in point_data.items():
        if isinstance(arr, tuple):
            data = np.stack([np.asarray(a, dtype=float).reshape(shape) for a in arr], axis=-1)
            out += f"VECTORS {name} double\n".encode("ascii")
            flat = data.transpose(2, 1, 0, 3).reshape(-1, 3)  # x fastest
        else:
            out += f"SCALARS {name} double 1\nLOOKUP_TABLE default\n".encode("ascii")
            flat = np.asarray(arr, dtype=float).reshape(shape).transpose(2, 1, 0).reshape(-1)
        if binary:
            out += flat.astype(">f8").tobytes() + b"\n"
        else:
            rows = flat.reshape(-1, 3) if flat.ndim == 2 else flat.reshape(-1, 1)
            out += "".join(" ".join(repr(float(v)) for v in r) + "\n" for r in rows).encode("ascii")
    return atomic_write_bytes(path, bytes(out))


def write_slice_stack(path, array: np.ndarray, spacing, config_hash: str,
                      component_order=("value",), extra: dict | None = None):
    """Raw little-endian float64 array (C order) plus a ``.json`` sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f8")
    atomic_write_bytes(path, arr.tobytes())
    meta = {
        "file": path.name,
        "shape": list(arr.shape),
        "dtype": "float64",
        "byte_order": "little",
        "order": "C",
        "spacing": list(map(float, spacing)),
        "component_order": list(component_order),
    }
    if extra:
        meta.update(extra)
    write_json(path.with_suffix(path.suffix + ".json"), meta, config_hash)
    return path


def read_slice_stack(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])


def edges_to_nodes(components):
    """Average staggered edge components to the node lattice (2-point means)."""
    out = []
    for ax, c in enumerate(components):
        prev = np.zeros_like(c)
        sl_dst = [slice(None)] * 3
        sl_src = [slice(None)] * 3
        sl_dst[ax] = slice(1, None)
        sl_src[ax] = slice(None, -1)
        prev[tuple(sl_dst)] = c[tuple(sl_src)]
        out.append(0.5 * (c + prev))
    return tuple(out)


def faces_to_nodes(components):
    """Average staggered face components to the node lattice (4-point means)."""
    out = []
    for ax, c in enumerate(components):
        acc = np.zeros_like(c)
        others = [a for a in range(3) if a != ax]
        for da in (0, 1):
            for db in (0, 1):
                s = c
                for a, d in zip(others, (da, db)):
                    if d:
                        t = np.zeros_like(s)
                        dst = [slice(None)] * 3
                        src = [slice(None)] * 3
                        dst[a] = slice(1, None)
                        src[a] = slice(None, -1)
                        t[tuple(dst)] = s[tuple(src)]
                        s = t
                acc = acc + s
        out.append(0.25 * acc)
    return tuple(out)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    config_hash: str
    version: str
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    stages: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def stage(self, name: str, report: dict) -> None:
        self.stages[name] = report

    def write(self, directory, status: str = "ok") -> Path:
        self.status = status
        self.finished = _now()
        payload = {
            "command": self.command,
            "tool_version": self.version,
            "status": self.status,
            "started": self.started,
            "finished": self.finished,
            "config": self.config,
            "stages": self.stages,
            "warnings": self.warnings,
            "notes": self.notes,
            "outputs": sorted(self.outputs),
        }
        return write_json(Path(directory) / "manifest.json", payload, self.config_hash)
