import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hc1solve.cli import (
    EXIT_CONFIG,
    EXIT_CONVERGENCE,
    EXIT_FAILED,
    EXIT_OK,
    EXIT_RESOURCES,
    main,
)
from hc1solve.config import ConfigError, h0_grid, parse_config
from hc1solve.elliptic import SolverConfig, poisson_dirichlet_2d
from hc1solve.grid import Disk, build_cross_section
from hc1solve.io import (
    atomic_write_bytes,
    edges_to_nodes,
    faces_to_nodes,
    read_csv,
    read_slice_stack,
    write_csv,
    write_json,
    write_slice_stack,
    write_vtk,
)

SMALL = """
[domain]
shape = "disk"
R = 1.0
L = 1.0
h = 0.125
"""


def _cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(tmp_path, cmd, text, out="out", extra=()):
    cfg = _cfg(tmp_path, text)
    code = main([cmd, "--config", str(cfg), "--output-dir", str(tmp_path / out), *extra])
    return code, tmp_path / out


# -- configuration ------------------------------------------------------------------


def test_defaults():
    cfg = parse_config("")
    assert cfg.domain.shape == "disk" and cfg.domain.h == 1 / 32 and cfg.domain.nz == 32
    assert cfg.task.a1 < 0 < cfg.task.a2
    assert cfg.solver.preconditioner == "slice_poisson"
    assert cfg.consistency_tol == 1e-2


@pytest.mark.parametrize("text,needle", [
    ("[domain]\nshap = 'disk'\n", "domain.shap"),
    ("[domian]\n", "domian"),
    ("[task]\na1 = 0.1\n", "a1"),
    ("[domain]\nh = -1\n", "h"),
    ("[task]\nepsilon = [1.5]\n", "epsilon"),
    ("[output]\nformats = ['xml']\n", "formats"),
    ("[domain]\nshape = 'triangle'\n", "shape"),
    ("[solver]\nconsistency_tol = 2.0\n", "consistency_tol"),
    ("not toml [", ""),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert needle in str(e.value)


def test_hash_stable_and_sensitive():
    a = parse_config(SMALL)
    b = parse_config(SMALL + "\n")
    c = parse_config(SMALL.replace("0.125", "0.25"))
    d = parse_config(SMALL + "[output]\ndirectory = 'elsewhere'\n")
    assert a.hash == b.hash == d.hash
    assert a.hash != c.hash and len(a.hash) == 64


def test_h0_grid():
    cfg = parse_config("[task]\nh0_grid_relative = [0.9, 1.1, 0.1]\n")
    g = h0_grid(cfg, 0.25)
    assert np.allclose(g, [1.8, 2.0, 2.2])
    with pytest.raises(ConfigError):
        h0_grid(parse_config("[task]\nh0_grid = []\n"), 0.25)
    with pytest.raises(ConfigError):
        h0_grid(parse_config("[task]\nh0_grid = [2.0, 1.0]\n"), 0.25)


# -- writers ---------------------------------------------------------------------------


def test_atomic_write_leaves_no_temp(tmp_path):
    p = atomic_write_bytes(tmp_path / "sub" / "a.bin", b"xyz")
    assert p.read_bytes() == b"xyz"
    atomic_write_bytes(p, b"new")
    assert p.read_bytes() == b"new"
    assert sorted(os.listdir(p.parent)) == ["a.bin"]


def test_json_header_and_nonfinite(tmp_path):
    write_json(tmp_path / "r.json", {"x": np.float64(1.5), "n": np.int64(3), "bad": float("inf")}, "abc")
    d = json.loads((tmp_path / "r.json").read_text())
    assert list(d)[:2] == ["schema", "config_hash"] and d["config_hash"] == "abc"
    assert d["x"] == 1.5 and d["n"] == 3 and d["bad"] == "inf"


def test_csv_round_trip(tmp_path):
    rows = [(0, 0.1, 1 / 3), (1, np.float64(2.5e-17), -4.0)]
    write_csv(tmp_path / "t.csv", ["k", "a", "b"], rows, "hash123")
    h, header, body = read_csv(tmp_path / "t.csv")
    assert h == "hash123" and header == ["k", "a", "b"]
    got = [[float(v) for v in r] for r in body]
    assert got == [[float(v) for v in r] for r in rows]


@pytest.mark.parametrize("binary", [True, False])
def test_vtk_layout(tmp_path, binary):
    a = np.arange(24, dtype=float).reshape(2, 3, 4)
    vec = (a, 2 * a, 3 * a)
    p = write_vtk(tmp_path / "f.vtk", {"s": a, "v": vec}, (0.5, 0.5, 0.25), (0, -1, 0), "hh", binary)
    raw = p.read_bytes()
    head = raw.split(b"SCALARS")[0].decode()
    lines = head.splitlines()
    assert lines[1] == "config_hash hh"
    assert "DIMENSIONS 2 3 4" in head and "ORIGIN 0.0 -1.0 0.0" in head
    assert "POINT_DATA 24" in head
    if binary:
        start = raw.index(b"LOOKUP_TABLE default\n") + len(b"LOOKUP_TABLE default\n")
        s = np.frombuffer(raw[start:start + 24 * 8], dtype=">f8")
        assert np.array_equal(s, a.transpose(2, 1, 0).ravel())
        vstart = raw.index(b"VECTORS v double\n") + len(b"VECTORS v double\n")
        assert len(raw) - vstart == 24 * 3 * 8 + 1


def test_slice_stack_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((4, 5, 3))
    write_slice_stack(tmp_path / "w.bin", a, (0.1, 0.1, 0.2), "hh")
    assert np.array_equal(read_slice_stack(tmp_path / "w.bin"), a)
    meta = json.loads((tmp_path / "w.bin.json").read_text())
    assert meta["shape"] == [4, 5, 3] and meta["byte_order"] == "little"


def test_staggered_to_nodes():
    c = np.ones((3, 3, 3))
    ex = edges_to_nodes((c, c, c))
    fa = faces_to_nodes((c, c, c))
    assert np.all(ex[0][1:] == 1) and np.all(ex[0][0] == 0.5)
    assert np.all(fa[2][1:, 1:] == 1) and fa[2][0, 0, 0] == 0.25


# -- commands ----------------------------------------------------------------------------


def test_hc1_outputs(tmp_path):
    code, out = _run(tmp_path, "hc1", SMALL + "[task]\nepsilon = [0.01]\n"
                     "[output]\nformats = ['json', 'csv', 'vtk']\ndump_fields = true\n")
    assert code == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    man = json.loads((out / "manifest.json").read_text())
    assert rep["config_hash"] == man["config_hash"]
    assert rep["routes_consistent"] and rep["hc1_coefficient"] * 2 * rep["xi"] == pytest.approx(1)
    assert rep["epsilon_eval"][0]["provenance"] == "leading-order-only"
    assert man["status"] == "ok" and "elapsed_s" not in rep
    for f in ("slice_curve.csv", "w_star.bin", "w_star.bin.json", "B_star.vtk", "A_star.vtk"):
        assert (out / f).exists(), f
    h, header, rows = read_csv(out / "slice_curve.csv")
    assert h == rep["config_hash"] and len(rows) == 8
    assert max(float(r[2]) for r in rows) == pytest.approx(rep["xi"], rel=1e-12)


def test_hc1_deterministic(tmp_path):
    c1, o1 = _run(tmp_path, "hc1", SMALL, "a")
    c2, o2 = _run(tmp_path, "hc1", SMALL, "b")
    assert c1 == c2 == EXIT_OK
    assert (o1 / "report.json").read_bytes() == (o2 / "report.json").read_bytes()
    c3, o3 = _run(tmp_path, "hc1", SMALL, "c", ("--deterministic", "false"))
    assert "elapsed_s" in json.loads((o3 / "report.json").read_text())


def test_sweep_onset(tmp_path):
    code, out = _run(tmp_path, "sweep", SMALL + "[task]\nh0_grid_relative = [0.95, 1.1, 0.01]\n")
    assert code == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    sw = rep["sweep"]
    assert sw["label"] == "decoupled diagnostic" and sw["status"] == "onset"
    assert abs(sw["onset_relative"] - 1) <= 0.01 + 1e-9
    assert sw["slicing_identity"]["relative_gap"] <= 0.02
    _, header, rows = read_csv(out / "sweep.csv")
    assert header[:3] == ["h0", "h0_times_2xi", "total_mass"] and len(rows) == 16


def test_sweep_subcritical_notes(tmp_path):
    code, out = _run(tmp_path, "sweep", SMALL + "[task]\nh0_grid_relative = [0.5, 0.9, 0.1]\n")
    assert code == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    man = json.loads((out / "manifest.json").read_text())
    assert "onset_h0" not in rep and rep["sweep"]["status"] == "subcritical"
    assert any("onset absent" in n for n in man["notes"])


def test_sweep_without_grid(tmp_path):
    code, _ = _run(tmp_path, "sweep", SMALL)
    assert code == EXIT_CONFIG


def test_obstacle_from_file_matches_linear(tmp_path):
    cs = build_cross_section(Disk(1.0), 0.125)
    f = np.random.default_rng(0).standard_normal(cs.n)
    np.save(tmp_path / "f.npy", f)
    text = SMALL + "[task]\nf = 'f.npy'\na1 = -100.0\na2 = 100.0\n[solver]\ntol_vi = 1e-12\n"
    code, out = _run(tmp_path, "obstacle", text)
    assert code == EXIT_OK
    lin, _ = poisson_dirichlet_2d(f * cs.mask, cs, SolverConfig(tol_rel=1e-12))
    _, header, rows = read_csv(out / "u.csv")
    u = np.zeros(cs.n)
    for r in rows:
        u[int(r[0]), int(r[1])] = float(r[4])
    assert np.abs(u - lin).max() <= 1e-8 * np.abs(lin).max()
    rep = json.loads((out / "report.json").read_text())
    assert rep["bounds_check"]["ok"] and rep["lower_set_size"] == 0


def test_obstacle_bad_source_shape(tmp_path):
    np.save(tmp_path / "f.npy", np.zeros((3, 3)))
    code, _ = _run(tmp_path, "obstacle", SMALL + "[task]\nf = 'f.npy'\n")
    assert code == EXIT_CONFIG


def test_exit_codes(tmp_path):
    assert _run(tmp_path, "hc1", SMALL + "[task]\na1 = 0.5\n", "e2")[0] == EXIT_CONFIG
    code, out = _run(tmp_path, "hc1", SMALL.replace("h = 0.125", "h = 0.0625\nmemory_budget_mb = 1"), "e3")
    assert code == EXIT_RESOURCES
    assert json.loads((out / "manifest.json").read_text())["status"].startswith("failed")
    code, out = _run(tmp_path, "hc1", SMALL + "[solver]\nmax_iter = 1\n", "e4")
    assert code == EXIT_CONVERGENCE
    assert json.loads((out / "report.partial.json").read_text())["partial"] is True
    assert main(["hc1", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert main(["hc1", "--config", str(_cfg(tmp_path, SMALL, "t.toml")), "--threads", "0"]) == EXIT_CONFIG


def test_validate_negative_control(tmp_path, capsys):
    code, out = _run(tmp_path, "validate", "[task]\nvalidate_h = 0.25\n")
    assert code == EXIT_FAILED
    assert "[FAIL]" in capsys.readouterr().out
    assert json.loads((out / "validation.json").read_text())["passed"] is False


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hc1solve", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "hc1solve" in r.stdout
