import math
from types import SimpleNamespace

import numpy as np
import pytest

from hc1solve.bstar import solve_bstar
from hc1solve.critfield import (
    DegenerateDomainError,
    compute_xi,
    critical_field_report,
    hc1_coefficient,
    hc1_estimate,
    mean_field_energy,
    reconstruct_v,
    richardson_xi,
    sweep_h0,
    xi_for,
)
from hc1solve.elliptic import SolverConfig
from hc1solve.grid import Disk, build_cross_section, embed_cylinder
from hc1solve.obstacle import dual_norm, solve_slice_linear

CFG = SolverConfig()


@pytest.fixture(scope="module")
def dom16():
    return embed_cylinder(build_cross_section(Disk(1.0), 1 / 16), 1.0, 16)


@pytest.fixture(scope="module")
def sol16(dom16):
    return solve_bstar(dom16, CFG)


@pytest.fixture(scope="module")
def xi16(sol16, dom16):
    return compute_xi(sol16, dom16, CFG)


# -- arithmetic -------------------------------------------------------------------


def test_coefficient():
    assert hc1_coefficient(0.25) == 2.0
    rng = np.random.default_rng(0)
    for xi in rng.uniform(1e-3, 10, 100):
        assert 2 * xi * hc1_coefficient(xi) == pytest.approx(1.0, abs=4.5e-16)
    for bad in (0.0, -0.1, float("nan")):
        with pytest.raises(DegenerateDomainError):
            hc1_coefficient(bad)


def test_coefficient_constant_b3_composition():
    c, R = -0.4, 1.0
    assert hc1_coefficient((1 + c) * R**2 / 4) == pytest.approx(1 / ((1 + c) * R**2 / 2))


def test_estimate():
    e = hc1_estimate(0.5, math.exp(-10))
    assert e.value == pytest.approx(10.0) and e.provenance == "leading-order-only"
    assert hc1_estimate(0.25, 0.01).value == pytest.approx(9.2103, abs=1e-4)
    for eps in (1.0, 0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            hc1_estimate(0.25, eps)


def test_richardson():
    assert richardson_xi([1.0, 1.75]) == pytest.approx(2.0)
    assert richardson_xi([3.0]) == 3.0
    # exact for a sequence with a pure h² error
    vals = [0.2 + 0.3 * h * h for h in (0.1, 0.05)]
    assert richardson_xi(vals) == pytest.approx(0.2, abs=1e-14)


# -- xi ---------------------------------------------------------------------------


def test_xi_zero_for_gauge_override(dom16):
    sol = solve_bstar(dom16, CFG, gauge_override_zero=True, with_potential=False)
    x1, x2, _ = compute_xi(sol, dom16, CFG)
    assert x1 == 0 and x2 == 0


def test_routes_agree(xi16):
    x1, x2, _ = xi16
    assert x1 > 0
    assert abs(x1 - x2) / x1 <= 1e-2
    # both routes solve the same discrete slice equation: agreement is at solver tolerance
    assert abs(x1 - x2) / x1 <= 100 * CFG.tol_rel


def test_routes_agree_coarse():
    dom = embed_cylinder(build_cross_section(Disk(1.0), 1 / 8), 1.0, 8)
    sol = solve_bstar(dom, CFG, with_potential=False)
    x1, x2, _ = compute_xi(sol, dom, CFG)
    assert abs(x1 - x2) / x1 <= 100 * CFG.tol_rel


def test_slice_curve_symmetric(xi16):
    vals = np.array([c[1] for c in xi16[2]])
    assert np.abs(vals - vals[::-1]).max() <= 0.02 * vals.max()
    z = np.array([c[0] for c in xi16[2]])
    assert np.allclose(z + z[::-1], 1.0)


def test_mid_slice_matches_relinearized(sol16, dom16):
    k = dom16.Nz // 2
    psi = solve_slice_linear(sol16.b3_slices()[:, :, k], dom16.cs)
    w = sol16.w_star.slice(k)
    assert np.abs(psi - w).max() <= 0.01 * np.abs(w).max()
    assert np.all(psi <= 1e-14)


def test_report_fields(sol16, dom16):
    rep, sw = critical_field_report(sol16, dom16, CFG, epsilons=(0.01, 0.1))
    d = rep.to_dict()
    assert sw is None and "onset_h0" not in d
    assert d["routes_consistent"] and d["hc1_coefficient"] == hc1_coefficient(rep.xi)
    assert [e["epsilon"] for e in d["epsilon_eval"]] == [0.01, 0.1]
    edge = d["edge_slices"]
    assert max(edge["first"], edge["last"]) >= edge["interior_max"]


def test_xi_height_dependence_is_reproducible():
    a = xi_for(Disk(1.0), 1 / 8, 0.5, 4)
    b = xi_for(Disk(1.0), 1 / 8, 1.0, 8)
    assert a == xi_for(Disk(1.0), 1 / 8, 0.5, 4)
    assert a > 0 and b > 0 and abs(a - b) / b < 0.1


# -- sweeps ---------------------------------------------------------------------------


def test_sweep_subcritical(sol16, dom16, xi16):
    h0c = 1 / (2 * xi16[0])
    sw = sweep_h0(sol16, dom16, h0c * np.array([0.5, 0.8, 0.95]), CFG)
    assert sw.status == "subcritical" and sw.onset_h0 is None
    assert np.all(sw.mass == 0)
    assert sw.label == "decoupled diagnostic"


def test_sweep_supercritical(sol16, dom16, xi16):
    h0c = 1 / (2 * xi16[0])
    sw = sweep_h0(sol16, dom16, h0c * np.array([1.1, 1.3]), CFG)
    assert sw.status == "supercritical" and sw.onset_h0 is None
    assert np.all(sw.mass > sw.mass_tol)


def test_sweep_onset(sol16, dom16, xi16):
    h0c = 1 / (2 * xi16[0])
    grid = h0c * np.arange(0.90, 1.1001, 0.01)
    sw = sweep_h0(sol16, dom16, grid, CFG)
    assert sw.status == "onset"
    step = 0.01 * h0c
    assert abs(sw.onset_h0 - h0c) <= step + 1e-12
    assert np.all(sw.mass[grid <= 0.95 * h0c] <= 1e-6 * dom16.volume)
    assert np.all(np.diff(sw.mass) >= -sw.mass_tol)
    assert sw.slice_mass.shape == (len(grid), dom16.Nz)


def test_sweep_grid_errors(sol16, dom16):
    for g in ([], [1.0, 1.0], [2.0, 1.0], [-1.0, 1.0]):
        with pytest.raises(ValueError):
            sweep_h0(sol16, dom16, g, CFG)


@pytest.mark.parametrize("c", [-0.5, 0.0])
def test_constant_b3_onset(c):
    cs = build_cross_section(Disk(1.0), 1 / 32)
    dom = embed_cylinder(cs, 0.25, 2)
    fake = SimpleNamespace(b3_slices=lambda: np.full(cs.n + (dom.Nz,), c))
    exact = 2 / (1 + c)
    grid = exact * np.arange(0.90, 1.10, 0.01)
    sw = sweep_h0(fake, dom, grid, CFG)
    assert sw.onset_h0 is not None and abs(sw.onset_h0 / exact - 1) <= 0.02


# -- supercurrent and energy --------------------------------------------------------


def test_reconstruct_v_zero_psi(sol16, dom16):
    vf = reconstruct_v(np.zeros(dom16.window_shape), sol16, dom16)
    ax, ay = sol16.A_star[0][sol16.inner], sol16.A_star[1][sol16.inner]
    assert np.array_equal(vf.v.x, ax) and np.array_equal(vf.v.y, ay)
    # slice curl of Â_* is B³ + 1 (no singular part)
    b = (sol16.b3_slices() + 1) * dom16.cs.mask[:, :, None]
    assert np.linalg.norm(vf.curl - b) <= 0.05 * np.linalg.norm(b)


def test_reconstruct_v_subcritical_is_curl_free(sol16, dom16):
    vf = reconstruct_v(sol16.w_star, sol16, dom16)
    ref = reconstruct_v(np.zeros(dom16.window_shape), sol16, dom16).tv_3d
    assert vf.tv_3d <= 1e-6 * ref and vf.tv_slices <= 1e-6 * ref


def test_slicing_identity_supercritical(sol16, dom16, xi16):
    h0 = 1.05 / (2 * xi16[0])
    sw = sweep_h0(sol16, dom16, [h0], CFG, keep=(h0,))
    vf = reconstruct_v(sw.reports[h0].u, sol16, dom16)
    assert sw.mass[0] > 0
    assert vf.slicing_gap <= 0.02
    assert vf.tv_3d == pytest.approx(sw.mass[0], rel=0.02)


def test_mean_field_energy_gauge_identity(dom16):
    sol = solve_bstar(dom16, CFG, gauge_override_zero=True)
    vf = reconstruct_v(np.zeros(dom16.window_shape), sol, dom16)
    e = mean_field_energy(vf, sol, dom16, 1.0)
    assert e["total"] == 0.0


def test_mean_field_energy_minimality(sol16, dom16, xi16):
    h0 = 1.2 / (2 * xi16[0])
    sw = sweep_h0(sol16, dom16, [h0], CFG, keep=(h0,))
    psi = sw.reports[h0].u
    base = mean_field_energy(reconstruct_v(psi, sol16, dom16), sol16, dom16, h0)["per_slice"]
    rng = np.random.default_rng(5)
    k = dom16.Nz // 2
    bound = 1 / (2 * h0)
    for t in (1e-2, -1e-2):
        d = rng.standard_normal(dom16.cs.n) * dom16.cs.mask
        p2 = psi.copy()
        p2[:, :, k] = np.clip(psi[:, :, k] + t * d, -bound, bound) * dom16.cs.mask
        e2 = mean_field_energy(reconstruct_v(p2, sol16, dom16), sol16, dom16, h0)["per_slice"]
        assert e2[k] > base[k]


def test_mean_field_energy_decreases_in_h0(sol16, dom16):
    vf = reconstruct_v(sol16.w_star, sol16, dom16)
    vals = [mean_field_energy(vf, sol16, dom16, h0)["total"] for h0 in (0.5, 1, 2, 4)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        mean_field_energy(vf, sol16, dom16, 0.0)
