import numpy as np
import pytest

from hc1solve.elliptic import SolverConfig, poisson_dirichlet_2d
from hc1solve.grid import Disk, Rectangle, build_cross_section, embed_cylinder
from hc1solve.bstar import StreamFamily
from hc1solve.obstacle import (
    ObstacleProblem,
    complementarity_residual,
    dual_norm,
    dual_norm_lp,
    poincare_estimate,
    radial_obstacle_profile,
    sign_condition,
    solve_constrained_slice,
    solve_double_obstacle,
    solve_slice_linear,
    stability_check,
    verify_vi_bounds,
)
from hc1solve.validation import check_radial_obstacle


@pytest.fixture(scope="module")
def cs16():
    return build_cross_section(Disk(1.0), 1 / 16)


def test_problem_validation(cs16):
    f = np.zeros(cs16.n)
    for a1, a2 in ((0.0, 1.0), (-1.0, 0.0), (1.0, -1.0)):
        with pytest.raises(ValueError):
            ObstacleProblem(cs16, f, a1, a2)
    with pytest.raises(ValueError):
        ObstacleProblem(cs16, np.zeros((3, 3)), -1, 1)
    with pytest.raises(ValueError):
        ObstacleProblem(cs16, np.full(cs16.n, np.inf), -1, 1)


def test_zero_source(cs16):
    rep = solve_double_obstacle(ObstacleProblem(cs16, np.zeros(cs16.n), -1, 1))
    assert not np.any(rep.u) and rep.mass == 0 and rep.converged and rep.iterations == 0


def test_wide_bounds_match_linear_solve(cs16):
    rng = np.random.default_rng(0)
    f = rng.standard_normal(cs16.n) * cs16.mask
    cfg = SolverConfig(tol_rel=1e-12, tol_vi=1e-12)
    lin, _ = poisson_dirichlet_2d(f, cs16, cfg)
    rep = solve_double_obstacle(ObstacleProblem(cs16, f, -100, 100), cfg)
    assert rep.converged and rep.mass == 0
    assert np.abs(rep.u - lin).max() <= 1e-8 * np.abs(lin).max()


def test_radial_oracle():
    (res,) = check_radial_obstacle(1 / 32)
    assert res.passed and res.value <= 0.02


def test_radial_profile_inactive_branch():
    rho, u = radial_obstacle_profile(-1.0, 1.0, -10.0)
    assert rho == 0.0 and u(0.0) == pytest.approx(-0.25)
    with pytest.raises(ValueError):
        radial_obstacle_profile(1.0, 1.0, -1.0)


def test_vi_bounds_random_cases():
    rng = np.random.default_rng(1)
    cs = build_cross_section(Disk(1.0), 1 / 12)
    cfg = SolverConfig(tol_vi=1e-11)
    for _ in range(50):
        f = rng.normal(0, 10, cs.n) * cs.mask
        a1, a2 = -rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)
        p = ObstacleProblem(cs, f, a1, a2)
        rep = solve_double_obstacle(p, cfg)
        assert rep.converged
        chk = verify_vi_bounds(rep, p)
        assert chk["ok"], chk
        assert np.all(rep.u >= a1) and np.all(rep.u <= a2)
        scale = np.abs(f).max() * (a2 - a1)
        assert complementarity_residual(rep, p) <= 1e-6 * scale
        assert sign_condition(rep, 1e-6 * np.abs(f).max())


def test_energy_descent(cs16):
    f = np.full(cs16.n, 20.0)
    p = ObstacleProblem(cs16, f, -0.5, 0.5)
    rep = solve_double_obstacle(p, SolverConfig(sor_omega=1.0), record_energy=True)
    e = np.array(rep.energy_history)
    assert np.all(np.diff(e) <= 1e-12 * np.abs(e).max())
    assert rep.upper_set.any()


def test_stacked_matches_single(cs16):
    rng = np.random.default_rng(2)
    F = rng.normal(0, 10, cs16.n + (3,)) * cs16.mask[:, :, None]
    cfg = SolverConfig(tol_vi=1e-12)
    stack = solve_double_obstacle(ObstacleProblem(cs16, F, -0.1, 0.1), cfg)
    for k in range(3):
        one = solve_double_obstacle(ObstacleProblem(cs16, F[:, :, k], -0.1, 0.1), cfg)
        assert np.abs(one.u - stack.u[:, :, k]).max() <= 1e-9
        assert one.mass == pytest.approx(stack.slice_masses[k], rel=1e-6, abs=1e-12)


# -- constrained slices ---------------------------------------------------------


def test_constrained_slice_inactive(cs16):
    b3 = np.full(cs16.n, -0.5)
    rep = solve_constrained_slice(b3, 1.0, cs16)
    assert rep.mass == 0 and rep.iterations == 0 and not rep.lower_set.any()


def test_constrained_slice_tiny_bounds(cs16):
    b3 = np.full(cs16.n, -0.3)
    rep = solve_constrained_slice(b3, 1e6, cs16)
    expected = np.sum(np.abs(b3 + 1) * cs16.mask) * cs16.cell_area
    assert rep.mass == pytest.approx(expected, rel=1e-3)
    with pytest.raises(ValueError):
        solve_constrained_slice(b3, 0.0, cs16)


def test_mass_monotone_and_onset(cs16):
    c = -0.2
    b3 = np.full(cs16.n, c)
    psi = solve_slice_linear(b3, cs16)
    xi = np.abs(psi).max()
    h0c = 1 / (2 * xi)
    masses = [solve_constrained_slice(b3, t * h0c, cs16, psi_lin=psi).mass
              for t in (0.9, 0.99, 1.0, 1.01, 1.05, 1.2, 1.5)]
    assert masses[0] == masses[1] == 0
    assert masses[2] <= 1e-9
    assert masses[3] > 0 and masses[4] > 0
    assert all(b >= a for a, b in zip(masses[3:], masses[4:]))


def test_slice_linear_constant_b3():
    for h in (1 / 16, 1 / 32):
        cs = build_cross_section(Disk(1.0), h)
        assert not np.any(solve_slice_linear(np.full(cs.n, -1.0), cs))
        for c in (-0.5, 0.3):
            psi = solve_slice_linear(np.full(cs.n, c), cs)
            assert abs(np.abs(psi).max() - (1 + c) / 4) <= 2 * h * h * (1 + c)
            assert np.all(psi <= 1e-14)


# -- stability ----------------------------------------------------------------------


def test_stability(cs16):
    rng = np.random.default_rng(3)
    tmpl = ObstacleProblem(cs16, np.zeros(cs16.n), -0.05, 0.05)
    f = rng.normal(0, 5, cs16.n)
    assert stability_check(f, f, tmpl) == 0.0
    C = poincare_estimate(cs16)
    for _ in range(20):
        f1, f2 = rng.normal(0, 5, (2,) + cs16.n)
        assert stability_check(f1, f2, tmpl) <= 10 * C


def test_stability_constant_scales():
    rng = np.random.default_rng(4)
    cs = build_cross_section(Disk(1.0), 1 / 16)
    tmpl = ObstacleProblem(cs, np.zeros(cs.n), -0.2, 0.2)
    f = rng.normal(0, 5, cs.n)
    g = rng.normal(0, 1, cs.n)
    cfg = SolverConfig(tol_vi=1e-12)
    r1 = stability_check(f, f + 1e-2 * g, tmpl, cfg)
    r2 = stability_check(f, f + 5e-3 * g, tmpl, cfg)
    assert abs(r1 / r2 - 1) <= 0.2


def test_poincare_estimate_rectangle():
    cs = build_cross_section(Rectangle(1.0, 1.0), 1 / 32, align="node")
    lam = 2 * np.pi**2
    assert poincare_estimate(cs) == pytest.approx(np.sqrt(1 / lam + 1 / lam**2), rel=0.01)


# -- dual norm ------------------------------------------------------------------------


def test_dual_norm_basic():
    assert dual_norm(np.zeros((4, 4, 3)))[0] == 0
    w = np.zeros((5, 5, 3))
    w[2, 3, 1] = -2.0
    w[1, 1, 2] = 1.5
    assert dual_norm(w) == (2.0, 1, (2, 3))
    assert dual_norm(w[:, :, 2]) == (1.5, 0, (1, 1))


def test_dual_norm_single_slice_torsion():
    cs = build_cross_section(Disk(1.0), 1 / 32)
    psi = solve_slice_linear(np.zeros(cs.n), cs)
    assert dual_norm(psi)[0] == pytest.approx(0.25, abs=2 / 32**2)


def test_dual_norm_lp():
    cs = build_cross_section(Rectangle(1.0, 1.0), 0.25)
    dom = embed_cylinder(cs, 0.5, 2)
    for seed in (1, 2):
        w = StreamFamily.random(dom, np.random.default_rng(seed))
        r = dual_norm_lp(w, dom)
        assert abs(r["lp_value"] - r["slice_sup"]) <= 1e-6 * r["slice_sup"]
