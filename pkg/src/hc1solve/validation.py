"""Oracle battery: analytic and brute-force cross-checks of the solver stack.

Each check returns a :class:`CheckResult` holding the measured value, its
threshold and the verdict.  ``run_battery`` is what ``hc1solve validate``
executes.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf, j0, jn_zeros

from .bstar import ReducedOperator, solve_bstar, StreamFamily
from .elliptic import (
    SolverConfig,
    biot_savart,
    cg_solve,
    convolve_free_space,
    padded_dirichlet_solve,
    poisson_dirichlet_2d,
)
from .grid import (
    Disk,
    Rectangle,
    VectorField3D,
    build_cross_section,
    curl2d,
    curl3d,
    div3d,
    embed_cylinder,
    laplacian_2d,
    perp_grad_2d,
)
from .obstacle import (
    ObstacleProblem,
    dual_norm,
    dual_norm_lp,
    radial_obstacle_profile,
    solve_double_obstacle,
)


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    comparison: str = "<="
    detail: dict | None = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.3e} {self.comparison} {self.threshold:.3e}"


def _le(name, value, threshold, **detail):
    return CheckResult(name, float(value), float(threshold), bool(value <= threshold), "<=", detail or None)


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_identities(trials: int = 20, n: int = 16, seed: int = 0) -> list:
    """div∘curl = 0 on random edge fields; curl2d∘perp_grad = −Δ on random stream functions."""
    rng = np.random.default_rng(seed)
    e1 = e2 = 0.0
    cs = build_cross_section(Disk(1.0), 2.0 / n)
    for _ in range(trials):
        sp = tuple(rng.uniform(0.5, 2.0, 3))
        v = VectorField3D(tuple(rng.standard_normal((n, n, n)) for _ in range(3)), "edge", sp)
        d = div3d(curl3d(v))
        e1 = max(e1, np.abs(d).max() * min(sp) ** 2 / max(np.abs(c).max() for c in v.components))
        w = np.where(cs.mask, rng.standard_normal(cs.n), 0.0)
        r = curl2d(perp_grad_2d(w, cs), cs.h) - laplacian_2d(w, cs, ghost=False)
        e2 = max(e2, np.abs(r[cs.mask]).max() * cs.h**2 / np.abs(w).max())
    return [
        _le("identity div3d(curl3d)", e1, 1e-12, trials=trials, n=n),
        _le("identity curl2d(perp_grad_2d) = -laplacian", e2, 1e-12, trials=trials),
    ]


def torsion_errors(hs, R: float = 1.0, cfg: SolverConfig | None = None):
    """Sup-norm error of the slice solver against (R² − r²)/4 on disk(R)."""
    cfg = cfg or SolverConfig(tol_rel=1e-10)
    errs = []
    for h in hs:
        cs = build_cross_section(Disk(R), h)
        u, _ = poisson_dirichlet_2d(np.where(cs.mask, 1.0, 0.0), cs, cfg)
        x, y = cs.coords
        ex = (R**2 - x**2 - y**2) / 4
        errs.append(float(np.abs(u - ex)[cs.mask].max()))
    return errs


def check_torsion(h: float = 1 / 32) -> list:
    hs = [h, h / 2, h / 4]
    errs = torsion_errors(hs)
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    out = [_le(f"torsion sup error at h={hh:.5g} (bound 2h^2)", e, 2 * hh * hh)
           for hh, e in zip(hs, errs)]
    for i, p in enumerate(orders):
        ok = 1.8 <= p <= 2.2
        out.append(CheckResult(f"torsion convergence order h={hs[i]:.5g}->{hs[i + 1]:.5g}",
                               p, 2.0, ok, "in [1.8, 2.2] ~", {"errors": errs}))
    return out


def bessel_errors(hs, mode: int = 3, cfg: SolverConfig | None = None):
    """Sup-norm errors for -Δu = k²J₀(kr) on the unit disk, u = J₀(kr), k the ``mode``-th zero."""
    cfg = cfg or SolverConfig(tol_rel=1e-10)
    k = float(jn_zeros(0, mode)[-1])
    errs = []
    for h in hs:
        cs = build_cross_section(Disk(1.0), h)
        x, y = cs.coords
        ex = j0(k * np.hypot(x, y))
        u, _ = poisson_dirichlet_2d(np.where(cs.mask, k * k * ex, 0.0), cs, cfg)
        errs.append(float(np.abs(u - ex)[cs.mask].max()))
    return errs


def check_bessel_mode(h: float = 1 / 32) -> list:
    """Convergence rate on an oscillatory manufactured solution (resolution-sensitive)."""
    hs = [h, h / 2, h / 4]
    errs = bessel_errors(hs)
    out = []
    for i in range(2):
        p = math.log2(errs[i] / errs[i + 1])
        out.append(CheckResult(f"Bessel-mode convergence order h={hs[i]:.5g}->{hs[i + 1]:.5g}",
                               p, 2.0, 1.8 <= p <= 2.2, "in [1.8, 2.2] ~", {"errors": errs}))
    return out


def gaussian_case(n: int = 64, h: float = 1 / 16, sigma_cells: float = 6.0):
    sig = sigma_cells * h
    c = (np.arange(n) - n / 2 + 0.5) * h
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    R = np.sqrt(X**2 + Y**2 + Z**2)
    g = np.exp(-R**2 / (2 * sig**2)) / (2 * np.pi * sig**2) ** 1.5
    exact = erf(R / (math.sqrt(2) * sig)) / (4 * np.pi * R)
    sel = (R >= sig) & (R <= min(10 * sig, 0.95 * c[-1]))
    return g, exact, sel, c, h


def check_gaussian(n: int = 64) -> list:
    g, exact, sel, c, h = gaussian_case(n)
    u = convolve_free_space(g, (h, h, h), "point")
    up = padded_dirichlet_solve(g, (c, c, c), (h, h, h))
    err = np.abs(u - exact)[sel].max() / np.abs(exact[sel]).max()
    dis = np.abs(up - u)[sel].max() / np.abs(u[sel]).max()
    return [
        _le(f"gaussian potential relative error ({n}^3)", err, 1e-3),
        _le("kernel_convolution vs padded_dirichlet", dis, 1e-2),
    ]


def loop_field(h: float = 1 / 20, loops: int = 10, kernel: str = "lattice"):
    """On-axis B³ of a staircase current loop versus the circular-loop formula.

    Returns ``[(z, computed, exact), ...]`` at z = 0 and z = R.
    """
    cs = build_cross_section(Disk(1.0), h, align="node")
    Nz = int(round(1.0 / h))
    dom = embed_cylinder(cs, 1.0, Nz)
    X, Y = cs.coords
    cx, cy = 0.5 * (cs.x[0] + cs.x[-1]), 0.5 * (cs.y[0] + cs.y[-1])
    R = loops * h
    w = ((X - cx) ** 2 + (Y - cy) ** 2 < R**2).astype(float)
    Reff = math.sqrt(w.sum() * h * h / math.pi)  # radius of the equal-area circle
    s0 = max(0, Nz // 2 - loops)
    ww = np.zeros(cs.n + (Nz,))
    ww[:, :, s0] = w
    g = perp_grad_2d(ww, cs, check=False)
    z = np.zeros(dom.box_resolution)
    J = VectorField3D((dom.embed(g.x), dom.embed(g.y), z), "face", dom.spacing)
    B = biot_savart(J, dom, SolverConfig(curl_kernel=kernel))
    i0, j0 = int(np.argmin(abs(cs.x - cx))), int(np.argmin(abs(cs.y - cy)))
    a, b, c = dom.offset
    out = []
    I = dom.h3  # unit stream-function jump over one slab
    for m in (0, loops):
        zz = m * dom.h3
        exact = Reff**2 * I / (2 * (Reff**2 + zz**2) ** 1.5)
        out.append((zz, float(B[2][a + i0, b + j0, c + s0 + m]), exact))
    return out


def check_loop_field() -> list:
    return [_le(f"loop field on axis at z={z:.3g}", abs(v / e - 1), 0.05, computed=v, exact=e)
            for z, v, e in loop_field()]


def tiny_domain():
    """5×5 interior nodes, three slices."""
    cs = build_cross_section(Rectangle(1.5, 1.5), 0.25, align="node")
    return embed_cylinder(cs, 0.75, 3)


def dense_comparison(dom=None, cfg: SolverConfig | None = None) -> dict:
    dom = dom or tiny_domain()
    cfg = cfg or SolverConfig(tol_rel=1e-12)
    op = ReducedOperator(dom, cfg)
    A = op.assemble_dense()
    m = np.repeat(dom.cs.mask[:, :, None], dom.Nz, axis=2)
    b = op.rhs()
    w, rep = cg_solve(op, b, cfg, M=op.preconditioner())
    wd = np.linalg.solve(A, b[m])
    return {
        "n": int(A.shape[0]),
        "interior_nodes": int(dom.cs.mask.sum()),
        "relative_difference": float(np.linalg.norm(w[m] - wd) / np.linalg.norm(wd)),
        "asymmetry": float(np.abs(A - A.T).max()),
        "min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (A + A.T)).min()),
        "cg": rep.to_dict(),
    }


def check_dense() -> list:
    d = dense_comparison()
    return [
        _le("tiny reduced system: CG vs dense solve", d["relative_difference"], 1e-6, n=d["n"]),
        _le("tiny reduced operator symmetry", d["asymmetry"], 1e-10),
        CheckResult("tiny reduced operator min eigenvalue", d["min_eigenvalue"], 0.0,
                    d["min_eigenvalue"] > 0, ">"),
    ]


def check_lp(seed: int = 1) -> list:
    cs = build_cross_section(Rectangle(1.0, 1.0), 0.25)
    dom = embed_cylinder(cs, 0.5, 2)
    w = StreamFamily.random(dom, np.random.default_rng(seed))
    r = dual_norm_lp(w, dom)
    rel = abs(r["lp_value"] - r["slice_sup"]) / r["slice_sup"]
    return [_le(f"LP dual norm vs slice sup ({r['n_unknowns']} unknowns)", rel, 1e-6, **r)]


def check_radial_obstacle(h: float = 1 / 32) -> list:
    cs = build_cross_section(Disk(1.0), h)
    F, a1 = -4.0, -0.5
    rho, uf = radial_obstacle_profile(F, 1.0, a1)
    rep = solve_double_obstacle(ObstacleProblem(cs, np.full(cs.n, F), a1, 1.0), SolverConfig())
    X, Y = cs.coords
    err = np.abs(rep.u - uf(np.hypot(X, Y)) * cs.mask).max() / abs(a1)
    return [_le("radial free-boundary oracle (sup, relative)", err, 0.02, rho=rho)]


def check_bstar_smoke(h: float = 1 / 16) -> list:
    cs = build_cross_section(Disk(1.0), h)
    dom = embed_cylinder(cs, 1.0, int(round(1 / h)))
    cfg = SolverConfig(preconditioner="slice_poisson")
    sol = solve_bstar(dom, cfg, with_potential=False)
    xi = dual_norm(sol.w_star)[0]
    return [
        CheckResult("B_* solve converged", sol.solve_report.final_residual_rel, cfg.tol_rel,
                    sol.solve_report.converged, "<="),
        _le("B_* energy below the w = 0 energy", sol.energy - sol.energy_zero, 0.0, xi=xi),
    ]


def run_battery(validate_h: float = 1 / 32) -> dict:
    """Run every check; ``validate_h`` is the coarsest spacing of the rate studies."""
    t0 = time.perf_counter()
    results = []
    for fn, kw in (
        (check_identities, {}),
        (check_torsion, {"h": validate_h}),
        (check_bessel_mode, {"h": validate_h}),
        (check_gaussian, {}),
        (check_loop_field, {}),
        (check_dense, {}),
        (check_lp, {}),
        (check_radial_obstacle, {}),
        (check_bstar_smoke, {}),
    ):
        results.extend(fn(**kw))
    failures = [r.name for r in results if not r.passed]
    return {
        "checks": [asdict(r) for r in results],
        "lines": [r.line() for r in results],
        "failures": failures,
        "passed": not failures,
        "elapsed_s": time.perf_counter() - t0,
    }
