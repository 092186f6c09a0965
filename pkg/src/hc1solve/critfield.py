"""ξ, the leading-order H_c1 coefficient, h₀ sweeps and mean-field diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bstar import BStarSolution, solve_bstar
from .elliptic import SolverConfig
from .grid import DiscretizedDomain, VectorField2D, VectorField3D, build_cross_section, curl2d, curl3d, embed_cylinder, perp_grad_2d
from .obstacle import dual_norm, solve_constrained_slice, solve_slice_linear


class DegenerateDomainError(ValueError):
    pass


@dataclass
class CriticalFieldReport:
    xi: float
    xi_route2: float
    hc1_coefficient: float
    slice_curve: list
    onset_h0: float | None = None
    sweep: list = field(default_factory=list)
    epsilon_eval: list = field(default_factory=list)
    edge_slices: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    consistency_tol: float = 1e-2

    @property
    def route_disagreement(self) -> float:
        return abs(self.xi - self.xi_route2) / self.xi if self.xi > 0 else 0.0

    @property
    def routes_consistent(self) -> bool:
        return self.route_disagreement <= self.consistency_tol

    def to_dict(self) -> dict:
        d = {
            "xi": self.xi,
            "xi_route2": self.xi_route2,
            "route_disagreement": self.route_disagreement,
            "routes_consistent": self.routes_consistent,
            "hc1_coefficient": self.hc1_coefficient,
            "edge_slices": self.edge_slices,
            "flags": list(self.flags),
        }
        if self.onset_h0 is not None:
            d["onset_h0"] = self.onset_h0
        if self.epsilon_eval:
            d["epsilon_eval"] = self.epsilon_eval
        return d


# ---------------------------------------------------------------------------
# ξ and the coefficient
# ---------------------------------------------------------------------------


def slice_curve(w, dom: DiscretizedDomain) -> list:
    """(x₃, ‖ψ_k‖_∞, argmax node) per slice."""
    w = np.asarray(getattr(w, "w", w))
    out = []
    for k, z in enumerate(dom.slice_centers):
        a = np.abs(w[:, :, k])
        i, j = np.unravel_index(int(np.argmax(a)), a.shape)
        out.append((float(z), float(a[i, j]), (int(i), int(j))))
    return out


def compute_xi(sol: BStarSolution, dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig()):
    """ξ by two routes.

    Route 1 reads the sup-norm of the reduced minimizer's stream slices.
    Route 2 re-solves the slice Dirichlet problems with B_*³ as data, using
    the Jacobi-preconditioned planar CG (no solve shared with route 1).
    Returns ``(xi, xi_route2, curve)``.
    """
    xi1 = dual_norm(sol.w_star)[0]
    b3 = sol.b3_slices()
    if sol.gauge_zero:
        # zero gauge: the slice source B³ + 1 loses its unit term
        b3 = b3 - 1.0
    cfg2 = SolverConfig(**{**cfg.__dict__, "preconditioner": "diagonal"})
    psi = solve_slice_linear(b3, dom.cs, cfg2)
    xi2 = dual_norm(psi)[0]
    return xi1, xi2, slice_curve(sol.w_star, dom)


def hc1_coefficient(xi: float) -> float:
    if not xi > 0:
        raise DegenerateDomainError(f"xi must be positive, got {xi}")
    return 1.0 / (2.0 * xi)


@dataclass(frozen=True)
class HC1Estimate:
    value: float
    epsilon: float
    provenance: str = "leading-order-only"


def hc1_estimate(xi: float, epsilon: float) -> HC1Estimate:
    """(1/(2ξ))·|ln ε|, dropping the o(1) correction."""
    if not (0 < epsilon < 1):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return HC1Estimate(hc1_coefficient(xi) * abs(math.log(epsilon)), float(epsilon))


# ---------------------------------------------------------------------------
# h0 sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    h0: np.ndarray
    mass: np.ndarray
    slice_mass: np.ndarray  # (n_h0, Nz)
    onset_h0: float | None
    mass_tol: float
    status: str
    iterations: list
    label: str = "decoupled diagnostic"
    reports: dict = field(default_factory=dict)

    def rows(self):
        return [(float(h), float(m)) for h, m in zip(self.h0, self.mass)]


def sweep_h0(sol: BStarSolution, dom: DiscretizedDomain, h0_grid, cfg: SolverConfig = SolverConfig(),
             mass_tol: float | None = None, keep: tuple = ()) -> SweepResult:
    """Total slice vorticity mass as a function of h₀; onset = first mass > mass_tol.

    ``keep`` lists h₀ values whose VIReport is retained in ``reports``.
    """
    h0_grid = np.asarray(h0_grid, dtype=float)
    if h0_grid.size == 0:
        raise ValueError("empty h0 grid")
    if np.any(h0_grid <= 0) or np.any(np.diff(h0_grid) <= 0):
        raise ValueError("h0 grid must be positive and strictly increasing")
    mass_tol = 1e-6 * dom.volume if mass_tol is None else mass_tol
    b3 = sol.b3_slices()
    psi_lin = solve_slice_linear(b3, dom.cs, cfg)
    masses, per, its, reports = [], [], [], {}
    warm = psi_lin
    for h0 in h0_grid:
        rep = solve_constrained_slice(b3, float(h0), dom.cs, cfg, psi_lin=warm)
        warm = rep.u if rep.iterations else psi_lin
        slice_masses = rep.slice_masses * dom.h3
        per.append(slice_masses)
        masses.append(float(slice_masses.sum()))
        its.append(rep.iterations)
        if any(np.isclose(h0, k) for k in keep):
            reports[float(h0)] = rep
    masses = np.array(masses)
    hit = np.nonzero(masses > mass_tol)[0]
    if hit.size == 0:
        onset, status = None, "subcritical"
    elif hit[0] == 0:
        onset, status = None, "supercritical"
    else:
        onset, status = float(h0_grid[hit[0]]), "onset"
    return SweepResult(h0_grid, masses, np.array(per), onset, mass_tol, status, its, reports=reports)


# ---------------------------------------------------------------------------
# supercurrent reconstruction and the mean-field energy
# ---------------------------------------------------------------------------


@dataclass
class VFamily:
    psi: np.ndarray
    v: VectorField2D  # stacked (nx, ny, Nz) components on the slice faces
    curl: np.ndarray  # slice curl at interior nodes
    slice_tv: np.ndarray  # |curl v̂_k|(Ω)
    tv_3d: float
    tv_slices: float
    label: str = "decoupled diagnostic"

    @property
    def slicing_gap(self) -> float:
        den = max(abs(self.tv_3d), 1e-300)
        return abs(self.tv_3d - self.tv_slices) / den


def _in_plane_potential(A_star: VectorField3D, sol: BStarSolution):
    return A_star[0][sol.inner], A_star[1][sol.inner]


def reconstruct_v(psi, sol: BStarSolution, dom: DiscretizedDomain) -> VFamily:
    """v̂_k = ∇̂⊥ψ_k + Â_*(·, x₃ₖ) and both evaluations of |curl v̂|(D).

    The in-plane gradient uses the boundary-cut links, so the slice curl of
    the first term equals the ghost-fluid -Δψ.  ``tv_3d`` is the total variation
    of the z-component of the 3-D staggered curl of (v̂, 0) over the cylinder
    nodes; ``tv_slices`` integrates the slice masses in x₃ with a trapezoid
    rule on the slice centres (linear extrapolation to the end caps).
    """
    cs = dom.cs
    psi = np.asarray(getattr(psi, "w", psi), dtype=float)
    g = perp_grad_2d(psi, cs, cut=True)
    ax, ay = _in_plane_potential(sol.A_star, sol)
    vx, vy = g.x + ax, g.y + ay
    mb = cs.mask[:, :, None]
    # 3-D: faces carry (v̂, 0); curl lands on edges, the z-edges are the slice nodes
    c3 = curl3d(VectorField3D((vx, vy, np.zeros_like(vx)), "face", dom.spacing))[2] * mb
    tv_3d = float(np.sum(np.abs(c3)) * dom.cell_volume)
    c2 = curl2d(VectorField2D(vx, vy), cs.h) * mb
    slice_tv = np.sum(np.abs(c2), axis=(0, 1)) * cs.cell_area
    z = dom.slice_centers
    zz = np.concatenate([[0.0], z, [dom.L]])
    if len(z) > 1:
        m0 = slice_tv[0] + (slice_tv[0] - slice_tv[1]) * (z[0] - 0) / (z[1] - z[0])
        mL = slice_tv[-1] + (slice_tv[-1] - slice_tv[-2]) * (dom.L - z[-1]) / (z[-1] - z[-2])
    else:
        m0 = mL = slice_tv[0]
    mm = np.concatenate([[max(m0, 0.0)], slice_tv, [max(mL, 0.0)]])
    tv_slices = float(np.trapezoid(mm, zz))
    return VFamily(psi, VectorField2D(vx, vy), c2, slice_tv, tv_3d, tv_slices)


def mean_field_energy(vfam: VFamily, sol: BStarSolution, dom: DiscretizedDomain, h0: float) -> dict:
    """½[‖v̂ − Â_*‖²_D + (1/h₀)|curl v̂|(D) + ‖∇×A_* − e₃‖²].

    The kinetic term is the ghost-fluid Dirichlet form of ψ, the field term
    is ‖B_*‖² (∇×A_* − e₃ = B_* by construction).  Returns the total and its
    parts, including the per-slice part ``½‖∇ψ_k‖² + |curl v̂_k|/(2h₀)``.
    """
    from .grid import laplacian_2d

    if not h0 > 0:
        raise ValueError("h0 must be positive")
    cs = dom.cs
    psi = vfam.psi
    kin_k = np.sum(psi * laplacian_2d(psi, cs), axis=(0, 1)) * cs.cell_area
    per_slice = 0.5 * kin_k + vfam.slice_tv / (2 * h0)
    kinetic = float(kin_k.sum() * dom.h3)
    total = 0.5 * (kinetic + vfam.tv_3d / h0 + sol.field_energy)
    return {
        "total": float(total),
        "kinetic": kinetic,
        "vorticity": vfam.tv_3d,
        "field": sol.field_energy,
        "per_slice": per_slice,
        "label": vfam.label,
    }


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def critical_field_report(sol: BStarSolution, dom: DiscretizedDomain,
                          cfg: SolverConfig = SolverConfig(), h0_grid=None, epsilons=(),
                          consistency_tol: float = 1e-2) -> tuple:
    """Assemble the report; returns ``(report, sweep or None)``."""
    xi1, xi2, curve = compute_xi(sol, dom, cfg)
    flags = []
    if not sol.converged:
        flags.append("bstar-not-converged")
    rep = CriticalFieldReport(
        xi=xi1, xi_route2=xi2, hc1_coefficient=hc1_coefficient(xi1), slice_curve=curve,
        consistency_tol=consistency_tol,
        edge_slices={"first": curve[0][1], "last": curve[-1][1],
                     "interior_max": max(c[1] for c in curve[1:-1]) if len(curve) > 2 else curve[0][1]},
    )
    if not rep.routes_consistent:
        flags.append("xi-routes-disagree")
    sw = None
    if h0_grid is not None:
        sw = sweep_h0(sol, dom, h0_grid, cfg)
        rep.sweep = sw.rows()
        rep.onset_h0 = sw.onset_h0
        if np.any(np.diff(sw.mass) < -sw.mass_tol):
            flags.append("sweep-mass-not-monotone")
        if sw.onset_h0 is None:
            flags.append(f"onset-absent:{sw.status}")
    for eps in epsilons:
        est = hc1_estimate(xi1, eps)
        rep.epsilon_eval.append({"epsilon": eps, "hc1": est.value, "provenance": est.provenance})
    rep.flags = flags
    return rep, sw


def xi_for(shape, h: float, L: float, Nz: int, pad_factor: float = 1.0,
           cfg: SolverConfig = SolverConfig()) -> float:
    """Convenience: build the domain, solve for B_* and return ξ (route 1)."""
    cs = build_cross_section(shape, h)
    dom = embed_cylinder(cs, L, Nz, pad_factor)
    sol = solve_bstar(dom, cfg, with_potential=False)
    return dual_norm(sol.w_star)[0]


def richardson_xi(values, ratios=2.0, order: float = 2.0) -> float:
    """Richardson extrapolation of the last two values of a halving sequence."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v[-1])
    r = ratios**order
    return float(v[-1] + (v[-1] - v[-2]) / (r - 1))
