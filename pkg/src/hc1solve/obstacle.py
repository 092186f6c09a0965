"""Double-obstacle problems on a cross-section and the slice dual norm.

The discrete problem is

    min  ½⟨u, L u⟩ − ⟨u, f⟩   over   a₁ ≤ u ≤ a₂,  u = 0 off Ω,

with ``L`` the ghost-fluid Dirichlet Laplacian.  It is solved by projected
SOR in red-black order, vectorized over a stack of independent slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .elliptic import SolverConfig, poisson_dirichlet_2d
from .grid import CrossSection, _shift_arr, laplacian_2d


@dataclass(frozen=True, eq=False)
class ObstacleProblem:
    cs: CrossSection
    f: np.ndarray
    a1: float
    a2: float

    def __post_init__(self):
        if not (self.a1 < 0 < self.a2):
            raise ValueError(f"bounds must satisfy a1 < 0 < a2, got ({self.a1}, {self.a2})")
        f = np.asarray(self.f, dtype=float)
        if f.shape[:2] != self.cs.n:
            raise ValueError(f"source shape {f.shape} does not match grid {self.cs.n}")
        if not np.all(np.isfinite(f)):
            raise ValueError("source has non-finite values")
        object.__setattr__(self, "f", f * self._mask(f.ndim))

    def _mask(self, ndim):
        m = self.cs.mask
        return m.reshape(m.shape + (1,) * (ndim - 2))

    @property
    def tol_active(self) -> float:
        return 1e-7 * (self.a2 - self.a1)

    def objective(self, u: np.ndarray) -> float:
        """Discrete ½∫|∇u|² − ∫uf (cell-area weighted)."""
        lu = laplacian_2d(u, self.cs)
        return float(self.cs.cell_area * (0.5 * np.sum(u * lu) - np.sum(u * self.f)))


@dataclass
class VIReport:
    u: np.ndarray
    lower_set: np.ndarray
    upper_set: np.ndarray
    residual_measure: np.ndarray
    mass: float
    iterations: int
    converged: bool
    energy_history: list = field(default_factory=list)

    @property
    def slice_masses(self) -> np.ndarray:
        """Per-slice masses for stacked problems (scalar array otherwise)."""
        return self._slice_masses

    def summary(self) -> dict:
        return {
            "mass": self.mass,
            "iterations": self.iterations,
            "converged": self.converged,
            "lower_set_size": int(self.lower_set.sum()),
            "upper_set_size": int(self.upper_set.sum()),
            "max_abs_u": float(np.abs(self.u).max()),
        }


def solve_slice_linear(b3: np.ndarray, cs: CrossSection, cfg: SolverConfig = SolverConfig()):
    """ψ with -Δψ = -(b3 + 1) in Ω, ψ = 0 on ∂Ω (one slice or a stack)."""
    b3 = np.asarray(b3, dtype=float)
    m = cs.mask.reshape(cs.mask.shape + (1,) * (b3.ndim - 2))
    u, _ = poisson_dirichlet_2d(-(b3 + 1.0) * m, cs, cfg)
    return u


def _colors(cs: CrossSection):
    i, j = np.indices(cs.n)
    red = ((i + j) % 2 == 0) & cs.mask
    black = ((i + j) % 2 == 1) & cs.mask
    return red, black


def solve_double_obstacle(p: ObstacleProblem, cfg: SolverConfig = SolverConfig(), x0=None,
                          record_energy: bool = False) -> VIReport:
    """Projected SOR.

    Sweeps stop once the estimated distance to the fixed point, i.e. the
    successive-iterate sup-norm divided by (1 − observed contraction), falls
    below ``tol_vi`` times ``min(‖u‖∞, max|bound|)``.  A stacked source ``(nx, ny, m)``
    solves ``m`` independent problems at once.
    """
    cs = p.cs
    f = p.f
    nd = f.ndim
    mb = p._mask(nd)
    h2 = cs.h**2
    diag = cs.laplacian_diag.reshape(mb.shape)
    dinv = np.where(mb, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    red, black = (c.reshape(mb.shape) for c in _colors(cs))
    omega = cfg.sor_omega
    bound = max(abs(p.a1), p.a2)
    if x0 is None:
        u = np.zeros_like(f)
    else:
        u = np.clip(np.asarray(x0, dtype=float), p.a1, p.a2) * mb
    history = [p.objective(u)] if record_energy else []
    prev_diff = None
    it = 0
    converged = not np.any(f) and x0 is None
    while not converged and it < cfg.vi_max_iter:
        u_old = u.copy()
        for color in (red, black):
            nbr = (_shift_arr(u, 1, 0) + _shift_arr(u, -1, 0)
                   + _shift_arr(u, 0, 1) + _shift_arr(u, 0, -1)) * mb
            gs = (f + nbr / h2) * dinv
            upd = np.clip(u + omega * (gs - u), p.a1, p.a2)
            u = np.where(color, upd, u)
        it += 1
        diff = float(np.abs(u - u_old).max())
        if record_energy:
            history.append(p.objective(u))
        rho = min(diff / prev_diff, 0.999) if prev_diff else 0.5
        prev_diff = diff if diff > 0 else None
        # tolerance relative to the solution size (never above the bound scale)
        tol = cfg.tol_vi * max(min(float(np.abs(u).max()), bound), 1e-12 * bound)
        if diff == 0 or diff / (1.0 - rho) <= tol:
            converged = True
    return _report(p, u, it, converged, history)


def _report(p: ObstacleProblem, u, it, converged, history) -> VIReport:
    cs = p.cs
    mb = p._mask(u.ndim)
    res = (laplacian_2d(u, cs) - p.f) * mb
    ta = p.tol_active
    lower = (u <= p.a1 + ta) & mb
    upper = (u >= p.a2 - ta) & mb
    active = lower | upper
    per = np.sum(np.abs(res) * active, axis=(0, 1)) * cs.cell_area
    rep = VIReport(
        u=u, lower_set=lower, upper_set=upper, residual_measure=res,
        mass=float(np.sum(per)), iterations=it, converged=converged, energy_history=history,
    )
    rep._slice_masses = np.asarray(per)
    return rep


def solve_constrained_slice(b3: np.ndarray, h0: float, cs: CrossSection,
                            cfg: SolverConfig = SolverConfig(), psi_lin=None) -> VIReport:
    """Obstacle problem with bounds ±1/(2 h0) and source -(b3 + 1).

    ``psi_lin`` (the unconstrained solution, computed if absent) seeds the
    iteration; when it already satisfies the bounds it is returned as is.
    """
    if not h0 > 0:
        raise ValueError(f"h0 must be positive, got {h0}")
    b3 = np.asarray(b3, dtype=float)
    bound = 1.0 / (2.0 * h0)
    p = ObstacleProblem(cs, -(b3 + 1.0), -bound, bound)
    if psi_lin is None:
        psi_lin = solve_slice_linear(b3, cs, cfg)
    if np.abs(psi_lin).max() < bound - p.tol_active:
        rep = _report(p, psi_lin * p._mask(psi_lin.ndim), 0, True, [])
        # the linear solve is exact up to CG tolerance: no coincidence set
        return rep
    return solve_double_obstacle(p, cfg, x0=psi_lin)


# ---------------------------------------------------------------------------
# checks on VI solutions
# ---------------------------------------------------------------------------


def verify_vi_bounds(rep: VIReport, p: ObstacleProblem, tol: float | None = None) -> dict:
    """Nodewise -f⁻ ≤ -Δ_h u ≤ f⁺ on interior nodes (default tol 10 h²)."""
    tol = 10 * p.cs.h**2 if tol is None else tol
    mb = p._mask(rep.u.ndim)
    lu = laplacian_2d(rep.u, p.cs)
    fp = np.maximum(p.f, 0.0)
    fm = np.maximum(-p.f, 0.0)
    low = (lu < -fm - tol) & mb
    high = (lu > fp + tol) & mb
    viol = np.argwhere(low | high)
    return {
        "ok": len(viol) == 0,
        "violations": [tuple(int(v) for v in row) for row in viol[:50]],
        "n_violations": int(len(viol)),
        "max_excess": float(max(np.max((-fm - lu) * mb), np.max((lu - fp) * mb), 0.0)),
    }


def complementarity_residual(rep: VIReport, p: ObstacleProblem) -> float:
    """max over nodes of |−Δ_h u − f| · distance to the nearest bound."""
    dist = np.minimum(rep.u - p.a1, p.a2 - rep.u)
    return float(np.max(np.abs(rep.residual_measure) * np.maximum(dist, 0.0)))


def sign_condition(rep: VIReport, tol: float) -> bool:
    r = rep.residual_measure
    return bool(np.all(r[rep.lower_set] >= -tol) and np.all(r[rep.upper_set] <= tol))


def h1_norm(u: np.ndarray, cs: CrossSection) -> float:
    """Discrete H¹ norm: (⟨u, L u⟩ + ⟨u, u⟩)^½ with cell-area weights."""
    return float(np.sqrt(cs.cell_area * (np.sum(u * laplacian_2d(u, cs)) + np.sum(u * u * cs.mask))))


def l2_norm(f: np.ndarray, cs: CrossSection) -> float:
    return float(np.sqrt(cs.cell_area * np.sum((f * cs.mask) ** 2)))


def stability_check(f1: np.ndarray, f2: np.ndarray, template: ObstacleProblem,
                    cfg: SolverConfig = SolverConfig()) -> float:
    """‖u₁ − u₂‖_{H¹} / ‖f₁ − f₂‖_{L²} for two sources under the same bounds."""
    df = l2_norm(np.asarray(f1) - np.asarray(f2), template.cs)
    if df == 0:
        return 0.0
    r1 = solve_double_obstacle(ObstacleProblem(template.cs, f1, template.a1, template.a2), cfg)
    r2 = solve_double_obstacle(ObstacleProblem(template.cs, f2, template.a1, template.a2), cfg)
    return h1_norm(r1.u - r2.u, template.cs) / df


def poincare_estimate(cs: CrossSection) -> float:
    """H¹/L² bound of the unconstrained solution map, from the first eigenvalue."""
    import scipy.sparse.linalg as spla

    lam = spla.eigsh(cs.laplacian_matrix.tocsc(), k=1, sigma=0, which="LM",
                     return_eigenvectors=False)[0]
    return float(np.sqrt(1.0 / lam + 1.0 / lam**2))


# ---------------------------------------------------------------------------
# dual norm
# ---------------------------------------------------------------------------


def dual_norm(w) -> tuple:
    """ξ = max over slices of ‖ψ‖_∞, with the argmax slice and node.

    Accepts a StreamFamily, an ``(nx, ny, Nz)`` stack or a single slice.
    """
    arr = np.asarray(getattr(w, "w", w), dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    a = np.abs(arr)
    flat = int(np.argmax(a))
    i, j, k = np.unravel_index(flat, a.shape)
    return float(a[i, j, k]), int(k), (int(i), int(j))


def dual_norm_lp(w, dom, cfg: SolverConfig = SolverConfig()) -> dict:
    """Brute-force the dual-norm supremum as a linear program (toy grids).

    For the field ``B`` generated by the stream family ``w``, maximize
    ``Σ_edges B·(∇×φ) V`` over in-plane test fields ``φ`` on the slice faces
    subject to ``Σ_nodes |curl φ̂| V ≤ 1`` (the slice curl is taken at the
    interior nodes of each slice).  The objective coefficients come from the
    discrete transpose of ``∇×``, so the 3-D pairing is evaluated, not assumed.
    """
    from .bstar import ReducedOperator
    from .grid import VectorField3D, curl3d

    cs = dom.cs
    wv = np.asarray(getattr(w, "w", w), dtype=float)
    op = ReducedOperator(dom, cfg, field_margin=3)
    m = 3
    cx, cy = op.potential(wv, m)
    B = curl3d(VectorField3D((cx, cy, np.zeros_like(cx)), "face", dom.spacing))
    # Σ_e B·curl(φ) = Σ_f curlᵀ(B)·φ, and the edge→face curl is that transpose
    cB = curl3d(B)
    inner = tuple(slice(m, m + n) for n in dom.window_shape)
    gx, gy = cB[0][inner], cB[1][inner]
    mask = cs.mask
    from .grid import _shift

    fx = mask | _shift(mask, 0, 1)
    fy = mask | _shift(mask, 1, 0)
    Nz = dom.Nz
    V = dom.cell_volume
    h = cs.h
    # variable indexing
    fxi = np.argwhere(np.repeat(fx[:, :, None], Nz, axis=2))
    fyi = np.argwhere(np.repeat(fy[:, :, None], Nz, axis=2))
    ni = np.argwhere(np.repeat(mask[:, :, None], Nz, axis=2))
    nfx, nfy, nn = len(fxi), len(fyi), len(ni)
    nvar = nfx + nfy + nn
    node_id = -np.ones(mask.shape + (Nz,), dtype=int)
    node_id[tuple(ni.T)] = np.arange(nn)
    c = np.zeros(nvar)
    c[:nfx] = -gx[tuple(fxi.T)] * V
    c[nfx:nfx + nfy] = -gy[tuple(fyi.T)] * V
    # curl2d(φ)(i,j) = (φy(i,j) − φy(i−1,j))/h − (φx(i,j) − φx(i,j−1))/h
    rows, cols, vals = [], [], []
    for q, (i, j, k) in enumerate(fxi):
        for (a, b), sgn in (((i, j), -1.0), ((i, j + 1), 1.0)):
            if b < mask.shape[1] and node_id[a, b, k] >= 0:
                rows.append(node_id[a, b, k]); cols.append(q); vals.append(sgn / h)
    for q, (i, j, k) in enumerate(fyi):
        for (a, b), sgn in (((i, j), 1.0), ((i + 1, j), -1.0)):
            if a < mask.shape[0] and node_id[a, b, k] >= 0:
                rows.append(node_id[a, b, k]); cols.append(nfx + q); vals.append(sgn / h)
    C = np.zeros((nn, nvar))
    np.add.at(C, (np.array(rows), np.array(cols)), np.array(vals))
    T = np.zeros((nn, nvar))
    T[np.arange(nn), nfx + nfy + np.arange(nn)] = 1.0
    A_ub = np.vstack([C - T, -C - T, np.concatenate([np.zeros(nfx + nfy), np.full(nn, V)])[None]])
    b_ub = np.concatenate([np.zeros(2 * nn), [1.0]])
    bounds = [(None, None)] * (nfx + nfy) + [(0, None)] * nn
    res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    return {"lp_value": float(-res.fun), "n_unknowns": nvar, "slice_sup": dual_norm(wv)[0]}


# ---------------------------------------------------------------------------
# radial oracle
# ---------------------------------------------------------------------------


def radial_obstacle_profile(F: float, R: float, a1: float):
    """Radial solution of -Δu = F < 0 on the disk with u ≥ a1 binding at the centre.

    The coincidence radius ρ is found by shooting: start at r = ρ with
    u = a1, u' = 0, integrate the radial ODE outward and require u(R) = 0.
    Returns ``(rho, u)`` with ``u`` a callable of r.  ``rho = 0`` means the
    constraint is inactive.
    """
    from scipy.integrate import solve_ivp

    if not F < 0:
        raise ValueError("the central coincidence set needs F < 0")
    u_free_min = F * R**2 / 4  # unconstrained minimum -(-F)R²/4 at r = 0
    if u_free_min >= a1:
        return 0.0, lambda r: -F * (np.asarray(r) ** 2 - R**2) / 4

    def shoot(rho):
        sol = solve_ivp(lambda r, y: (y[1], -F - y[1] / r), (rho, R), (a1, 0.0),
                        rtol=1e-12, atol=1e-14, dense_output=True)
        return sol

    def miss(rho):
        return shoot(rho).y[0, -1]

    rho = scipy.optimize.brentq(miss, 1e-9 * R, R * (1 - 1e-9), xtol=1e-14)
    sol = shoot(rho)

    def u(r):
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, a1)
        outside = r > rho
        if np.any(outside):
            out[outside] = sol.sol(np.minimum(r[outside], R))[0]
        return out

    return rho, u
