"""Minimizer B_* of the reduced magnetostatic energy and its Coulomb potential A_*.

Admissible fields are parametrized by per-slice Dirichlet stream functions
``w``: the current is ``J = (∂₂w, -∂₁w, 0)`` on the in-plane faces of each
slice, ``B = ∇×(Γ₃*J)`` and the energy

    J(w) = ½∫|B|² + ½∫_D |∇̂⊥w + â|²

is quadratic in ``w``.  Its normal equations ``𝒜w = b`` are solved by
preconditioned CG, with the convolution confined to the cylinder window.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as spla

from .elliptic import (
    FreeSpaceConvolver,
    SolveReport,
    SolverConfig,
    cg_solve,
)
from .grid import (
    CrossSection,
    DiscretizedDomain,
    VectorField2D,
    VectorField3D,
    curl2d,
    curl3d,
    div3d,
    gauge_field_slice,
    interior_distance_mask,
    laplacian_2d,
    laplacian_3d,
    perp_grad_2d,
    staggered_coords,
)


@dataclass(frozen=True, eq=False)
class StreamFamily:
    """Stack of slice stream functions, shape ``(nx, ny, Nz)``."""

    w: np.ndarray
    cs: CrossSection

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 3 or w.shape[:2] != self.cs.n:
            raise ValueError(f"stream family shape {w.shape} does not match grid {self.cs.n}")
        if not np.all(np.isfinite(w)):
            raise ValueError("stream family has non-finite values")
        if np.any(w[~self.cs.mask] != 0):
            raise ValueError("stream family must vanish outside the cross-section")
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls, dom: DiscretizedDomain):
        return cls(np.zeros(dom.window_shape), dom.cs)

    @classmethod
    def random(cls, dom: DiscretizedDomain, rng):
        w = rng.standard_normal(dom.window_shape) * dom.cs.mask[:, :, None]
        return cls(w, dom.cs)

    @property
    def Nz(self) -> int:
        return self.w.shape[2]

    def slice(self, k: int) -> np.ndarray:
        return self.w[:, :, k]


@dataclass
class BStarSolution:
    """Minimizer and derived fields.

    ``B_star`` (edges) and ``A_star`` (faces) live on the box sub-window
    ``field_window``; ``inner`` locates the cylinder window inside it.
    """

    w_star: StreamFamily
    B_star: VectorField3D
    A_star: VectorField3D | None
    energy: float
    energy_zero: float
    field_window: tuple
    inner: tuple
    solve_report: SolveReport
    field_energy: float = 0.0  # ∫_{R³}|B_*|², evaluated as ⟨J, Γ₃*J⟩
    gauge_zero: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.solve_report.converged

    def b3_slices(self) -> np.ndarray:
        """B_*³ at the slice nodes, shape ``(nx, ny, Nz)``."""
        return self.B_star[2][self.inner]


class ReducedOperator:
    """Matrix-free 𝒜w = Gᵀ(Γ₃*Gw) + (-Δ̂)w on the Dirichlet stream space."""

    def __init__(self, dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig(),
                 a_hat: VectorField2D | None = None, gauge_override_zero: bool = False,
                 field_margin: int = 4):
        self.dom = dom
        self.cfg = cfg
        self.cs = dom.cs
        reach = tuple(n - 1 + 2 * field_margin for n in dom.window_shape)
        self.conv = FreeSpaceConvolver(dom.spacing, cfg.curl_kernel, cfg.threads, reach=reach)
        if gauge_override_zero:
            z = np.zeros(self.cs.n)
            a_hat = VectorField2D(z, z.copy())
        self.a_hat = a_hat if a_hat is not None else gauge_field_slice(self.cs)
        self.calls = 0

    # -- pieces ---------------------------------------------------------------
    def current(self, w: np.ndarray):
        """In-plane current (Jx, Jy) on the slice faces, window-shaped."""
        g = perp_grad_2d(w, self.cs, check=False)
        return g.x, g.y

    def potential(self, w: np.ndarray, margin: int = 0):
        """χ = Γ₃*J on the cylinder window grown by ``margin`` cells per side."""
        jx, jy = self.current(w)
        s = jx.shape
        t = tuple(n + 2 * margin for n in s)
        shift = (-margin,) * 3
        return self.conv(jx, t, shift), self.conv(jy, t, shift)

    def adjoint_grad(self, vx, vy) -> np.ndarray:
        """Gᵀ: slice curl restricted to interior nodes."""
        return curl2d(VectorField2D(vx, vy), self.cs.h) * self.cs.mask[:, :, None]

    # -- operator -------------------------------------------------------------
    def __call__(self, w: np.ndarray) -> np.ndarray:
        self.calls += 1
        cx, cy = self.potential(w)
        return self.adjoint_grad(cx, cy) + laplacian_2d(w, self.cs)

    def rhs(self) -> np.ndarray:
        """b = -Gᵀâ replicated over slices (equals -1 on interior nodes for the default gauge)."""
        b = -curl2d(self.a_hat, self.cs.h) * self.cs.mask
        return np.repeat(b[:, :, None], self.dom.Nz, axis=2)

    @cached_property
    def _slice_lu(self):
        return spla.splu(self.cs.laplacian_matrix.tocsc())

    def preconditioner(self, kind: str | None = None):
        kind = kind or self.cfg.preconditioner
        cs = self.cs
        if kind == "none":
            return None
        if kind == "diagonal":
            d = cs.laplacian_diag[:, :, None] + self._operator_diag_shift()
            dinv = np.where(cs.mask[:, :, None], 1.0 / np.where(d > 0, d, 1.0), 0.0)
            return lambda r: dinv * r
        if kind == "slice_poisson":
            lu = self._slice_lu

            def apply(r):
                return cs.from_vector(lu.solve(np.ascontiguousarray(r[cs.mask])))

            return apply
        raise ValueError(kind)

    def _operator_diag_shift(self) -> float:
        """Approximate diagonal of GᵀΓG: four unit links times the kernel self-term."""
        from .elliptic import cell_average_kernel

        h = self.cs.h
        k0 = cell_average_kernel(self.dom.spacing) * self.dom.cell_volume
        return 4.0 * k0 / h**2

    def assemble_dense(self) -> np.ndarray:
        """Column-by-column dense matrix on the interior unknowns (toy sizes only)."""
        cs, Nz = self.cs, self.dom.Nz
        idx = np.argwhere(np.repeat(cs.mask[:, :, None], Nz, axis=2))
        n = len(idx)
        if n > 4000:
            raise ValueError(f"refusing to assemble a dense {n}x{n} operator")
        A = np.empty((n, n))
        e = np.zeros(self.dom.window_shape)
        for c, (i, j, k) in enumerate(idx):
            e[i, j, k] = 1.0
            A[:, c] = self(e)[tuple(idx.T)]
            e[i, j, k] = 0.0
        return A

    def energy(self, w: np.ndarray) -> float:
        """J(w) via the quadratic form; consistent with the discrete normal equations."""
        V = self.dom.cell_volume
        Aw = self(w)
        b = self.rhs()
        return float(V * (0.5 * np.sum(w * Aw) - np.sum(b * w)) + self.energy_zero())

    def energy_zero(self) -> float:
        """½∫_D|â|² by midpoint quadrature over the slice faces."""
        from .grid import face_mask_2d

        wx, wy = face_mask_2d(self.cs)
        s = np.sum(wx * self.a_hat.x**2 + wy * self.a_hat.y**2)
        return float(0.5 * s * self.dom.cell_volume * self.dom.Nz)


def apply_reduced_operator(w: StreamFamily, dom: DiscretizedDomain,
                           cfg: SolverConfig = SolverConfig()) -> StreamFamily:
    return StreamFamily(ReducedOperator(dom, cfg)(w.w), dom.cs)


def solve_bstar(dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig(), *,
                gauge_override_zero: bool = False, a_hat: VectorField2D | None = None,
                field_margin: int = 4, with_potential: bool = True,
                strict: bool = False) -> BStarSolution:
    """Minimize the reduced energy and build B_*, A_* and the diagnostics.

    ``field_margin`` exterior cells are kept around the cylinder window for the
    reconstructed fields.  A non-converged CG leaves ``solve_report.converged``
    false (and raises if ``strict``).
    """
    op = ReducedOperator(dom, cfg, a_hat=a_hat, gauge_override_zero=gauge_override_zero,
                         field_margin=field_margin)
    b = op.rhs()
    w, rep = cg_solve(op, b, cfg, M=op.preconditioner())
    if not rep.converged:
        msg = f"reduced CG stopped at relative residual {rep.final_residual_rel:.2e}"
        if strict:
            from .elliptic import ConvergenceError

            raise ConvergenceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    w = w * dom.cs.mask[:, :, None]
    fam = StreamFamily(w, dom.cs)
    m = field_margin
    cx, cy = op.potential(w, m)
    B = curl3d(VectorField3D((cx, cy, np.zeros_like(cx)), "face", dom.spacing))
    fw = tuple(slice(s.start - m, s.stop + m) for s in dom.window)
    inner = tuple(slice(m, m + n) for n in dom.window_shape)
    energy = op.energy_zero() - 0.5 * dom.cell_volume * float(np.sum(w * b))
    jx, jy = op.current(w)
    field_energy = dom.cell_volume * float(np.sum(jx * cx[inner]) + np.sum(jy * cy[inner]))
    sol = BStarSolution(
        w_star=fam, B_star=B, A_star=None, energy=energy, energy_zero=op.energy_zero(),
        field_window=fw, inner=inner, solve_report=rep, field_energy=field_energy,
        gauge_zero=gauge_override_zero,
    )
    sol._chi = (cx, cy)  # Coulomb potential of the current, reused by reconstruct_A
    sol._op = op
    if with_potential:
        sol.A_star = reconstruct_A(sol, dom, cfg)
    sol.diagnostics = el_residual(sol, dom)
    sol.diagnostics["solve_report"] = rep.to_dict()
    return sol


def _window_gauge(dom: DiscretizedDomain, fw) -> VectorField3D:
    x, y, z = dom.node_coords
    x, y, z = x[fw[0]], y[fw[1]], z[fw[2]]
    _, yf, _ = staggered_coords(x, y, z, "face", 0)
    xf, _, _ = staggered_coords(x, y, z, "face", 1)
    n = (len(x), len(y), len(z))
    a1 = np.broadcast_to(-0.5 * yf[None, :, None], n).copy()
    a2 = np.broadcast_to(0.5 * xf[:, None, None], n).copy()
    return VectorField3D((a1, a2, np.zeros(n)), "face", dom.spacing)


def reconstruct_A(sol: BStarSolution, dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig(),
                  method: str = "current") -> VectorField3D:
    """Coulomb-gauge potential A_* with ∇×(A_* - a) = B_*.

    ``method="current"`` uses A_* - a = Γ₃*J (exact in the continuum since
    -Δ(A_* - a) = ∇×B_* = J); ``method="field"`` evaluates ∇×(Γ₃*B_*) with
    B_* truncated to the stored window, which is an independent but
    truncation-limited route.
    """
    a = _window_gauge(dom, sol.field_window)
    if sol.gauge_zero:
        a = a * 0.0
    if not np.any(sol.w_star.w):
        return a
    if method == "current":
        chi = getattr(sol, "_chi", None)
        if chi is None:
            m = sol.inner[0].start
            chi = ReducedOperator(dom, cfg).potential(sol.w_star.w, m)
        cx, cy = chi
        return a + VectorField3D((cx, cy, np.zeros_like(cx)), "face", dom.spacing)
    if method == "field":
        conv = FreeSpaceConvolver(dom.spacing, cfg.curl_kernel, cfg.threads)
        pot = VectorField3D(tuple(conv(c) for c in sol.B_star), "edge", dom.spacing)
        return a + curl3d(pot)
    raise ValueError(f"unknown method {method!r}")


def _rel(num, den):
    den = float(den)
    return float(num) / den if den > 0 else float(num)


def el_residual(sol: BStarSolution, dom: DiscretizedDomain, dist: float | None = None) -> dict:
    """Euler–Lagrange and structural diagnostics of a computed B_*.

    * ``el_residual_interior``: ‖-Δ₃B³ + B³ + 1‖₂ over slice nodes at least
      ``dist`` (default 2h) from ∂D, relative to ‖B³ + 1‖₂ there.
    * ``div_B``: h·‖div B‖₂ / ‖B‖₂.
    * ``curl_support_leak``: ‖∇×B‖₂ off the current's support over ‖∇×B‖₂ on it.
    * ``curlB3``: ‖(∇×B)³‖₂ / ‖∇×B‖₂.
    """
    cs = dom.cs
    h = min(dom.spacing)
    dist = 2 * max(cs.h, dom.h3) if dist is None else dist
    B = sol.B_star
    # trust region: two layers inside the stored window (one-sided stencils at its rim)
    core = tuple(slice(2, n - 2) for n in B.shape)
    b3 = B[2]
    lap = laplacian_3d(b3, dom.spacing)
    sel = interior_distance_mask(dom, dist)
    r = (lap + b3 + 1.0)[sol.inner][sel]
    ref = (b3 + 1.0)[sol.inner][sel]
    out = {}
    out["el_residual_interior"] = _rel(np.linalg.norm(r), np.linalg.norm(ref)) if r.size else float("nan")
    out["el_residual_max"] = float(np.abs(r).max()) if r.size else float("nan")
    dv = div3d(B)[core]
    bn = np.sqrt(sum(np.sum(c[core] ** 2) for c in B))
    out["div_B"] = _rel(h * np.linalg.norm(dv), bn)
    cB = curl3d(B)
    supp = _current_support(dom, B.shape, sol.inner)
    on = sum(np.sum((c * s)[core] ** 2) for c, s in zip(cB, supp))
    off = sum(np.sum((c * ~s)[core] ** 2) for c, s in zip(cB, supp))
    tot = sum(np.sum(c[core] ** 2) for c in cB)
    out["curl_support_leak"] = _rel(np.sqrt(off), np.sqrt(on))
    out["curlB3"] = _rel(np.sqrt(np.sum(cB[2][core] ** 2)), np.sqrt(tot))
    b3in = b3[sol.inner][np.repeat(cs.mask[:, :, None], dom.Nz, axis=2)]
    out["B3_min"] = float(b3in.min()) if b3in.size else 0.0
    out["B3_max"] = float(b3in.max()) if b3in.size else 0.0
    return out


def _current_support(dom: DiscretizedDomain, shape, inner):
    """Face masks where a slice current can be nonzero."""
    m = dom.cs.mask
    sx = np.zeros(shape, dtype=bool)
    sy = np.zeros(shape, dtype=bool)
    fx = m | np.roll(m, -1, axis=1)
    fy = m | np.roll(m, -1, axis=0)
    sx[inner] = fx[:, :, None]
    sy[inner] = fy[:, :, None]
    return sx, sy, np.zeros(shape, dtype=bool)


def energy_of(w: StreamFamily, dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig(),
              gauge_override_zero: bool = False) -> float:
    """Reduced energy J(w) of an arbitrary admissible stream family."""
    return ReducedOperator(dom, cfg, gauge_override_zero=gauge_override_zero).energy(w.w)
