"""Linear solvers: CG, planar Dirichlet Poisson, free-space 3-D Poisson, Biot–Savart."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .grid import (
    CrossSection,
    DiscretizedDomain,
    VectorField3D,
    curl3d,
    div3d,
    laplacian_2d,
    MemoryBudgetError,
    staggered_coords,
)

FREESPACE_METHODS = ("kernel_convolution", "padded_dirichlet")
# point: sampled 1/(4π|x|) with cell-averaged centre; integrated: cell averages
# everywhere; lattice: exact fundamental solution of the 7-point Laplacian
KERNELS = ("point", "integrated", "lattice")


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance."""


class IndefiniteOperatorError(ArithmeticError):
    """CG met a non-positive curvature direction or a NaN."""


class SupportError(ValueError):
    """Source field is nonzero where it must vanish."""


@dataclass(frozen=True)
class SolverConfig:
    tol_rel: float = 1e-8
    max_iter: int | None = None
    preconditioner: str = "diagonal"
    freespace_method: str = "kernel_convolution"
    kernel: str = "point"
    curl_kernel: str = "lattice"
    sor_omega: float = 1.7
    tol_vi: float = 1e-9
    vi_max_iter: int = 200_000
    threads: int = 1

    def __post_init__(self):
        if not (0 < self.tol_rel <= 1e-2):
            raise ValueError(f"tol_rel must lie in (0, 1e-2], got {self.tol_rel}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "diagonal", "slice_poisson"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.freespace_method not in FREESPACE_METHODS:
            raise ValueError(f"unknown freespace_method {self.freespace_method!r}")
        for k in (self.kernel, self.curl_kernel):
            if k not in KERNELS:
                raise ValueError(f"unknown kernel {k!r}")
        if not (0 < self.sor_omega < 2):
            raise ValueError("sor_omega must lie in (0, 2)")

    def iteration_cap(self, n_unknowns: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(500, int(10 * math.sqrt(n_unknowns)))


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual_rel: float
    converged: bool

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual_rel": self.final_residual_rel,
            "converged": self.converged,
        }


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------


def _dot(a, b, batch):
    if batch:
        return np.einsum("ik,ik->k", a.reshape(-1, a.shape[-1]), b.reshape(-1, b.shape[-1]))
    return float(np.vdot(a, b).real)


def cg_solve(apply_A, b, cfg: SolverConfig = SolverConfig(), M=None, x0=None, batch=False):
    """Preconditioned conjugate gradients for an SPD operator.

    ``apply_A`` and ``M`` (approximate inverse) map arrays shaped like ``b`` to
    the same shape.  With ``batch=True`` the last axis indexes independent
    systems that share the operator; step lengths are per system and the
    report carries the worst residual.  Returns ``(x, SolveReport)``; a failed
    solve returns the best iterate with ``converged=False``.
    """
    b = np.asarray(b, dtype=float)
    n_unknowns = b.size // (b.shape[-1] if batch else 1)
    cap = cfg.iteration_cap(n_unknowns)
    bnorm = np.sqrt(_dot(b, b, batch))
    if np.all(bnorm == 0):
        return np.zeros_like(b), SolveReport(0, 0.0, True)
    safe_bnorm = np.where(bnorm == 0, 1.0, bnorm)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = M(r) if M is not None else r
    p = z.copy()
    rz = _dot(r, z, batch)
    best_x, best_res = x.copy(), np.max(np.sqrt(_dot(r, r, batch)) / safe_bnorm)
    it = 0
    res = best_res
    while it < cap and res > cfg.tol_rel:
        Ap = apply_A(p)
        pAp = _dot(p, Ap, batch)
        if np.any(~np.isfinite(pAp)):
            raise IndefiniteOperatorError("NaN encountered in CG")
        active = np.asarray(np.sqrt(_dot(r, r, batch)) / safe_bnorm > cfg.tol_rel * 1e-3)
        if np.any((pAp <= 0) & active):
            raise IndefiniteOperatorError(f"non-positive curvature p·Ap={np.min(pAp):.3e}")
        alpha = np.where(pAp > 0, rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        x = x + alpha * p
        r = r - alpha * Ap
        it += 1
        res = float(np.max(np.sqrt(_dot(r, r, batch)) / safe_bnorm))
        if not np.isfinite(res):
            raise IndefiniteOperatorError("NaN encountered in CG")
        if res < best_res:
            best_x, best_res = x, res
        z = M(r) if M is not None else r
        rz_new = _dot(r, z, batch)
        beta = np.where(rz != 0, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
    # report the true residual of the returned iterate
    x = best_x
    rt = b - apply_A(x)
    final = float(np.max(np.sqrt(_dot(rt, rt, batch)) / safe_bnorm))
    return x, SolveReport(it, final, final <= cfg.tol_rel)


# ---------------------------------------------------------------------------
# planar Dirichlet Poisson
# ---------------------------------------------------------------------------


def poisson_dirichlet_2d(f: np.ndarray, cs: CrossSection, cfg: SolverConfig = SolverConfig(),
                         strict: bool = True):
    """Solve -Δu = f in Ω, u = 0 on ∂Ω for one slice or a stack ``(nx, ny, m)``.

    Returns ``(u, SolveReport)``; ``u`` vanishes off the mask.  Raises
    ConvergenceError when ``strict`` and CG stalls.
    """
    f = np.asarray(f, dtype=float)
    stacked = f.ndim == 3
    m = cs.mask
    rhs = f[m]  # (n,) or (n, k)
    A = cs.laplacian_matrix
    dinv = 1.0 / cs.laplacian_diag[m]
    if stacked:
        dinv = dinv[:, None]
    M = (lambda r: dinv * r) if cfg.preconditioner != "none" else None
    u, rep = cg_solve(lambda v: A @ v, rhs, cfg, M=M, batch=stacked)
    if strict and not rep.converged:
        raise ConvergenceError(f"Poisson CG did not converge: {rep}")
    return cs.from_vector(u), rep


def dirichlet_residual_2d(u: np.ndarray, f: np.ndarray, cs: CrossSection) -> float:
    """max |-Δ_h u - f| on interior nodes, relative to max |f|."""
    r = (laplacian_2d(u, cs) - f)[cs.mask]
    scale = max(np.abs(f[cs.mask]).max(), 1e-300)
    return float(np.abs(r).max() / scale)


# ---------------------------------------------------------------------------
# free-space kernel
# ---------------------------------------------------------------------------


def _F(x, y, z):
    """Antiderivative of 1/r in all three variables (zero-safe)."""
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(y * z != 0, y * z * np.log(x + r), 0.0)
        t2 = np.where(x * z != 0, x * z * np.log(y + r), 0.0)
        t3 = np.where(x * y != 0, x * y * np.log(z + r), 0.0)
        a1 = np.where(x != 0, 0.5 * x * x * np.arctan(y * z / (x * r)), 0.0)
        a2 = np.where(y != 0, 0.5 * y * y * np.arctan(x * z / (y * r)), 0.0)
        a3 = np.where(z != 0, 0.5 * z * z * np.arctan(x * y / (z * r)), 0.0)
    return t1 + t2 + t3 - a1 - a2 - a3


def box_integral_inverse_distance(x1, x2, y1, y2, z1, z2):
    """∫∫∫ 1/|x| over the box [x1,x2]×[y1,y2]×[z1,z2] in closed form."""
    total = 0.0
    for xs, sx in ((x2, 1), (x1, -1)):
        for ys, sy in ((y2, 1), (y1, -1)):
            for zs, sz in ((z2, 1), (z1, -1)):
                total = total + sx * sy * sz * _F(xs, ys, zs)
    return total


def cell_average_kernel(spacing) -> float:
    """Mean of 1/(4π|x|) over the cell centred at the origin."""
    a, b, c = (0.5 * s for s in spacing)
    octant = box_integral_inverse_distance(0.0, a, 0.0, b, 0.0, c)
    return 8.0 * octant / (8 * a * b * c) / (4 * math.pi)


_LATTICE_CACHE: dict = {}


def lattice_green_octant(reach, spacing):
    """Fundamental solution of the 7-point Laplacian for offsets ``0..reach``.

    Solved once on a box of half-width ``reach + 1`` with the continuum kernel
    as Dirichlet data.  The boundary mismatch only adds a discrete-harmonic
    term, so ``-Δ_h G = δ/V`` holds exactly at every returned offset.
    """
    key = (tuple(int(r) for r in reach), tuple(float(h) for h in spacing))
    if key in _LATTICE_CACHE:
        return _LATTICE_CACHE[key]
    half = []
    for r in key[0]:
        n = 2 * (r + 1) + 1  # nodes incl. both boundary layers
        m = scipy.fft.next_fast_len(n - 1, real=True) - 1  # DST-I wants m+1 smooth
        half.append(max(r + 1, (m + 1) // 2))
    coords = tuple(np.arange(-c, c + 1) * h for c, h in zip(half, spacing))
    V = spacing[0] * spacing[1] * spacing[2]
    g = np.zeros(tuple(2 * c + 1 for c in half))
    g[tuple(half)] = 1.0 / V
    X = coords[0][:, None, None]
    Y = coords[1][None, :, None]
    Z = coords[2][None, None, :]
    with np.errstate(divide="ignore"):
        ub = 1.0 / (4 * math.pi * np.sqrt(X * X + Y * Y + Z * Z))
    ub[tuple(half)] = 0.0
    G = padded_dirichlet_solve(g, coords, spacing, boundary_values=ub)
    oct_ = G[half[0]:half[0] + key[0][0] + 1, half[1]:half[1] + key[0][1] + 1,
             half[2]:half[2] + key[0][2] + 1].copy()
    if len(_LATTICE_CACHE) > 4:
        _LATTICE_CACHE.clear()
    _LATTICE_CACHE[key] = oct_
    return oct_


def _kernel_block(offsets, spacing, kind, octant=None):
    """Kernel samples on the outer product of integer offset vectors."""
    h = spacing
    ox, oy, oz = offsets
    if kind == "lattice":
        ia, ib, ic = (np.abs(o).astype(int) for o in offsets)
        G = octant if octant is not None else lattice_green_octant((ia.max(), ib.max(), ic.max()), h)
        return G[np.ix_(ia, ib, ic)]
    X = (ox * h[0])[:, None, None]
    Y = (oy * h[1])[None, :, None]
    Z = (oz * h[2])[None, None, :]
    if kind == "point":
        r = np.sqrt(X * X + Y * Y + Z * Z)
        with np.errstate(divide="ignore"):
            k = 1.0 / (4 * math.pi * r)
        k[r == 0] = cell_average_kernel(h)
        return k
    # cell-averaged everywhere: difference the antiderivative on the corner lattice
    cx = np.concatenate([ox - 0.5, ox[-1:] + 0.5]) * h[0]
    cy = np.concatenate([oy - 0.5, oy[-1:] + 0.5]) * h[1]
    cz = np.concatenate([oz - 0.5, oz[-1:] + 0.5]) * h[2]
    F = _F(cx[:, None, None], cy[None, :, None], cz[None, None, :])
    F = np.diff(np.diff(np.diff(F, axis=0), axis=1), axis=2)
    k = F / (h[0] * h[1] * h[2]) / (4 * math.pi)
    zero = (ox == 0)[:, None, None] & (oy == 0)[None, :, None] & (oz == 0)[None, None, :]
    k[zero] = cell_average_kernel(h)
    return k


class FreeSpaceConvolver:
    """Aperiodic discrete convolution with 1/(4π|x|) via zero-padded FFTs.

    ``u[τ] = V Σ_σ K(shift + τ - σ) g[σ]`` for a source window of shape ``s``
    and a target window of shape ``t`` whose origin sits ``shift`` lattice
    steps from the source origin.  Transform sizes satisfy ``N >= s + t - 1``
    so the circular product equals the linear convolution exactly.
    """

    def __init__(self, spacing, kind: str = "point", workers: int = 1, reach=None):
        self.spacing = tuple(float(s) for s in spacing)
        self.kind = kind
        self.workers = workers
        self._cache = {}
        # one lattice octant serves every plan, so all windows share a kernel
        self._reach = tuple(int(r) for r in reach) if reach is not None else None
        self._octant = None

    def _lattice(self, need):
        if self._octant is None or any(n > o - 1 for n, o in zip(need, self._octant.shape)):
            base = self._reach or need
            self._reach = tuple(max(a, b) for a, b in zip(base, need))
            self._octant = lattice_green_octant(self._reach, self.spacing)
            self._cache.clear()
        return self._octant

    def _plan(self, s, t, shift):
        key = (tuple(s), tuple(t), tuple(shift))
        if key not in self._cache:
            if len(self._cache) > 4:
                self._cache.clear()
            N = tuple(scipy.fft.next_fast_len(a + b - 1, real=True) for a, b in zip(s, t))
            # offsets beyond s+t-1 never reach the extracted window; leave them zero
            offsets = []
            for ax in range(3):
                d_min = shift[ax] - (s[ax] - 1)
                offsets.append((d_min + np.arange(s[ax] + t[ax] - 1)).astype(float))
            octant = None
            if self.kind == "lattice":
                octant = self._lattice(tuple(int(np.abs(o).max()) for o in offsets))
            k = np.zeros(N)
            k[tuple(slice(0, len(o)) for o in offsets)] = _kernel_block(
                offsets, self.spacing, self.kind, octant)
            khat = scipy.fft.rfftn(k, workers=self.workers)
            self._cache[key] = (N, khat)
        return self._cache[key]

    def __call__(self, g, target_shape=None, shift=(0, 0, 0)):
        g = np.asarray(g, dtype=float)
        s = g.shape
        t = tuple(target_shape) if target_shape is not None else s
        N, khat = self._plan(s, t, shift)
        V = self.spacing[0] * self.spacing[1] * self.spacing[2]
        ghat = scipy.fft.rfftn(g, s=N, workers=self.workers)
        u = scipy.fft.irfftn(ghat * khat, s=N, workers=self.workers)
        sl = tuple(slice(a - 1, a - 1 + b) for a, b in zip(s, t))
        return V * u[sl]


def convolve_free_space(g, spacing, kind="point", target_shape=None, shift=(0, 0, 0)):
    """One-shot :class:`FreeSpaceConvolver` call."""
    return FreeSpaceConvolver(spacing, kind)(g, target_shape, shift)


# ---------------------------------------------------------------------------
# padded Dirichlet box
# ---------------------------------------------------------------------------


def multipole_potential(g, coords, spacing, points):
    """Monopole + dipole + quadrupole far field of ``g`` evaluated at ``points``.

    ``coords`` are the 1-D lattice coordinates of ``g``; ``points`` is an
    (m, 3) array.  Returns the potential of -Δu = g in free space.
    """
    V = spacing[0] * spacing[1] * spacing[2]
    nz = np.nonzero(g)
    if len(nz[0]) == 0:
        return np.zeros(len(points))
    w = g[nz] * V
    pos = np.stack([coords[a][nz[a]] for a in range(3)], axis=1)
    aw = np.abs(w)
    centre = (aw @ pos) / aw.sum()
    y = pos - centre
    q = w.sum()
    p = w @ y
    Q = np.einsum("n,ni,nj->ij", w, y, y) * 3 - np.eye(3) * np.sum(w * np.sum(y * y, 1))
    X = points - centre
    r = np.sqrt(np.sum(X * X, 1))
    u = q / r + (X @ p) / r**3 + 0.5 * np.einsum("ni,ij,nj->n", X, Q, X) / r**5
    return u / (4 * math.pi)


def padded_dirichlet_solve(g, coords, spacing, boundary_values=None,
                           memory_budget_mb: float = 4096.0):
    """7-point Poisson solve on a box with Dirichlet data on the outer node layer.

    Boundary data defaults to the multipole far field of ``g``.  The interior
    system is diagonalized exactly by the type-I sine transform.
    """
    g = np.asarray(g, dtype=float)
    n = g.shape
    est_mb = 6 * np.prod(n) * 8 / 2**20  # rhs, transform, eigenvalues, output
    if est_mb > memory_budget_mb:
        raise MemoryBudgetError(
            f"padded Dirichlet solve needs ~{est_mb:.0f} MB, budget {memory_budget_mb:.0f} MB"
        )
    if boundary_values is None:
        shell = np.ones(n, dtype=bool)
        shell[1:-1, 1:-1, 1:-1] = False
        idx = np.nonzero(shell)
        pts = np.stack([coords[a][idx[a]] for a in range(3)], axis=1)
        ub = np.zeros(n)
        ub[idx] = multipole_potential(g, coords, spacing, pts)
    else:
        ub = np.asarray(boundary_values, dtype=float)
    rhs = g[1:-1, 1:-1, 1:-1].copy()
    # move known boundary neighbours to the right-hand side
    for ax, h in enumerate(spacing):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        edge_lo = np.zeros_like(rhs)
        edge_hi = np.zeros_like(rhs)
        sel_lo = [slice(None)] * 3
        sel_hi = [slice(None)] * 3
        sel_lo[ax] = slice(0, 1)
        sel_hi[ax] = slice(-1, None)
        edge_lo[tuple(sel_lo)] = ub[tuple(lo)][tuple(sel_lo)]
        edge_hi[tuple(sel_hi)] = ub[tuple(hi)][tuple(sel_hi)]
        rhs += (edge_lo + edge_hi) / h**2
    m = [s - 2 for s in n]
    lam = 0.0
    for ax, h in enumerate(spacing):
        k = np.arange(1, m[ax] + 1)
        l1 = (2 - 2 * np.cos(np.pi * k / (m[ax] + 1))) / h**2
        shape = [1, 1, 1]
        shape[ax] = m[ax]
        lam = lam + l1.reshape(shape)
    uhat = scipy.fft.dstn(rhs, type=1) / lam
    u = ub.copy()
    u[1:-1, 1:-1, 1:-1] = scipy.fft.idstn(uhat, type=1)
    return u


# ---------------------------------------------------------------------------
# domain-level wrappers
# ---------------------------------------------------------------------------


def _check_support(g, dom: DiscretizedDomain, name="g"):
    inside = np.zeros(dom.box_resolution, dtype=bool)
    inside[dom.window] = True
    if np.any(g[~inside] != 0):
        raise SupportError(f"{name} is nonzero outside the cylinder window")


def freespace_poisson_3d(g, dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig(),
                         location: str = "node", component: int = 0, kernel: str | None = None):
    """Γ₃ * g on the whole box for ``g`` supported in the cylinder window.

    ``location``/``component`` place the lattice of ``g`` (needed for the
    far-field boundary data of the padded Dirichlet path).  ``kernel``
    overrides ``cfg.kernel`` on the convolution path.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != dom.box_resolution:
        raise ValueError(f"field shape {g.shape} does not match box {dom.box_resolution}")
    _check_support(g, dom)
    if not np.any(g):
        return np.zeros_like(g)
    if cfg.freespace_method == "kernel_convolution":
        conv = FreeSpaceConvolver(dom.spacing, kernel or cfg.kernel, cfg.threads)
        src = g[dom.window]
        shift = tuple(-s.start for s in dom.window)
        return conv(src, dom.box_resolution, shift)
    coords = staggered_coords(*dom.node_coords, location, component)
    return padded_dirichlet_solve(g, coords, dom.spacing)


def biot_savart(g: VectorField3D, dom: DiscretizedDomain, cfg: SolverConfig = SolverConfig(),
                div_warn: float = 1e-6):
    """B = ∇×(Γ₃ * g) for a face current ``g`` on the box; B lives on edges.

    Uses ``cfg.curl_kernel``: with the lattice kernel the discrete curl of B
    reproduces ``g`` inside the window up to round-off.
    """
    if g.location != "face":
        raise ValueError("currents live on faces")
    div = div3d(g)
    scale = max(g.norm2(), 1e-300)
    h = min(dom.spacing)
    if np.sqrt(np.sum(div * div)) * h / scale > div_warn:
        warnings.warn("current is not discretely divergence-free", RuntimeWarning, stacklevel=2)
    chi = tuple(
        freespace_poisson_3d(c, dom, cfg, "face", ax, kernel=cfg.curl_kernel) if np.any(c) else np.zeros_like(c)
        for ax, c in enumerate(g.components)
    )
    return curl3d(VectorField3D(chi, "face", dom.spacing))
