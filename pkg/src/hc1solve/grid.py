"""Discretization primitives.

Planar cross-sections live on a cell-centred node lattice ``x_k = c + (k + 1/2) h``.
Three-dimensional fields use a Yee/MAC arrangement on the box lattice.  Every
staggered array has the same shape as the node array; index ``(i, j, k)`` of a
component refers to the location

=========  =========================
node       (i,     j,     k)
x-face     (i,     j+1/2, k+1/2)
y-face     (i+1/2, j,     k+1/2)
z-face     (i+1/2, j+1/2, k)
x-edge     (i+1/2, j,     k)
y-edge     (i,     j+1/2, k)
z-edge     (i,     j,     k+1/2)
cell       (i+1/2, j+1/2, k+1/2)
=========  =========================

Values beyond the array are treated as zero, so forward and backward
differences are exact negative transposes of each other and ``div∘curl``
vanishes identically.  A slice of the cylinder at height ``(k + 1/2) h3`` is the
z-edge level ``k``: planar nodes sit on z-edges, in-plane faces of the slice on
x-/y-faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.ndimage
import scipy.sparse as sp

# Smallest admissible ghost-fluid boundary fraction; nodes closer to the
# boundary than this (in units of h) get the clamped value.
THETA_MIN = 1e-3

# direction order used by CrossSection.theta: +x, -x, +y, -y
DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class GridError(ValueError):
    """Invalid geometry or grid request."""


class MemoryBudgetError(GridError):
    """Requested resolution would exceed the configured memory budget."""


# ---------------------------------------------------------------------------
# planar shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GridError(f"disk radius must be positive, got {self.radius}")

    @property
    def bbox(self):
        r = self.radius
        return (-r, r, -r, r)

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def perimeter(self) -> float:
        return 2 * math.pi * self.radius

    @property
    def min_width(self) -> float:
        return 2 * self.radius

    def contains(self, x, y):
        return x * x + y * y < self.radius**2

    def boundary_distance(self, x, y):
        """Signed distance to the boundary, positive inside."""
        return self.radius - np.hypot(x, y)

    def exit_fraction(self, x, y, dx, dy):
        # |p + t d| = R, larger root
        a = dx * dx + dy * dy
        b = 2 * (x * dx + y * dy)
        c = x * x + y * y - self.radius**2
        return (-b + np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))) / (2 * a)


@dataclass(frozen=True)
class Rectangle:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise GridError(f"rectangle sides must be positive, got {self.width}x{self.height}")

    @property
    def bbox(self):
        return (-self.width / 2, self.width / 2, -self.height / 2, self.height / 2)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def perimeter(self) -> float:
        return 2 * (self.width + self.height)

    @property
    def min_width(self) -> float:
        return min(self.width, self.height)

    def contains(self, x, y):
        return (np.abs(x) < self.width / 2) & (np.abs(y) < self.height / 2)

    def boundary_distance(self, x, y):
        return np.minimum(self.width / 2 - np.abs(x), self.height / 2 - np.abs(y))

    def exit_fraction(self, x, y, dx, dy):
        t = np.full(np.broadcast(x, y, dx, dy).shape, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            for p, d, half in ((x, dx, self.width / 2), (y, dy, self.height / 2)):
                tp = np.where(d > 0, (half - p) / d, np.where(d < 0, (-half - p) / d, np.inf))
                t = np.minimum(t, tp)
        return t


@dataclass(frozen=True)
class Polygon:
    vertices: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GridError("polygon needs at least three (x, y) vertices")
        if abs(self._signed_area(v)) <= 0:
            raise GridError("degenerate polygon (zero area)")
        object.__setattr__(self, "vertices", tuple(map(tuple, v)))

    @staticmethod
    def _signed_area(v):
        x, y = v[:, 0], v[:, 1]
        return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)

    @property
    def _v(self):
        return np.asarray(self.vertices)

    @property
    def bbox(self):
        v = self._v
        return (v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max())

    @property
    def area(self) -> float:
        return abs(self._signed_area(self._v))

    @property
    def perimeter(self) -> float:
        v = self._v
        return float(np.sum(np.hypot(*(np.roll(v, -1, 0) - v).T)))

    @property
    def min_width(self) -> float:
        x0, x1, y0, y1 = self.bbox
        return min(x1 - x0, y1 - y0)

    def contains(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        inside = np.zeros(x.shape, bool)
        v = self._v
        for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, 0)):
            cond = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= cond & (x < xc)
        return inside

    def boundary_distance(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        d = np.full(x.shape, np.inf)
        v = self._v
        for p, q in zip(v, np.roll(v, -1, 0)):
            e = q - p
            t = np.clip(((x - p[0]) * e[0] + (y - p[1]) * e[1]) / (e @ e), 0, 1)
            d = np.minimum(d, np.hypot(x - p[0] - t * e[0], y - p[1] - t * e[1]))
        return np.where(self.contains(x, y), d, -d)

    def exit_fraction(self, x, y, dx, dy):
        x, y, dx, dy = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, y, dx, dy)))
        t = np.full(x.shape, np.inf)
        v = self._v
        for p, q in zip(v, np.roll(v, -1, 0)):
            e = q - p
            den = dx * e[1] - dy * e[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = ((p[0] - x) * e[1] - (p[1] - y) * e[0]) / den
                u = ((p[0] - x) * dy - (p[1] - y) * dx) / den
            hit = (den != 0) & (s > 0) & (u >= 0) & (u <= 1)
            t = np.where(hit, np.minimum(t, s), t)
        return t


def make_shape(spec) -> Disk | Rectangle | Polygon:
    """Build a shape from ``{"shape": "disk", "radius": 1}``-style mappings.

    ``R`` is accepted as an alias of ``radius``; unknown keys are rejected.
    """
    if isinstance(spec, (Disk, Rectangle, Polygon)):
        return spec
    spec = dict(spec)
    kind = spec.pop("shape", "disk")
    allowed = {"disk": {"radius", "R"}, "rectangle": {"width", "height"}, "polygon": {"vertices"}}
    if kind not in allowed:
        raise GridError(f"unknown shape {kind!r}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise GridError(f"unexpected keys for {kind}: {sorted(extra)}")
    try:
        if kind == "disk":
            return Disk(float(spec.get("radius", spec.get("R", 1.0))))
        if kind == "rectangle":
            return Rectangle(float(spec["width"]), float(spec["height"]))
        return Polygon(tuple(map(tuple, spec["vertices"])))
    except KeyError as e:
        raise GridError(f"{kind} needs key {e.args[0]!r}") from None


def shape_diameter(shape) -> float:
    x0, x1, y0, y1 = shape.bbox
    if isinstance(shape, Disk):
        return 2 * shape.radius
    if isinstance(shape, Polygon):
        v = shape._v
        return float(np.max(np.hypot(*(v[:, None, :] - v[None, :, :]).transpose(2, 0, 1))))
    return math.hypot(x1 - x0, y1 - y0)


# ---------------------------------------------------------------------------
# cross-section
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CrossSection:
    """Masked planar grid for the cross-section.

    ``theta[d]`` holds, for interior nodes whose neighbour in direction
    ``DIRECTIONS[d]`` lies outside, the fraction of the link inside the shape
    (1 elsewhere).  The Dirichlet Laplacian uses it through the symmetric
    ghost-fluid diagonal ``1/theta``.
    """

    shape: Disk | Rectangle | Polygon
    h: float
    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    theta: np.ndarray

    @property
    def n(self):
        return self.mask.shape

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def area(self) -> float:
        return self.n_interior * self.cell_area

    @cached_property
    def coords(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Exterior nodes with an interior 4-neighbour, as an (m, 2) index array."""
        m = self.mask
        near = np.zeros_like(m)
        near[1:] |= m[:-1]
        near[:-1] |= m[1:]
        near[:, 1:] |= m[:, :-1]
        near[:, :-1] |= m[:, 1:]
        return np.argwhere(near & ~m)

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.mask.ravel())

    @cached_property
    def laplacian_diag(self) -> np.ndarray:
        """Diagonal of -Δ_h (ghost-fluid corrected), zero off the mask."""
        d = np.where(self.mask, np.sum(1.0 / self.theta, axis=0), 0.0)
        return d / self.h**2

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        """Sparse -Δ_h on interior unknowns (C order of ``mask``)."""
        m = self.mask
        idx = -np.ones(m.shape, dtype=np.int64)
        idx[m] = np.arange(self.n_interior)
        rows, cols = [np.arange(self.n_interior)], [np.arange(self.n_interior)]
        vals = [self.laplacian_diag[m]]
        for di, dj in DIRECTIONS:
            nb = _shift(m, di, dj)
            nidx = _shift(idx, di, dj, fill=-1)
            link = m & nb
            rows.append(idx[link])
            cols.append(nidx[link])
            vals.append(np.full(link.sum(), -1.0 / self.h**2))
        n = self.n_interior
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def to_vector(self, u: np.ndarray) -> np.ndarray:
        """Interior values of a (nx, ny, ...) array as (n_interior, ...)."""
        return u[self.mask]

    def from_vector(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.mask.shape + v.shape[1:], dtype=v.dtype)
        out[self.mask] = v
        return out

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Zero a (nx, ny, ...) array off the interior mask."""
        return u * self.mask.reshape(self.mask.shape + (1,) * (u.ndim - 2))


def _shift(a, di, dj, fill=False):
    """out[i, j] = a[i + di, j + dj] (``fill`` outside)."""
    out = np.full_like(a, fill)
    nx, ny = a.shape[:2]
    src_i = slice(max(di, 0), nx + min(di, 0))
    dst_i = slice(max(-di, 0), nx + min(-di, 0))
    src_j = slice(max(dj, 0), ny + min(dj, 0))
    dst_j = slice(max(-dj, 0), ny + min(-dj, 0))
    out[dst_i, dst_j] = a[src_i, src_j]
    return out


def _is_simply_connected(mask: np.ndarray) -> bool:
    four = scipy.ndimage.generate_binary_structure(2, 1)
    _, n_in = scipy.ndimage.label(mask, structure=four)
    # holes: exterior components not touching the frame
    ext, n_out = scipy.ndimage.label(~mask, structure=scipy.ndimage.generate_binary_structure(2, 2))
    frame = np.unique(np.concatenate([ext[0], ext[-1], ext[:, 0], ext[:, -1]]))
    return n_in == 1 and set(range(1, n_out + 1)) <= set(frame.tolist())


def build_cross_section(shape, h: float, margin: int = 2, align: str = "cell") -> CrossSection:
    """Rasterize ``shape`` on a lattice of spacing ``h``.

    ``align="cell"`` puts nodes at ``c + (k + 1/2) h`` about the bounding-box
    centre ``c`` (even node counts for symmetric shapes); ``align="node"`` puts
    a node at ``c`` (odd counts).  ``margin`` exterior node rings surround the
    shape's bounding box.
    """
    if align not in ("cell", "node"):
        raise GridError(f"align must be 'cell' or 'node', got {align!r}")
    shape = make_shape(shape)
    if not h > 0:
        raise GridError(f"spacing must be positive, got {h}")
    if shape.min_width / h < 4:
        raise GridError(
            f"h={h} too coarse: fewer than 4 nodes across the minimum width {shape.min_width}"
        )
    x0, x1, y0, y1 = shape.bbox
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    if align == "cell":
        nxh = int(math.ceil(0.5 * (x1 - x0) / h - 0.5 - 1e-12)) + 1 + margin
        nyh = int(math.ceil(0.5 * (y1 - y0) / h - 0.5 - 1e-12)) + 1 + margin
        x = cx + (np.arange(-nxh, nxh) + 0.5) * h
        y = cy + (np.arange(-nyh, nyh) + 0.5) * h
    else:
        nxh = int(math.ceil(0.5 * (x1 - x0) / h - 1e-12)) + margin
        nyh = int(math.ceil(0.5 * (y1 - y0) / h - 1e-12)) + margin
        x = cx + np.arange(-nxh, nxh + 1) * h
        y = cy + np.arange(-nyh, nyh + 1) * h
    X, Y = np.meshgrid(x, y, indexing="ij")
    mask = np.asarray(shape.contains(X, Y), dtype=bool)
    if mask.sum() == 0:
        raise GridError("no interior nodes")
    if not _is_simply_connected(mask):
        raise GridError("rasterized cross-section is not simply connected")

    theta = np.ones((4,) + mask.shape)
    for d, (di, dj) in enumerate(DIRECTIONS):
        out = mask & ~_shift(mask, di, dj)
        t = shape.exit_fraction(X[out], Y[out], di * h, dj * h)
        theta[d][out] = np.clip(t, THETA_MIN, 1.0)
    return CrossSection(shape=shape, h=float(h), x=x, y=y, mask=mask, theta=theta)


# ---------------------------------------------------------------------------
# planar operators (act on axes 0, 1; trailing axes are carried along)
# ---------------------------------------------------------------------------


def d_fwd(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(f[i+1] - f[i]) / h with f = 0 beyond the array."""
    out = -f.copy()
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    src[axis] = slice(1, None)
    dst[axis] = slice(None, -1)
    out[tuple(dst)] += f[tuple(src)]
    return out / h


def d_bwd(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(f[i] - f[i-1]) / h with f = 0 beyond the array."""
    out = f.copy()
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    src[axis] = slice(None, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] -= f[tuple(src)]
    return out / h


@dataclass
class VectorField2D:
    """In-plane vector field: ``x`` on x-faces (i, j+1/2), ``y`` on y-faces (i+1/2, j)."""

    x: np.ndarray
    y: np.ndarray

    def __add__(self, other):
        return VectorField2D(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return VectorField2D(self.x - other.x, self.y - other.y)

    def __mul__(self, c):
        return VectorField2D(self.x * c, self.y * c)

    __rmul__ = __mul__


def _check_dirichlet(w, cs):
    outside = np.abs(w[~cs.mask])
    if outside.size and outside.max() > 0:
        raise ValueError("stream function must vanish on and outside the boundary nodes")


def perp_grad_2d(w: np.ndarray, cs: CrossSection, cut: bool = False, check: bool = True):
    """Discrete rotated gradient (∂₂w, -∂₁w) on the faces of the slice lattice.

    With ``cut=True`` links that leave the shape use the ghost-fluid value
    ``w/(theta h)`` so that ``curl2d`` of the result is the corrected Laplacian.
    """
    if check:
        _check_dirichlet(w, cs)
    h = cs.h
    vx = d_fwd(w, 1, h)
    vy = -d_fwd(w, 0, h)
    if cut:
        m = cs.mask
        ext = m.ndim
        def b(a):
            return a.reshape(a.shape + (1,) * (w.ndim - ext))
        # x-face (i, j+1/2): link (i,j) -> (i,j+1)
        up = m & ~_shift(m, 0, 1)          # interior below, exterior above
        dn = ~m & _shift(m, 0, 1)          # exterior below, interior above
        t_up = cs.theta[2]
        t_dn = _shift(cs.theta[3], 0, 1, fill=1.0)
        vx = np.where(b(up), -w / (b(t_up) * h), vx)
        wn = _shift_arr(w, 0, 1)
        vx = np.where(b(dn), wn / (b(t_dn) * h), vx)
        # y-face (i+1/2, j): link (i,j) -> (i+1,j), value -(w[i+1]-w[i])/h
        rt = m & ~_shift(m, 1, 0)
        lt = ~m & _shift(m, 1, 0)
        t_rt = cs.theta[0]
        t_lt = _shift(cs.theta[1], 1, 0, fill=1.0)
        vy = np.where(b(rt), w / (b(t_rt) * h), vy)
        we = _shift_arr(w, 1, 0)
        vy = np.where(b(lt), -we / (b(t_lt) * h), vy)
    return VectorField2D(vx, vy)


def _shift_arr(a, di, dj):
    out = np.zeros_like(a)
    nx, ny = a.shape[:2]
    out[max(-di, 0): nx + min(-di, 0), max(-dj, 0): ny + min(-dj, 0)] = a[
        max(di, 0): nx + min(di, 0), max(dj, 0): ny + min(dj, 0)
    ]
    return out


def curl2d(v: VectorField2D, h: float) -> np.ndarray:
    """Scalar curl ∂₁v² - ∂₂v¹ at the nodes."""
    return d_bwd(v.y, 0, h) - d_bwd(v.x, 1, h)


def laplacian_2d(u: np.ndarray, cs: CrossSection, ghost: bool = True) -> np.ndarray:
    """-Δ_h u on interior nodes (zero elsewhere); ``u`` is read on the mask only.

    ``ghost=False`` gives the plain 5-point operator with u = 0 off the mask.
    """
    m = cs.mask
    mb = m.reshape(m.shape + (1,) * (u.ndim - 2))
    um = u * mb
    h2 = cs.h**2
    nbr = (
        _shift_arr(um, 1, 0) + _shift_arr(um, -1, 0) + _shift_arr(um, 0, 1) + _shift_arr(um, 0, -1)
    )
    if ghost:
        diag = cs.laplacian_diag.reshape(mb.shape) * h2
    else:
        diag = 4.0
    return (diag * um - nbr) * mb / h2


# ---------------------------------------------------------------------------
# cylinder in a box
# ---------------------------------------------------------------------------


def fft_friendly(n: int) -> int:
    """Smallest 5-smooth integer >= n."""
    return int(scipy.fft.next_fast_len(int(n), real=True))


@dataclass(frozen=True, eq=False)
class DiscretizedDomain:
    """Cylinder Ω×(0,L) inside a padded box.

    The cross-section grid occupies the in-plane index window ``[i0, i0+nx)``
    × ``[j0, j0+ny)`` of the box; slice ``s`` of the cylinder is z-edge level
    ``k0 + s`` and has centre height ``(s + 1/2) h3``.
    """

    cs: CrossSection
    L: float
    Nz: int
    pad_factor: float
    box_resolution: tuple
    offset: tuple  # (i0, j0, k0)

    @property
    def h3(self) -> float:
        return self.L / self.Nz

    @property
    def spacing(self):
        return (self.cs.h, self.cs.h, self.h3)

    @property
    def cell_volume(self) -> float:
        return self.cs.h**2 * self.h3

    @property
    def slice_centers(self) -> np.ndarray:
        return (np.arange(self.Nz) + 0.5) * self.h3

    @property
    def window_shape(self):
        return self.cs.n + (self.Nz,)

    @property
    def window(self):
        i0, j0, k0 = self.offset
        nx, ny = self.cs.n
        return (slice(i0, i0 + nx), slice(j0, j0 + ny), slice(k0, k0 + self.Nz))

    @property
    def node_coords(self):
        """1-D coordinates of the box nodes (primal lattice)."""
        h, h3 = self.cs.h, self.h3
        i0, j0, k0 = self.offset
        n1, n2, n3 = self.box_resolution
        x = self.cs.x[0] + (np.arange(n1) - i0) * h
        y = self.cs.y[0] + (np.arange(n2) - j0) * h
        z = (np.arange(n3) - k0) * h3
        return x, y, z

    @property
    def box_extent(self):
        """Half-widths of the box about the cylinder centre."""
        x, y, z = self.node_coords
        cx = 0.5 * (self.cs.x[0] + self.cs.x[-1])
        cy = 0.5 * (self.cs.y[0] + self.cs.y[-1])
        return (
            max(cx - x[0], x[-1] - cx),
            max(cy - y[0], y[-1] - cy),
            max(0.5 * self.L - z[0], z[-1] - 0.5 * self.L),
        )

    @cached_property
    def d_mask(self) -> np.ndarray:
        """D on the z-edge lattice of the box."""
        out = np.zeros(self.box_resolution, dtype=bool)
        out[self.window] = self.cs.mask[:, :, None]
        return out

    @property
    def volume(self) -> float:
        return self.cs.area * self.L

    def embed(self, window_array: np.ndarray) -> np.ndarray:
        """Place a window-shaped array into a zero box array."""
        out = np.zeros(self.box_resolution + window_array.shape[3:], dtype=window_array.dtype)
        out[self.window] = window_array
        return out


def embed_cylinder(
    cs: CrossSection,
    L: float,
    Nz: int,
    pad_factor: float = 1.0,
    memory_budget_mb: float = 4096.0,
) -> DiscretizedDomain:
    """Embed Ω×(0,L) in a box padded by ``pad_factor·diam(D)`` on every side."""
    if not L > 0:
        raise GridError(f"height must be positive, got {L}")
    if Nz < 2:
        raise GridError(f"need at least 2 slices, got Nz={Nz}")
    if pad_factor < 0.5:
        raise GridError(f"pad_factor must be >= 0.5, got {pad_factor}")
    h, h3 = cs.h, L / Nz
    diam = math.hypot(shape_diameter(cs.shape), L)
    pad = pad_factor * diam
    nx, ny = cs.n
    # the cross-section grid already carries some exterior rings
    px = int(math.ceil(pad / h))
    pz = int(math.ceil(pad / h3))
    n1, n2, n3 = (fft_friendly(nx + 2 * px), fft_friendly(ny + 2 * px), fft_friendly(Nz + 2 * pz + 1))
    # peak working set is the doubled convolution grid of the cylinder window
    # (cached kernel transforms plus work arrays); the padded box is only
    # materialized by the Dirichlet cross-check path, which checks separately
    conv = np.prod([fft_friendly(2 * s + 8) for s in (nx, ny, Nz)]) * 8 * 8
    est_mb = conv / 2**20
    if est_mb > memory_budget_mb:
        raise MemoryBudgetError(
            f"estimated {est_mb:.0f} MB exceeds memory budget {memory_budget_mb:.0f} MB"
        )
    offset = ((n1 - nx) // 2, (n2 - ny) // 2, (n3 - Nz) // 2)
    return DiscretizedDomain(
        cs=cs, L=float(L), Nz=int(Nz), pad_factor=float(pad_factor),
        box_resolution=(n1, n2, n3), offset=offset,
    )


# ---------------------------------------------------------------------------
# staggered 3-D calculus
# ---------------------------------------------------------------------------


@dataclass
class VectorField3D:
    """Three staggered components on ``location`` ("face" or "edge")."""

    components: tuple
    location: str
    spacing: tuple

    def __post_init__(self):
        if self.location not in ("face", "edge"):
            raise ValueError(f"location must be 'face' or 'edge', got {self.location!r}")
        if len(self.components) != 3:
            raise ValueError("a 3-D vector field carries exactly three components")
        shapes = {np.shape(c) for c in self.components}
        if len(shapes) != 1:
            raise ValueError(f"component shapes differ: {shapes}")

    @property
    def shape(self):
        return np.shape(self.components[0])

    def __getitem__(self, i):
        return self.components[i]

    def __add__(self, other):
        _check_match(self, other)
        return VectorField3D(tuple(a + b for a, b in zip(self, other)), self.location, self.spacing)

    def __sub__(self, other):
        _check_match(self, other)
        return VectorField3D(tuple(a - b for a, b in zip(self, other)), self.location, self.spacing)

    def __mul__(self, c):
        return VectorField3D(tuple(a * c for a in self), self.location, self.spacing)

    __rmul__ = __mul__

    def __iter__(self):
        return iter(self.components)

    def norm2(self) -> float:
        return float(np.sqrt(sum(np.sum(c * c) for c in self.components)))


def _check_match(a, b):
    if a.location != b.location or a.shape != b.shape or not np.allclose(a.spacing, b.spacing):
        raise ValueError("vector fields live on different grids")


def curl3d(v: VectorField3D) -> VectorField3D:
    """Staggered curl: edge -> face (forward differences) or face -> edge (backward)."""
    h1, h2, h3 = v.spacing
    d = d_fwd if v.location == "edge" else d_bwd
    a, b, c = v.components
    out = (
        d(c, 1, h2) - d(b, 2, h3),
        d(a, 2, h3) - d(c, 0, h1),
        d(b, 0, h1) - d(a, 1, h2),
    )
    return VectorField3D(out, "face" if v.location == "edge" else "edge", v.spacing)


def div3d(v: VectorField3D) -> np.ndarray:
    """Staggered divergence: face -> cell or edge -> node."""
    h1, h2, h3 = v.spacing
    d = d_fwd if v.location == "face" else d_bwd
    a, b, c = v.components
    return d(a, 0, h1) + d(b, 1, h2) + d(c, 2, h3)


def laplacian_3d(u: np.ndarray, spacing) -> np.ndarray:
    """7-point -Δ_h with zero extension."""
    out = np.zeros_like(u)
    for ax, h in enumerate(spacing):
        out -= d_bwd(d_fwd(u, ax, h), ax, h)
    return out


def staggered_coords(x, y, z, location: str, component: int):
    """1-D coordinate arrays of a staggered component given node coordinates."""
    base = [np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)]
    half = [0.5 * (a[1] - a[0]) if len(a) > 1 else 0.0 for a in base]
    if location == "node":
        shifted = ()
    elif location == "cell":
        shifted = (0, 1, 2)
    elif location == "face":
        shifted = tuple(ax for ax in range(3) if ax != component)
    elif location == "edge":
        shifted = (component,)
    else:
        raise ValueError(location)
    return tuple(a + half[ax] if ax in shifted else a for ax, a in enumerate(base))


def gauge_field_a(dom: DiscretizedDomain) -> VectorField3D:
    """a = (-x₂/2, x₁/2, 0) sampled on the faces of the whole box."""
    x, y, z = dom.node_coords
    n = dom.box_resolution
    _, yf, _ = staggered_coords(x, y, z, "face", 0)
    xf, _, _ = staggered_coords(x, y, z, "face", 1)
    a1 = np.broadcast_to(-0.5 * yf[None, :, None], n).copy()
    a2 = np.broadcast_to(0.5 * xf[:, None, None], n).copy()
    return VectorField3D((a1, a2, np.zeros(n)), "face", dom.spacing)


def gauge_field_slice(cs: CrossSection) -> VectorField2D:
    """In-plane part of the gauge field on the faces of one slice."""
    h = cs.h
    vx = np.broadcast_to(-0.5 * (cs.y[None, :] + 0.5 * h), cs.n).copy()
    vy = np.broadcast_to(0.5 * (cs.x[:, None] + 0.5 * h), cs.n).copy()
    return VectorField2D(vx, vy)


def face_mask_2d(cs: CrossSection):
    """Faces touching at least one interior node, with ghost-fluid weights.

    Returns ``(wx, wy)``: 1 on faces between two interior nodes, ``theta`` on
    links leaving the shape, 0 elsewhere.
    """
    m = cs.mask
    wx = np.zeros(m.shape)
    wy = np.zeros(m.shape)
    wx[m & _shift(m, 0, 1)] = 1.0
    wy[m & _shift(m, 1, 0)] = 1.0
    up = m & ~_shift(m, 0, 1)
    wx[up] = cs.theta[2][up]
    dn = ~m & _shift(m, 0, 1)
    wx[dn] = _shift(cs.theta[3], 0, 1, fill=1.0)[dn]
    rt = m & ~_shift(m, 1, 0)
    wy[rt] = cs.theta[0][rt]
    lt = ~m & _shift(m, 1, 0)
    wy[lt] = _shift(cs.theta[1], 1, 0, fill=1.0)[lt]
    return wx, wy


def interior_distance_mask(dom: DiscretizedDomain, dist: float) -> np.ndarray:
    """Window-shaped mask of D-nodes at distance >= ``dist`` from ∂D."""
    cs = dom.cs
    X, Y = cs.coords
    inplane = cs.mask & (cs.shape.boundary_distance(X, Y) >= dist - 1e-12)
    zc = dom.slice_centers
    zok = (zc >= dist - 1e-12) & (dom.L - zc >= dist - 1e-12)
    return inplane[:, :, None] & zok[None, None, :]
