"""Uniform 3D lattices, ball/box domains, scalar fields, quadrature and persistence.

Everything downstream (wave stepping, potential theory, moment machinery)
works on the types defined here.  Fields live on a uniform isotropic lattice;
the physical region of interest is a ball or axis-aligned box strictly inside
the lattice bounding box.  All types are immutable after construction and all
operations are pure functions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

# Hard cap on lattice size: keeps every operation at desk scale.
GRID_POINT_CAP = 96 ** 3

# Smooth presets are truncated to exact zero below this fraction of their peak
# so that compactly supported fields vanish identically outside their mask.
SMOOTH_SUPPORT_CUTOFF = 1e-12

MAGIC = b"WMLF"
FORMAT_VERSION = 1


class FieldFormatError(ValueError):
    """Field file has a corrupt or unrecognized header."""


class FieldDimensionError(ValueError):
    """Field file dimensions are invalid or inconsistent with expectations."""


class FieldTruncationError(ValueError):
    """Field file payload is shorter than its header promises."""


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Uniform isotropic grid: point (i,j,k) sits at origin + h*(i,j,k)."""

    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("lattice spacing must be positive")
        if any(n < 8 for n in self.dims):
            raise ValueError(f"lattice dims must all be >= 8, got {self.dims}")
        if int(np.prod(self.dims)) > GRID_POINT_CAP:
            raise ValueError(
                f"lattice has {int(np.prod(self.dims))} points, cap is {GRID_POINT_CAP}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def n_points(self) -> int:
        return int(np.prod(self.dims))

    def axis(self, d: int) -> np.ndarray:
        return self.origin[d] + self.spacing * np.arange(self.dims[d])

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")

    def points(self) -> np.ndarray:
        """All lattice points as an (N, 3) array, x-fastest order."""
        X, Y, Z = self.meshgrid()
        return np.stack(
            [X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1
        )

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple(
            (self.origin[d], self.origin[d] + self.spacing * (self.dims[d] - 1))
            for d in range(3)
        )

    def radius_grid(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        X, Y, Z = self.meshgrid()
        return np.sqrt(
            (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
        )


def build_lattice(box, n) -> Lattice:
    """Uniform lattice over ``box`` with ``n`` points per axis.

    ``box`` is ((x0,x1),(y0,y1),(z0,z1)); spacing h = extent/(n-1) must come
    out identical on all three axes (isotropic h is enforced, not averaged).
    """
    box = [(float(a), float(b)) for a, b in box]
    n = tuple(int(m) for m in n)
    if any(m < 8 for m in n):
        raise ValueError(f"lattice dims must all be >= 8, got {n}")
    for a, b in box:
        if not b > a:
            raise ValueError("box is degenerate: each axis needs positive extent")
    spacings = [(b - a) / (m - 1) for (a, b), m in zip(box, n)]
    h = spacings[0]
    if any(abs(s - h) > 1e-12 * h for s in spacings):
        raise ValueError(
            f"anisotropic spacing {spacings}: box extents and dims must give one h"
        )
    return Lattice(origin=tuple(a for a, _ in box), spacing=h, dims=n)


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------

def fibonacci_sphere(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors (deterministic golden-angle spiral)."""
    i = np.arange(n, dtype=float)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    rho = np.sqrt(1.0 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


@dataclass(frozen=True)
class Domain:
    """Region of interest with boundary sample points, normals and weights.

    ``shape`` is "ball" (center, radius) or "box" (bounds).  Boundary samples
    lie exactly on the surface; their weights sum to the surface area.
    """

    shape: str
    lattice: Lattice
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.0
    box_bounds: tuple[tuple[float, float], ...] = ()
    boundary_points: np.ndarray = dc_field(default=None, repr=False)
    boundary_normals: np.ndarray = dc_field(default=None, repr=False)
    boundary_weights: np.ndarray = dc_field(default=None, repr=False)

    @property
    def n_sensors(self) -> int:
        return len(self.boundary_points)

    def surface_area(self) -> float:
        if self.shape == "ball":
            return 4.0 * np.pi * self.radius ** 2
        (x0, x1), (y0, y1), (z0, z1) = self.box_bounds
        a, b, c = x1 - x0, y1 - y0, z1 - z0
        return 2.0 * (a * b + b * c + a * c)

    def volume(self) -> float:
        if self.shape == "ball":
            return 4.0 / 3.0 * np.pi * self.radius ** 3
        (x0, x1), (y0, y1), (z0, z1) = self.box_bounds
        return (x1 - x0) * (y1 - y0) * (z1 - z0)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Negative inside, positive outside."""
        pts = np.atleast_2d(pts)
        if self.shape == "ball":
            return np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius
        lo = np.array([b[0] for b in self.box_bounds])
        hi = np.array([b[1] for b in self.box_bounds])
        q = np.maximum(lo - pts, pts - hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def interior_mask(self) -> np.ndarray:
        """Boolean array over the lattice: strictly inside the domain."""
        if self.shape == "ball":
            return self.lattice.radius_grid(self.center) < self.radius
        X, Y, Z = self.lattice.meshgrid()
        (x0, x1), (y0, y1), (z0, z1) = self.box_bounds
        return (
            (X > x0) & (X < x1) & (Y > y0) & (Y < y1) & (Z > z0) & (Z < z1)
        )

    def volume_weights(self) -> np.ndarray:
        """Midpoint quadrature weights with cut cells at the boundary.

        Each lattice point owns a cube cell of side h.  Cells fully inside get
        weight h^3, fully outside 0, and straddling cells the inside fraction
        (exact axis products for the box, 4x4x4 midpoint subsampling for the
        ball).
        """
        h = self.lattice.spacing
        if self.shape == "box":
            X, Y, Z = self.lattice.meshgrid()
            w = np.ones(self.lattice.dims)
            for grid, (lo, hi) in zip((X, Y, Z), self.box_bounds):
                cell_lo = grid - h / 2.0
                cell_hi = grid + h / 2.0
                overlap = np.clip(
                    np.minimum(cell_hi, hi) - np.maximum(cell_lo, lo), 0.0, h
                )
                w *= overlap / h
            return w * h ** 3

        r = self.lattice.radius_grid(self.center)
        half_diag = h * np.sqrt(3.0) / 2.0
        w = np.zeros(self.lattice.dims)
        w[r <= self.radius - half_diag] = 1.0
        straddle = (r > self.radius - half_diag) & (r < self.radius + half_diag)
        if np.any(straddle):
            idx = np.argwhere(straddle)
            pts = np.asarray(self.lattice.origin) + h * idx
            # 4^3 midpoint subsamples per straddling cell
            m = 4
            offs = (np.arange(m) + 0.5) / m - 0.5
            ox, oy, oz = np.meshgrid(offs, offs, offs, indexing="ij")
            sub = np.stack([ox.ravel(), oy.ravel(), oz.ravel()], axis=1) * h
            d = pts[:, None, :] + sub[None, :, :] - np.asarray(self.center)
            inside = (d ** 2).sum(axis=2) <= self.radius ** 2
            w[straddle] = inside.mean(axis=1)
        return w * h ** 3


def ball_domain(lattice: Lattice, center=(0.0, 0.0, 0.0), radius=1.5,
                n_sensors: int = 64) -> Domain:
    """Ball domain with ``n_sensors`` golden-spiral boundary samples."""
    margin = 4 * lattice.spacing
    for d in range(3):
        lo, hi = lattice.bounds[d]
        if center[d] - radius < lo + margin or center[d] + radius > hi - margin:
            raise ValueError(
                f"ball (center {center}, radius {radius}) needs a margin of 4h "
                f"= {margin:.4g} inside the lattice bounds {lattice.bounds}"
            )
    normals = fibonacci_sphere(n_sensors)
    pts = np.asarray(center) + radius * normals
    weights = np.full(n_sensors, 4.0 * np.pi * radius ** 2 / n_sensors)
    return Domain(
        shape="ball", lattice=lattice, center=tuple(float(c) for c in center),
        radius=float(radius), boundary_points=pts, boundary_normals=normals,
        boundary_weights=weights,
    )


def box_domain(lattice: Lattice, bounds, sensors_per_edge: int = 4) -> Domain:
    """Axis-aligned box domain with a sensors_per_edge^2 grid per face."""
    bounds = tuple((float(a), float(b)) for a, b in bounds)
    margin = 4 * lattice.spacing
    for d in range(3):
        lo, hi = lattice.bounds[d]
        if bounds[d][0] < lo + margin or bounds[d][1] > hi - margin:
            raise ValueError("box domain needs a margin of 4h inside the lattice")
    pts, nrm, wts = [], [], []
    m = sensors_per_edge
    for axis in range(3):
        lo, hi = bounds[axis]
        others = [d for d in range(3) if d != axis]
        # face-centered sample grid, weight = face area / samples
        u = np.linspace(bounds[others[0]][0], bounds[others[0]][1], m + 2)[1:-1]
        v = np.linspace(bounds[others[1]][0], bounds[others[1]][1], m + 2)[1:-1]
        U, V = np.meshgrid(u, v, indexing="ij")
        area = (bounds[others[0]][1] - bounds[others[0]][0]) * (
            bounds[others[1]][1] - bounds[others[1]][0]
        )
        for side, coord in ((-1.0, lo), (1.0, hi)):
            p = np.zeros((m * m, 3))
            p[:, axis] = coord
            p[:, others[0]] = U.ravel()
            p[:, others[1]] = V.ravel()
            n = np.zeros((m * m, 3))
            n[:, axis] = side
            pts.append(p)
            nrm.append(n)
            wts.append(np.full(m * m, area / (m * m)))
    return Domain(
        shape="box", lattice=lattice, box_bounds=bounds,
        boundary_points=np.concatenate(pts), boundary_normals=np.concatenate(nrm),
        boundary_weights=np.concatenate(wts),
    )


# ---------------------------------------------------------------------------
# ScalarField
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarField:
    """Dense real or complex samples on a lattice plus a support mask."""

    lattice: Lattice
    values: np.ndarray
    mask: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.lattice.dims:
            raise ValueError(
                f"values shape {values.shape} != lattice dims {self.lattice.dims}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite everywhere")
        kind = np.complex128 if np.iscomplexobj(values) else np.float64
        object.__setattr__(self, "values", values.astype(kind, copy=False))
        mask = self.mask
        if mask is None:
            mask = np.abs(self.values) > 0
        object.__setattr__(self, "mask", np.asarray(mask, dtype=bool))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def like(self, values: np.ndarray, mask=None) -> "ScalarField":
        return ScalarField(self.lattice, values, mask=mask)

    def norm(self, weights: np.ndarray | None = None) -> float:
        """Quadrature L2 norm (whole lattice unless weights given)."""
        w = self.lattice.spacing ** 3 if weights is None else weights
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * w)))

    def peak(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other):
        return self.like(self.values + other.values, mask=self.mask | other.mask)

    def __sub__(self, other):
        return self.like(self.values - other.values, mask=self.mask | other.mask)

    def __mul__(self, a):
        if isinstance(a, ScalarField):
            return self.like(self.values * a.values, mask=self.mask & a.mask)
        return self.like(self.values * a, mask=self.mask)

    __rmul__ = __mul__

    def interpolate(self, pts: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at arbitrary points inside the lattice."""
        pts = np.atleast_2d(pts)
        h = self.lattice.spacing
        loc = (pts - np.asarray(self.lattice.origin)) / h
        nx, ny, nz = self.lattice.dims
        if np.any(loc < -1e-9) or np.any(loc > np.array([nx, ny, nz]) - 1 + 1e-9):
            raise ValueError("interpolation point outside the lattice")
        i0 = np.clip(np.floor(loc).astype(int), 0, np.array([nx, ny, nz]) - 2)
        f = loc - i0
        v = self.values
        out = np.zeros(len(pts), dtype=v.dtype)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    wgt = (
                        (f[:, 0] if dx else 1 - f[:, 0])
                        * (f[:, 1] if dy else 1 - f[:, 1])
                        * (f[:, 2] if dz else 1 - f[:, 2])
                    )
                    out += wgt * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        return out

    def check_supported_inside(self, domain: Domain, margin_cells: int = 2) -> None:
        """Raise unless the support mask sits inside the domain with margin."""
        if not np.any(self.mask):
            return
        idx = np.argwhere(self.mask)
        pts = np.asarray(self.lattice.origin) + self.lattice.spacing * idx
        d = domain.signed_distance(pts)
        limit = -margin_cells * self.lattice.spacing
        if np.max(d) > limit:
            raise ValueError(
                f"field support reaches to within {margin_cells} cells of the "
                f"domain boundary (max signed distance {np.max(d):.4g})"
            )


@dataclass(frozen=True)
class SpeedModel:
    """Sound speed field with lower bound c0; c is 1 outside a compact set."""

    field: ScalarField
    c0: float = 0.5

    def __post_init__(self):
        v = self.field.values
        if np.iscomplexobj(v):
            raise ValueError("speed must be real")
        if float(v.min()) < self.c0:
            raise ValueError(f"speed dips to {v.min():.4g}, below c0 = {self.c0}")

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def lattice(self) -> Lattice:
        return self.field.lattice

    def inv_sq(self) -> np.ndarray:
        return 1.0 / self.values ** 2

    def max(self) -> float:
        return float(self.values.max())

    def deviation_mask(self) -> np.ndarray:
        """Support of (1 - c)."""
        return np.abs(self.values - 1.0) > 0

    def check_unit_outside(self, domain: Domain, margin_cells: int = 2) -> None:
        dev = ScalarField(self.lattice, self.values - 1.0)
        dev.check_supported_inside(domain, margin_cells)


def constant_speed(lattice: Lattice, value: float = 1.0) -> SpeedModel:
    f = ScalarField(lattice, np.full(lattice.dims, float(value)))
    return SpeedModel(field=f, c0=min(0.5, value / 2))


# ---------------------------------------------------------------------------
# Field sampling presets
# ---------------------------------------------------------------------------

def _smoothstep(u: np.ndarray) -> np.ndarray:
    """Quintic step: 0 at u<=0, 1 at u>=1, C2 at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "sqrt": np.sqrt, "abs": np.abs, "log": np.log, "tanh": np.tanh,
    "pi": np.pi, "e": np.e, "minimum": np.minimum, "maximum": np.maximum,
    "where": np.where,
}


def sample_field(preset: str, lattice: Lattice, **params) -> ScalarField:
    """Evaluate a built-in preset (or arithmetic expression) on the lattice.

    Presets: ``constant``, ``gaussian`` (amplitude, sigma, center),
    ``ball`` (amplitude, radius, center, smooth_width), ``expression``
    (expr string in x, y, z).  Smooth presets are truncated at 1e-12 of peak
    so support is compact and deterministic; indicator presets use |value|>0.
    """
    X, Y, Z = lattice.meshgrid()
    if preset == "constant":
        value = float(params.get("value", 1.0))
        v = np.full(lattice.dims, value)
        return ScalarField(lattice, v, mask=np.abs(v) > 0)
    if preset == "gaussian":
        a = float(params.get("amplitude", 1.0))
        sigma = float(params.get("sigma", 0.3))
        cx, cy, cz = params.get("center", (0.0, 0.0, 0.0))
        r2 = (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2
        v = a * np.exp(-r2 / (2.0 * sigma ** 2))
        return _truncate_smooth(lattice, v)
    if preset == "ball":
        a = float(params.get("amplitude", 1.0))
        radius = float(params.get("radius", 0.5))
        sw = float(params.get("smooth_width", 0.0))
        cx, cy, cz = params.get("center", (0.0, 0.0, 0.0))
        r = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2)
        if sw <= 0:
            v = np.where(r <= radius, a, 0.0)
        else:
            v = a * _smoothstep((radius - r) / sw)
        return ScalarField(lattice, v, mask=np.abs(v) > 0)
    if preset == "expression":
        expr = params["expr"]
        names = dict(_EXPR_NAMES)
        names.update({"x": X, "y": Y, "z": Z})
        try:
            v = eval(compile(expr, "<field-expression>", "eval"),
                     {"__builtins__": {}}, names)
        except Exception as exc:
            raise ValueError(f"field expression failed to evaluate: {exc}") from exc
        v = np.broadcast_to(np.asarray(v, dtype=float), lattice.dims).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("field expression produced NaN/inf values")
        return _truncate_smooth(lattice, v)
    raise ValueError(f"unknown field preset {preset!r}")


def _truncate_smooth(lattice: Lattice, v: np.ndarray) -> ScalarField:
    peak = np.max(np.abs(v))
    if peak == 0:
        return ScalarField(lattice, v, mask=np.zeros(lattice.dims, dtype=bool))
    mask = np.abs(v) > SMOOTH_SUPPORT_CUTOFF * peak
    v = np.where(mask, v, 0.0)
    return ScalarField(lattice, v, mask=mask)


def sample_speed(preset: str, lattice: Lattice, c0: float = 0.5, **params) -> SpeedModel:
    """Speed presets: ``constant``, ``bump`` and ``harmonic_perturbation``.

    ``bump``: c = 1 + amplitude * smooth bump(center, radius).
    ``harmonic_perturbation``: c^-2 = 1 + epsilon * phi(x) * bump window, with
    phi a low-degree harmonic polynomial (monomial string like "x" or "xy").
    """
    X, Y, Z = lattice.meshgrid()
    if preset == "constant":
        return constant_speed(lattice, float(params.get("value", 1.0)))
    if preset == "bump":
        a = float(params.get("amplitude", 0.1))
        radius = float(params.get("radius", 0.6))
        cx, cy, cz = params.get("center", (0.0, 0.0, 0.0))
        r = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2)
        v = 1.0 + a * _smoothstep(1.0 - r / radius)
        return SpeedModel(field=ScalarField(lattice, v, mask=np.ones(lattice.dims, bool)), c0=c0)
    if preset == "harmonic_perturbation":
        eps = float(params.get("epsilon", 0.05))
        phi_name = params.get("phi", "x")
        radius = float(params.get("radius", 0.6))
        cx, cy, cz = params.get("center", (0.0, 0.0, 0.0))
        phi_table = {
            "1": np.ones_like(X), "x": X - cx, "y": Y - cy, "z": Z - cz,
            "xy": (X - cx) * (Y - cy), "yz": (Y - cy) * (Z - cz),
            "zx": (Z - cz) * (X - cx),
        }
        if phi_name not in phi_table:
            raise ValueError(f"unsupported harmonic monomial {phi_name!r}")
        r = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2)
        window = _smoothstep(1.0 - r / radius)
        inv_sq = 1.0 + eps * phi_table[phi_name] * window
        if np.min(inv_sq) <= 0:
            raise ValueError("harmonic perturbation drives c^-2 nonpositive")
        v = 1.0 / np.sqrt(inv_sq)
        return SpeedModel(field=ScalarField(lattice, v, mask=np.ones(lattice.dims, bool)), c0=c0)
    raise ValueError(f"unknown speed preset {preset!r}")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def volume_integral(g: ScalarField, over: Domain | None = None):
    """Integral of g over a domain (cut-cell midpoint rule) or whole lattice."""
    if not np.all(np.isfinite(g.values)):
        raise ValueError("cannot integrate a non-finite field")
    if over is None:
        return g.values.sum() * g.lattice.spacing ** 3
    if over.lattice != g.lattice:
        raise ValueError("domain and field live on different lattices")
    return float(np.sum(g.values * over.volume_weights())) if not g.is_complex \
        else complex(np.sum(g.values * over.volume_weights()))


def weighted_inner(u: ScalarField, v: ScalarField, weight: np.ndarray | None = None) -> float:
    """Discrete inner product sum(u * conj(v) * weight) * h^3."""
    w = 1.0 if weight is None else weight
    return complex(np.sum(u.values * np.conj(v.values) * w)) * u.lattice.spacing ** 3


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def persist_field(g: ScalarField, path) -> None:
    """Write the binary field format (little-endian, x-fastest payload)."""
    kind = 1 if g.is_complex else 0
    nx, ny, nz = g.lattice.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<III", nx, ny, nz))
        fh.write(struct.pack("<d", g.lattice.spacing))
        fh.write(struct.pack("<3d", *g.lattice.origin))
        fh.write(struct.pack("<B", kind))
        vals = g.values.ravel(order="F")
        if kind:
            inter = np.empty(2 * vals.size)
            inter[0::2] = vals.real
            inter[1::2] = vals.imag
            fh.write(inter.astype("<f8").tobytes())
        else:
            fh.write(vals.astype("<f8").tobytes())
        fh.write(np.packbits(g.mask.ravel(order="F")).tobytes())


def load_field(path, expect_lattice: Lattice | None = None) -> ScalarField:
    """Read the binary field format; round-trips persist_field bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FieldFormatError(f"bad magic bytes {raw[:4]!r}, expected {MAGIC!r}")
    header = struct.Struct("<IIIId3dB")
    if len(raw) < 4 + header.size:
        raise FieldFormatError("header truncated")
    version, nx, ny, nz, spacing, ox, oy, oz, kind = header.unpack_from(raw, 4)
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"unsupported format version {version}")
    if kind not in (0, 1):
        raise FieldFormatError(f"unknown value kind {kind}")
    if min(nx, ny, nz) < 8 or nx * ny * nz > GRID_POINT_CAP:
        raise FieldDimensionError(f"implausible dims {(nx, ny, nz)} in header")
    n = nx * ny * nz
    off = 4 + header.size
    payload_len = 8 * n * (2 if kind else 1)
    mask_len = (n + 7) // 8
    if len(raw) < off + payload_len + mask_len:
        raise FieldTruncationError(
            f"payload truncated: header promises {payload_len + mask_len} bytes "
            f"after the header, file has {len(raw) - off}"
        )
    flat = np.frombuffer(raw, dtype="<f8", count=payload_len // 8, offset=off)
    if kind:
        vals = flat[0::2] + 1j * flat[1::2]
    else:
        vals = flat
    values = vals.reshape((nx, ny, nz), order="F")
    bits = np.frombuffer(raw, dtype=np.uint8, count=mask_len, offset=off + payload_len)
    mask = np.unpackbits(bits, count=n).astype(bool).reshape((nx, ny, nz), order="F")
    lattice = Lattice(origin=(ox, oy, oz), spacing=spacing, dims=(nx, ny, nz))
    if expect_lattice is not None and lattice != expect_lattice:
        raise FieldDimensionError(
            f"field lattice {lattice} does not match expected {expect_lattice}"
        )
    return ScalarField(lattice, values.copy(), mask=mask.copy())


def export_field_csv(g: ScalarField, path) -> None:
    """One row per point: x,y,z,value (real) or x,y,z,re,im (complex)."""
    pts = g.lattice.points()
    vals = g.values.ravel(order="F")
    with open(path, "w", encoding="utf-8") as fh:
        if g.is_complex:
            fh.write("# x,y,z,re,im\n")
            for (x, y, z), v in zip(pts, vals):
                fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r},"
                         f"{float(v.real)!r},{float(v.imag)!r}\n")
        else:
            fh.write("# x,y,z,value\n")
            for (x, y, z), v in zip(pts, vals):
                fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r},{float(v)!r}\n")
