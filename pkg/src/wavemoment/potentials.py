"""Potential theory on the lattice.

Free-space Newtonian potential (volume convolution with 1/4pi|x-y|), the
zero-Dirichlet inverse Laplacian on a ball/box domain (7-point stencil with a
symmetric first-order cut at the embedded boundary, solved by conjugate
gradients), boundary normal derivatives, the weighted operator
L g = inverse_laplacian(g / c^2), and the integration-by-parts identity

    int g(y)|x-y|^n dy  =  -n(n+1) int invlap(g)(y) |x-y|^(n-2) dy

valid for sources whose free-space potential vanishes outside the domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import lattice_convolve
from .fields import Domain, ScalarField, SpeedModel

CG_TOL = 1e-10
CG_MAX_ITER = 4000
# cut distances are clipped away from zero to keep the stencil well conditioned
MIN_CUT_FRACTION = 0.05


class ConvergenceError(RuntimeError):
    """Conjugate gradients failed to reach the requested residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class MembershipError(ValueError):
    """Source is not harmonically orthogonal: the kernel identity does not apply."""

    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class PotentialField:
    """A potential together with its defining source and which inverse made it."""

    field: ScalarField
    kind: str  # "free_space" | "dirichlet"
    source: ScalarField

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def lattice(self):
        return self.field.lattice


def discrete_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """7-point Laplacian; outermost layer treated as zero ghost values."""
    out = -6.0 * values.copy()
    out[1:, :, :] += values[:-1, :, :]
    out[:-1, :, :] += values[1:, :, :]
    out[:, 1:, :] += values[:, :-1, :]
    out[:, :-1, :] += values[:, 1:, :]
    out[:, :, 1:] += values[:, :, :-1]
    out[:, :, :-1] += values[:, :, 1:]
    return out / h ** 2


def newtonian_potential(g: ScalarField, method: str = "auto") -> PotentialField:
    """w(x) = sum_y g(y) / (4 pi |x-y|) h^3 with the exact self-cell rule.

    Shares its code path with the Helmholtz convolution at k = 0, so the two
    agree bitwise there.
    """
    vals = lattice_convolve(g, "helmholtz", 0.0, method=method)
    w = ScalarField(g.lattice, np.asarray(vals).real if not np.iscomplexobj(g.values)
                    else vals, mask=np.ones(g.lattice.dims, dtype=bool))
    return PotentialField(field=w, kind="free_space", source=g)


# ---------------------------------------------------------------------------
# Dirichlet inverse Laplacian
# ---------------------------------------------------------------------------

class DirichletSolver:
    """Matrix-free CG for -lap w = g, w = 0 on the embedded domain boundary.

    Interior points carry unknowns; a neighbor crossing the boundary at
    distance theta*h contributes 1/theta to the diagonal only (linear cut
    interpolation through the boundary zero), which keeps the operator
    symmetric positive definite.
    """

    def __init__(self, domain: Domain):
        self.domain = domain
        lat = domain.lattice
        h = lat.spacing
        inside = domain.interior_mask()
        self.inside = inside
        self.h = h
        idx = np.argwhere(inside)
        self.n = len(idx)
        if self.n == 0:
            raise ValueError("domain contains no interior lattice points")
        flat_of_grid = -np.ones(lat.dims, dtype=np.int64)
        flat_of_grid[tuple(idx.T)] = np.arange(self.n)
        pts = np.asarray(lat.origin) + h * idx
        nb = np.full((6, self.n), self.n, dtype=np.int64)  # n = padded zero slot
        diag = np.zeros(self.n)
        dirs = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]
        for d, (axis, step) in enumerate(dirs):
            nbr = idx.copy()
            nbr[:, axis] += step
            ok = (nbr[:, axis] >= 0) & (nbr[:, axis] < lat.dims[axis])
            nbr_flat = np.full(self.n, -1, dtype=np.int64)
            nbr_flat[ok] = flat_of_grid[tuple(nbr[ok].T)]
            interior_nbr = nbr_flat >= 0
            nb[d, interior_nbr] = nbr_flat[interior_nbr]
            cut = ~interior_nbr
            theta = np.ones(self.n)
            if np.any(cut):
                theta[cut] = self._cut_fraction(pts[cut], axis, step)
            diag += np.where(interior_nbr, 1.0, 1.0 / theta)
        self.nb = nb
        self.diag = diag
        self.idx = idx

    def _cut_fraction(self, pts: np.ndarray, axis: int, step: int) -> np.ndarray:
        dom, h = self.domain, self.h
        if dom.shape == "ball":
            p = pts - np.asarray(dom.center)
            q2 = (p ** 2).sum(axis=1) - p[:, axis] ** 2
            root = np.sqrt(np.maximum(dom.radius ** 2 - q2, 0.0))
            s = root - p[:, axis] if step > 0 else root + p[:, axis]
        else:
            lo, hi = dom.box_bounds[axis]
            s = (hi - pts[:, axis]) if step > 0 else (pts[:, axis] - lo)
        return np.clip(s / h, MIN_CUT_FRACTION, 1.0)

    def apply(self, u: np.ndarray) -> np.ndarray:
        up = np.concatenate([u, [0.0 if not np.iscomplexobj(u) else 0.0 + 0.0j]])
        out = self.diag * u
        for d in range(6):
            out -= up[self.nb[d]]
        return out / self.h ** 2

    def solve(self, rhs: np.ndarray, tol: float = CG_TOL,
              max_iter: int = CG_MAX_ITER) -> np.ndarray:
        b = rhs
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(b)
        x = np.zeros_like(b)
        r = b.copy()
        p = r.copy()
        rs = np.vdot(r, r).real
        for _ in range(max_iter):
            Ap = self.apply(p)
            alpha = rs / np.vdot(p, Ap).real
            x = x + alpha * p
            r = r - alpha * Ap
            rs_new = np.vdot(r, r).real
            if np.sqrt(rs_new) <= tol * bnorm:
                return x
            p = r + (rs_new / rs) * p
            rs = rs_new
        raise ConvergenceError(
            f"CG did not reach {tol} in {max_iter} iterations",
            residual=float(np.sqrt(rs) / bnorm),
        )

    def to_grid(self, u: np.ndarray, dtype=float) -> np.ndarray:
        grid = np.zeros(self.domain.lattice.dims, dtype=dtype)
        grid[tuple(self.idx.T)] = u
        return grid

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        return values[tuple(self.idx.T)]


_solver_cache: dict[int, tuple[Domain, DirichletSolver]] = {}


def get_dirichlet_solver(domain: Domain) -> DirichletSolver:
    entry = _solver_cache.get(id(domain))
    if entry is not None and entry[0] is domain:
        return entry[1]
    solver = DirichletSolver(domain)
    _solver_cache[id(domain)] = (domain, solver)
    return solver


def dirichlet_inverse(g: ScalarField, domain: Domain,
                      tol: float = CG_TOL) -> PotentialField:
    """Solve -lap w = g in the domain with w = 0 on its boundary."""
    if domain.lattice != g.lattice:
        raise ValueError("field and domain lattices differ")
    solver = get_dirichlet_solver(domain)
    rhs = solver.from_grid(g.values)
    if g.is_complex:
        # CG on real/imaginary parts separately (operator is real symmetric)
        w = solver.solve(rhs.real, tol=tol) + 1j * solver.solve(rhs.imag, tol=tol)
        grid = solver.to_grid(w, dtype=complex)
    else:
        grid = solver.to_grid(solver.solve(rhs, tol=tol))
    w = ScalarField(g.lattice, grid, mask=domain.interior_mask())
    return PotentialField(field=w, kind="dirichlet", source=g)


def apply_L(g: ScalarField, c: SpeedModel, domain: Domain,
            tol: float = CG_TOL) -> ScalarField:
    """The compact operator g -> invlap(c^-2 g) with zero Dirichlet data."""
    weighted = g.like(g.values * c.inv_sq())
    return dirichlet_inverse(weighted, domain, tol=tol).field


def normal_derivative(w: PotentialField | ScalarField, domain: Domain) -> np.ndarray:
    """One-sided second-order normal derivative at the boundary samples."""
    f = w.field if isinstance(w, PotentialField) else w
    h = f.lattice.spacing
    pts = domain.boundary_points
    nrm = domain.boundary_normals
    try:
        w0 = f.interpolate(pts)
        w1 = f.interpolate(pts - h * nrm)
        w2 = f.interpolate(pts - 2 * h * nrm)
    except ValueError as exc:
        raise ValueError(f"boundary point too close to the lattice edge: {exc}")
    return (3.0 * w0 - 4.0 * w1 + w2) / (2.0 * h)


# ---------------------------------------------------------------------------
# Integration-by-parts kernel identity
# ---------------------------------------------------------------------------

def exterior_potential_ratio(g: ScalarField, domain: Domain,
                             potential: PotentialField | None = None) -> float:
    """sup of |free-space potential| outside the domain, relative to its peak."""
    w = potential if potential is not None else newtonian_potential(g)
    outside = ~domain.interior_mask()
    scale = float(np.max(np.abs(w.values)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(w.values[outside])) / scale)


def kernel_power_identity(g: ScalarField, n: int, x, domain: Domain,
                          membership_tol: float = 1e-6):
    """Both sides of the |x-y|^n identity for odd n in {1, 3, 5}.

    Preconditions: g compactly supported in the domain and harmonically
    orthogonal, checked as sup of its free-space potential outside the domain
    below ``membership_tol`` times the potential's peak (achieved value is
    attached to the error on failure).
    """
    if n not in (1, 3, 5):
        raise ValueError("kernel power n must be odd and in {1, 3, 5}")
    g.check_supported_inside(domain)
    achieved = exterior_potential_ratio(g, domain)
    if achieved > membership_tol:
        raise MembershipError(
            f"exterior potential ratio {achieved:.3e} exceeds {membership_tol:.1e}; "
            "source is not harmonically orthogonal at this resolution",
            achieved=achieved,
        )
    x = np.asarray(x, dtype=float)
    h = g.lattice.spacing
    idx = np.argwhere(g.mask)
    pts = np.asarray(g.lattice.origin) + h * idx
    r = np.linalg.norm(pts - x, axis=1)
    lhs = float(np.sum(g.values[g.mask] * r ** n) * h ** 3)

    w = dirichlet_inverse(g, domain)
    wmask = np.abs(w.values) > 0
    idx_w = np.argwhere(wmask)
    pts_w = np.asarray(g.lattice.origin) + h * idx_w
    rw = np.linalg.norm(pts_w - x, axis=1)
    if np.any(rw == 0) and n < 2:
        raise ValueError("evaluation point must lie outside the potential support")
    rhs = float(-n * (n + 1) * np.sum(w.values[wmask] * rw ** (n - 2)) * h ** 3)
    return lhs, rhs, {"exterior_potential_ratio": achieved}
