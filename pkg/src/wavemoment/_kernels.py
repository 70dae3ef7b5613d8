"""Lattice convolutions with radial kernels (1/4pi|r|, e^{ik|r|}/4pi|r|, |r|^p).

The lattice sum w_i = sum_j K(x_i - x_j) g_j h^3 is evaluated either by direct
summation over the source support (reference path, bit-reproducible) or by a
zero-padded FFT circular convolution (same quadrature, roundoff-level
difference).  The singular self cell |x - y| = 0 of the 1/|r| kernels is
replaced by the exact integral of 1/|r| over the h-cube, which equals
CUBE_SELF_INTEGRAL * h^2.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sp_fft

from .fields import Lattice, ScalarField

# Integral of 1/|r| over the unit cube centered at the origin, computed once
# by adaptive quadrature (see tests/test_potentials.py which re-derives it).
CUBE_SELF_INTEGRAL = 2.380077363979553

# direct summation is used below this many target*source pairs
DIRECT_PAIR_LIMIT = 4_000_000


def _offset_radii(dims: tuple[int, int, int], h: float):
    """|offset| on the (2n) wrapped offset grid used for FFT convolution."""
    axes = []
    for n in dims:
        d = np.arange(2 * n)
        d = np.where(d < n, d, d - 2 * n)  # wrap: n..2n-1 are negative offsets
        axes.append(d)
    DX, DY, DZ = np.meshgrid(*axes, indexing="ij")
    return h * np.sqrt(DX ** 2 + DY ** 2 + DZ ** 2, dtype=float)


def _helmholtz_kernel(r: np.ndarray, k: float, h: float) -> np.ndarray:
    """e^{ik r}/(4 pi r) with the cube rule on the self cell (e^{ik 0} = 1)."""
    out = np.empty(r.shape, dtype=complex if k != 0 else float)
    sing = r == 0
    rr = np.where(sing, 1.0, r)
    if k != 0:
        out = np.exp(1j * k * r) / (4.0 * np.pi * rr)
    else:
        out = 1.0 / (4.0 * np.pi * rr)
    out[sing] = CUBE_SELF_INTEGRAL / (4.0 * np.pi * h)
    return out


def _power_kernel(r: np.ndarray, m: int, h: float) -> np.ndarray:
    """|r|^(m-1); m = 0 is the Newtonian 1/|r| with the cube self rule."""
    sing = r == 0
    if m == 0:
        rr = np.where(sing, 1.0, r)
        out = 1.0 / rr
        out[sing] = CUBE_SELF_INTEGRAL / h
        return out
    if m == 1:
        return np.ones_like(r)
    out = r ** (m - 1)
    out[sing] = 0.0
    return out


def _kernel_values(r: np.ndarray, kind: str, param, h: float) -> np.ndarray:
    if kind == "helmholtz":
        return _helmholtz_kernel(r, float(param), h)
    if kind == "power":
        return _power_kernel(r, int(param), h)
    raise ValueError(f"unknown kernel kind {kind!r}")


def convolve_fft(g: ScalarField, kind: str, param) -> np.ndarray:
    lat = g.lattice
    h = lat.spacing
    nx, ny, nz = lat.dims
    K = _kernel_values(_offset_radii(lat.dims, h), kind, param, h)
    pad = np.zeros((2 * nx, 2 * ny, 2 * nz), dtype=g.values.dtype)
    pad[:nx, :ny, :nz] = np.where(g.mask, g.values, 0.0)
    cplx = np.iscomplexobj(K) or np.iscomplexobj(pad)
    if cplx:
        out = sp_fft.ifftn(sp_fft.fftn(pad) * sp_fft.fftn(K))
    else:
        out = sp_fft.irfftn(sp_fft.rfftn(pad) * sp_fft.rfftn(K), s=pad.shape)
    out = out[:nx, :ny, :nz]
    if not cplx:
        out = out.real
    return out * h ** 3


def convolve_direct(g: ScalarField, kind: str, param,
                    targets: np.ndarray | None = None) -> np.ndarray:
    """Direct pairwise summation; targets default to the whole lattice."""
    lat = g.lattice
    h = lat.spacing
    src_idx = np.argwhere(g.mask)
    gsrc = g.values[g.mask]
    if len(src_idx) == 0:
        if targets is None:
            return np.zeros(lat.dims, dtype=g.values.dtype)
        return np.zeros(len(targets), dtype=g.values.dtype)
    src_pts = np.asarray(lat.origin) + h * src_idx
    full_grid = targets is None
    tgt = lat.points() if full_grid else np.atleast_2d(targets)
    dtype = complex if (kind == "helmholtz" and param != 0) or g.is_complex else float
    out = np.empty(len(tgt), dtype=dtype)
    chunk = max(1, DIRECT_PAIR_LIMIT // max(1, len(src_pts)))
    for a in range(0, len(tgt), chunk):
        b = min(a + chunk, len(tgt))
        d = tgt[a:b, None, :] - src_pts[None, :, :]
        r = np.sqrt((d ** 2).sum(axis=2))
        out[a:b] = _kernel_values(r, kind, param, h) @ gsrc
    out *= h ** 3
    if full_grid:
        return out.reshape(lat.dims, order="F")
    return out


def lattice_convolve(g: ScalarField, kind: str, param, method: str = "auto") -> np.ndarray:
    """Kernel convolution over the lattice; returns a values array."""
    if method == "auto":
        pairs = int(g.mask.sum()) * g.lattice.n_points
        method = "direct" if pairs <= DIRECT_PAIR_LIMIT else "fft"
    if method == "direct":
        return convolve_direct(g, kind, param)
    if method == "fft":
        return convolve_fft(g, kind, param)
    raise ValueError(f"unknown convolution method {method!r}")
