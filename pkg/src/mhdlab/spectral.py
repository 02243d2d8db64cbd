"""Periodic-box fields, real FFTs, spectral calculus and Fourier interpolation.

Conventions
-----------
* Samples sit at ``x_i = i * L / n`` on each axis, arrays are indexed ``[i1, i2, i3]``.
* Forward transform is unscaled ``rfftn`` over the three spatial axes (x3 is the
  halved axis); the inverse carries the ``1/N`` factor.
* ``||f||_{L^2}^2 = vol/N^2 * sum_full |f_hat|^2``. On the half spectrum the interior
  x3 planes are counted twice.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

TWO_PI = 2.0 * np.pi
_AXES = (-3, -2, -1)


def fft_workers() -> int:
    """Thread count for FFT kernels, read from ``MHDLAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MHDLAB_THREADS", "1")))
    except ValueError:
        return 1


class Space(str, enum.Enum):
    PHYSICAL = "physical"
    FOURIER = "fourier"


@dataclass(frozen=True)
class Grid3:
    """Uniform periodic grid with even sample counts (each at least 4)."""

    nx: int
    ny: int
    nz: int
    Lx: float = TWO_PI
    Ly: float = TWO_PI
    Lz: float = TWO_PI

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"{name}={n}: sample counts must be even integers >= 4")
        for name in ("Lx", "Ly", "Lz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    # -- geometry ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.Lx, self.Ly, self.Lz)

    @property
    def npoints(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def volume(self) -> float:
        return self.Lx * self.Ly * self.Lz

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def fshape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz // 2 + 1)

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable sample coordinates (x1, x2, x3)."""
        x1 = self.axis_coords(0)[:, None, None]
        x2 = self.axis_coords(1)[None, :, None]
        x3 = self.axis_coords(2)[None, None, :]
        return x1, x2, x3

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.broadcast_to(c, self.shape) for c in self.coords())

    def points(self) -> np.ndarray:
        """All sample points as an (N, 3) array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def signed(self, x: np.ndarray, axis: int) -> np.ndarray:
        """Wrap coordinates on ``axis`` into [-L/2, L/2)."""
        L = self.lengths[axis]
        return (np.asarray(x) + 0.5 * L) % L - 0.5 * L

    # -- wavenumbers ------------------------------------------------------
    @cached_property
    def kint(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k1 = sfft.fftfreq(self.nx, 1.0 / self.nx).round().astype(int)
        k2 = sfft.fftfreq(self.ny, 1.0 / self.ny).round().astype(int)
        k3 = sfft.rfftfreq(self.nz, 1.0 / self.nz).round().astype(int)
        return k1[:, None, None], k2[None, :, None], k3[None, None, :]

    @cached_property
    def xi(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(TWO_PI * k / L for k, L in zip(self.kint, self.lengths))

    @cached_property
    def xi_odd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers for odd-order derivatives (Nyquist entries zeroed)."""
        out = []
        for k, x, n in zip(self.kint, self.xi, self.shape):
            out.append(np.where(np.abs(k) == n // 2, 0.0, x))
        return tuple(out)

    @cached_property
    def _ixi_odd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(1j * x for x in self.xi_odd)

    @cached_property
    def ksq(self) -> np.ndarray:
        x1, x2, x3 = self.xi
        return x1**2 + x2**2 + x3**2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def khmag(self) -> np.ndarray:
        x1, x2, _ = self.xi
        return np.broadcast_to(np.sqrt(x1**2 + x2**2), self.fshape)

    @cached_property
    def k3mag(self) -> np.ndarray:
        return np.broadcast_to(np.abs(self.xi[2]), self.fshape)

    @cached_property
    def half_weights(self) -> np.ndarray:
        w = np.full(self.nz // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        m = np.ones(self.fshape, dtype=bool)
        for k, n in zip(self.kint, self.shape):
            m &= np.abs(k) <= n // 3
        return m

    @cached_property
    def inv_lap(self) -> np.ndarray:
        """Multiplier of the inverse Laplacian, zero on the mean mode."""
        with np.errstate(divide="ignore"):
            out = np.where(self.ksq > 0, -1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
        return out

    # -- array-level transforms and calculus -----------------------------
    def fft(self, a: np.ndarray) -> np.ndarray:
        return sfft.rfftn(a, axes=_AXES, workers=fft_workers())

    def ifft(self, ah: np.ndarray) -> np.ndarray:
        return sfft.irfftn(ah, s=self.shape, axes=_AXES, workers=fft_workers())

    def diff(self, ah: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
        """Spectral derivative along ``axis`` (0-based) of Fourier data."""
        if order < 0:
            raise ValueError("order must be nonnegative")
        if order == 0:
            return ah.copy()
        if order == 1:
            return ah * self._ixi_odd[axis]
        x = self.xi_odd[axis] if order % 2 else self.xi[axis]
        return ah * (1j * x) ** order

    def grad(self, ah: np.ndarray) -> np.ndarray:
        return np.stack([self.diff(ah, a) for a in range(3)])

    def div(self, vh: np.ndarray) -> np.ndarray:
        return sum(self.diff(vh[a], a) for a in range(3))

    def lap(self, ah: np.ndarray) -> np.ndarray:
        return -self.ksq * ah

    @cached_property
    def _leray_weight(self) -> np.ndarray:
        x = self.xi_odd
        k2 = x[0] ** 2 + x[1] ** 2 + x[2] ** 2
        return np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)

    def leray(self, vh: np.ndarray) -> np.ndarray:
        x = self.xi_odd
        proj = (x[0] * vh[0] + x[1] * vh[1] + x[2] * vh[2]) * self._leray_weight
        return np.stack([vh[a] - x[a] * proj for a in range(3)])

    def truncate(self, ah: np.ndarray) -> np.ndarray:
        return ah * self.dealias_mask

    def inner(self, ah: np.ndarray, bh: np.ndarray) -> float:
        """Real L^2 inner product from Fourier data (leading axes summed)."""
        s = np.sum(self.half_weights * (ah * np.conj(bh)).real)
        return float(s * self.volume / self.npoints**2)

    def norm2(self, ah: np.ndarray) -> float:
        return self.inner(ah, ah)

    def mean(self, ah: np.ndarray) -> np.ndarray:
        return ah[..., 0, 0, 0].real / self.npoints


# ---------------------------------------------------------------------------
# Field values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralField:
    """A real scalar field held either as samples or as half-spectrum coefficients."""

    grid: Grid3
    data: np.ndarray = field(repr=False)
    space: Space = Space.PHYSICAL

    def __post_init__(self):
        space = Space(self.space)
        object.__setattr__(self, "space", space)
        want = self.grid.shape if space is Space.PHYSICAL else self.grid.fshape
        if tuple(self.data.shape) != want:
            raise ValueError(f"data shape {self.data.shape} does not match grid {want}")

    @classmethod
    def from_function(cls, grid: Grid3, fn) -> "SpectralField":
        x1, x2, x3 = grid.mesh()
        return cls(grid, np.asarray(fn(x1, x2, x3), dtype=float) * np.ones(grid.shape))

    @classmethod
    def zeros(cls, grid: Grid3) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape))

    def physical(self) -> np.ndarray:
        return self.data if self.space is Space.PHYSICAL else self.grid.ifft(self.data)

    def fourier(self) -> np.ndarray:
        return self.data if self.space is Space.FOURIER else self.grid.fft(self.data)

    def to(self, space: Space | str) -> "SpectralField":
        return transform(self, space)


@dataclass(frozen=True)
class VectorField3:
    components: tuple[SpectralField, SpectralField, SpectralField]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != 3:
            raise ValueError("a vector field has exactly three components")
        g, s = comps[0].grid, comps[0].space
        if any(c.grid != g or c.space is not s for c in comps):
            raise ValueError("components must share grid and space tag")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> Grid3:
        return self.components[0].grid

    @property
    def space(self) -> Space:
        return self.components[0].space

    def __getitem__(self, i: int) -> SpectralField:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    @classmethod
    def from_array(cls, grid: Grid3, arr: np.ndarray, space: Space | str = Space.PHYSICAL):
        return cls(tuple(SpectralField(grid, arr[i], Space(space)) for i in range(3)))

    def physical(self) -> np.ndarray:
        return np.stack([c.physical() for c in self.components])

    def fourier(self) -> np.ndarray:
        return np.stack([c.fourier() for c in self.components])

    def to(self, space: Space | str) -> "VectorField3":
        return VectorField3(tuple(transform(c, space) for c in self.components))


# ---------------------------------------------------------------------------
# Field-level operations
# ---------------------------------------------------------------------------


def transform(f: SpectralField, target: Space | str) -> SpectralField:
    target = Space(target)
    if f.space is target:
        return f
    if target is Space.FOURIER:
        return SpectralField(f.grid, f.grid.fft(f.data), target)
    return SpectralField(f.grid, f.grid.ifft(f.data), target)


def derivative(f: SpectralField, axis: int, order: int = 1) -> SpectralField:
    """``(d/dx_axis)^order f`` with ``axis`` in {1, 2, 3}; result in Fourier space."""
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    return SpectralField(f.grid, f.grid.diff(f.fourier(), axis - 1, order), Space.FOURIER)


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, f.grid.lap(f.fourier()), Space.FOURIER)


def leray_project(v: VectorField3) -> VectorField3:
    return VectorField3.from_array(v.grid, v.grid.leray(v.fourier()), Space.FOURIER)


def divergence(v: VectorField3) -> SpectralField:
    return SpectralField(v.grid, v.grid.div(v.fourier()), Space.FOURIER)


def dealias(f):
    """Zero every mode with some ``|k_axis| > floor(n_axis/3)``."""
    if isinstance(f, VectorField3):
        return VectorField3(tuple(dealias(c) for c in f.components))
    return SpectralField(f.grid, f.grid.truncate(f.fourier()), Space.FOURIER)


def inner_product(f: SpectralField, g: SpectralField) -> float:
    return f.grid.inner(f.fourier(), g.fourier())


def sobolev_norm(f, s: float = 0.0, homogeneous: bool = True) -> float:
    """Sobolev norm of a scalar or vector field (vector: root-sum-square of components)."""
    if isinstance(f, VectorField3):
        return float(np.sqrt(sum(sobolev_norm(c, s, homogeneous) ** 2 for c in f)))
    g = f.grid
    ah = f.fourier()
    if homogeneous:
        if s < 0 and abs(ah[0, 0, 0]) > 1e-13 * max(1.0, np.abs(ah).max()):
            raise ValueError("homogeneous norm with s < 0 needs a mean-zero field")
        with np.errstate(divide="ignore"):
            mult = np.where(g.ksq > 0, np.where(g.ksq > 0, g.ksq, 1.0) ** s, 0.0)
    else:
        mult = (1.0 + g.ksq) ** s
    total = np.sum(g.half_weights * mult * np.abs(ah) ** 2)
    return float(np.sqrt(total * g.volume) / g.npoints)


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def _axis_basis(grid: Grid3, axis: int, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Trigonometric basis values (M, len(idx)) on one axis; Nyquist uses cosine."""
    k = grid.kint[axis].ravel()[idx]
    xi = TWO_PI * k / grid.lengths[axis]
    phase = np.outer(x, xi)
    out = np.exp(1j * phase)
    nyq = np.abs(k) == grid.shape[axis] // 2
    if np.any(nyq):
        out[:, nyq] = np.cos(phase[:, nyq])
    return out


def fourier_eval(grid: Grid3, hats: np.ndarray, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Evaluate the trigonometric interpolant of Fourier data at arbitrary points.

    ``hats`` has shape ``(F,) + grid.fshape``; returns ``(F, M)``. Only the band of
    nonzero coefficients enters, so dealiased data cost ``M * (2n/3)^3`` per field.
    """
    hats = np.asarray(hats)
    squeeze = hats.ndim == 3
    if squeeze:
        hats = hats[None]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = hats * grid.half_weights
    nz = c != 0
    i0 = np.nonzero(nz.any(axis=(0, 2, 3)))[0]
    i1 = np.nonzero(nz.any(axis=(0, 1, 3)))[0]
    i2 = np.nonzero(nz.any(axis=(0, 1, 2)))[0]
    nf, m = c.shape[0], pts.shape[0]
    out = np.zeros((nf, m))
    if len(i0) == 0:
        return out[0] if squeeze else out
    sub = c[:, i0][:, :, i1][:, :, :, i2] / grid.npoints
    n0, n1, n2 = len(i0), len(i1), len(i2)
    mat = sub.reshape(nf * n0 * n1, n2).T
    for start in range(0, m, chunk):
        p = pts[start : start + chunk]
        e0 = _axis_basis(grid, 0, i0, p[:, 0])
        e1 = _axis_basis(grid, 1, i1, p[:, 1])
        e2 = _axis_basis(grid, 2, i2, p[:, 2])
        t = (e2 @ mat).reshape(len(p), nf, n0, n1)
        t = np.einsum("mfab,mb->mfa", t, e1)
        out[:, start : start + chunk] = np.einsum("mfa,ma->fm", t, e0).real
    return out[0] if squeeze else out


def _trilinear(grid: Grid3, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(points)
    coords = np.stack([pts[:, a] / grid.spacing[a] for a in range(3)])
    return ndimage.map_coordinates(values, coords, order=1, mode="grid-wrap")


def sample_at(f, points, method: str = "fourier"):
    """Evaluate a field at points (shape (3,) or (M, 3)).

    ``method="fourier"`` is the exact trigonometric interpolant; ``"trilinear"`` is
    the cheap periodic fallback, second-order accurate in the grid spacing.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if isinstance(f, VectorField3):
        if method == "fourier":
            vals = fourier_eval(f.grid, f.fourier(), np.atleast_2d(pts))
        else:
            vals = np.stack([_trilinear(f.grid, c.physical(), pts) for c in f])
        return vals[:, 0] if single else vals
    if method == "fourier":
        vals = fourier_eval(f.grid, f.fourier(), np.atleast_2d(pts))
    elif method == "trilinear":
        vals = _trilinear(f.grid, f.physical(), pts)
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    return float(vals[0]) if single else vals


# ---------------------------------------------------------------------------
# Random band-limited data
# ---------------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) used for every random field."""
    return np.random.Generator(np.random.Philox(int(seed)))


def band_mask(grid: Grid3, band: int) -> np.ndarray:
    m = np.ones(grid.fshape, dtype=bool)
    for k in grid.kint:
        m &= np.abs(k) <= band
    return m


def random_hat(grid: Grid3, rng: np.random.Generator, band: int, count: int = 1,
               zero_mean: bool = True) -> np.ndarray:
    """Fourier data of ``count`` real random fields with every |k_axis| <= band.

    Amplitudes are normalized so that each field has unit L^2 norm.
    """
    mask = band_mask(grid, band)
    if band >= min(grid.shape) // 2:
        raise ValueError("band must stay below the Nyquist index")
    out = np.empty((count,) + grid.fshape, dtype=complex)
    for i in range(count):
        raw = (rng.standard_normal(grid.fshape) + 1j * rng.standard_normal(grid.fshape)) * mask
        if zero_mean:
            raw[0, 0, 0] = 0.0
        real = grid.ifft(raw)
        h = grid.fft(real)
        nrm = np.sqrt(grid.norm2(h))
        out[i] = h / nrm if nrm > 0 else h
    return out


def random_solenoidal_hat(grid: Grid3, rng: np.random.Generator, band: int) -> np.ndarray:
    """Unit-L^2 divergence-free random vector field with every |k_axis| <= band."""
    v = grid.leray(random_hat(grid, rng, band, 3))
    nrm = np.sqrt(grid.norm2(v))
    return v / nrm
