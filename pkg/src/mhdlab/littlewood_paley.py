"""Dyadic frequency blocks and the Besov, anisotropic and Chemin-Lerner norms.

Blocks act as Fourier multipliers: ``Delta_j`` uses ``phi(2^-j |xi|)``, the horizontal
and vertical variants use ``|xi_h|`` and ``|xi_3|``. On a torus the modes with
``xi_3 = 0`` belong to no vertical block; they are collected in a sentinel block
with index ``kmin - 1`` (likewise ``hmin - 1`` for ``xi_h = 0``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .spectral import Grid3, Space, SpectralField, VectorField3

INNER = 0.75  # chi == 1 below
OUTER = 4.0 / 3.0  # chi == 0 above
PHI_LO, PHI_HI = INNER, 2 * OUTER  # support of phi
PLATEAU = (OUTER, 2 * INNER)  # phi == 1 on [4/3, 3/2]


def _h(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a, b = _h(t), _h(1.0 - t)
    return np.where(t <= 0, 0.0, np.where(t >= 1, 1.0, a / np.where(a + b > 0, a + b, 1.0)))


@dataclass(frozen=True)
class DyadicProfile:
    """Radial cutoffs ``chi`` (support [0, 4/3]) and ``phi(t) = chi(t/2) - chi(t)``.

    ``mode="closed"`` evaluates the smooth-step formula; ``mode="table"`` uses a cubic
    spline through ``table_size`` samples of ``chi`` on [3/4, 4/3].
    """

    mode: str = "closed"
    table_size: int = 2**14

    def __post_init__(self):
        if self.mode not in ("closed", "table"):
            raise ValueError("mode must be 'closed' or 'table'")

    def _chi_closed(self, t):
        return 1.0 - smooth_step((np.asarray(t, dtype=float) - INNER) / (OUTER - INNER))

    def mesh(self) -> np.ndarray:
        return np.linspace(INNER, OUTER, self.table_size)

    @property
    def _spline(self):
        return _spline_for(self.table_size)

    def chi(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self.mode == "closed":
            return self._chi_closed(t)
        inside = (t > INNER) & (t < OUTER)
        out = np.where(t <= INNER, 1.0, 0.0)
        if np.any(inside):
            out = out.astype(float)
            out[inside] = self._spline(t[inside])
        return out

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        return self.chi(0.5 * t) - self.chi(t)

    def to_json(self) -> str:
        x = self.mesh()
        chi = self._chi_closed(x)
        return json.dumps({
            "generator": "chi(t) = 1 - S((t - 3/4)/(4/3 - 3/4)), S(u) = h(u)/(h(u)+h(1-u)), h(u) = exp(-1/u)",
            "phi": "phi(t) = chi(t/2) - chi(t)",
            "mesh": x.tolist(),
            "chi": chi.tolist(),
            "phi_mesh": (2 * x).tolist(),
            "phi_values": self.phi(2 * x).tolist(),
        })


@lru_cache(maxsize=4)
def _spline_for(n: int):
    x = np.linspace(INNER, OUTER, n)
    y = 1.0 - smooth_step((x - INNER) / (OUTER - INNER))
    return CubicSpline(x, y)


PROFILE = DyadicProfile()


def n0_from_support(lo: float = PHI_LO, hi: float = PHI_HI) -> int:
    """Smallest N0 such that Delta_j Delta_k^v vanishes whenever k > j + N0.

    Both cutoffs must overlap: lo 2^k <= |xi_3| <= |xi| <= hi 2^j, so the block is
    empty once lo 2^(N0+1) > hi.
    """
    n0 = 0
    while lo * 2 ** (n0 + 1) <= hi:
        n0 += 1
    return n0


N0 = n0_from_support()


def embedding_constant(tau2: float, n0: int = N0) -> float:
    """Geometric-series constant C with ``||a||_{B^{t1,t2}} <= C ||a||_{B^{t1+t2}_{2,1}}``."""
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")
    return 2.0 ** (n0 * tau2) / (1.0 - 2.0 ** (-tau2))


def besov_sobolev_multiplier(s: float, tau: np.ndarray, profile: DyadicProfile = PROFILE) -> np.ndarray:
    """``m(t) = sum_j 2^{2js} phi(2^-j t)^2 / t^{2s}``; 1-periodic in log2 t."""
    tau = np.asarray(tau, dtype=float)
    total = np.zeros_like(tau)
    for j in range(-3, 4):
        total += 2.0 ** (2 * j * s) * profile.phi(2.0 ** (-j) * tau) ** 2
    return total / tau ** (2 * s)


def ratio_bounds(s: float, profile: DyadicProfile = PROFILE, samples: int = 2**16) -> tuple[float, float]:
    """Interval containing ``||u||_{B^s_{2,2}} / ||u||_{H^s}`` for every mean-zero u."""
    tau = 2.0 ** np.linspace(0.0, 1.0, samples, endpoint=False)
    m = besov_sobolev_multiplier(s, tau, profile)
    return float(np.sqrt(m.min())), float(np.sqrt(m.max()))


# ---------------------------------------------------------------------------
# Index ranges and multipliers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockIndexRange:
    jmin: int
    jmax: int
    kmin: int
    kmax: int
    hmin: int
    hmax: int

    def js(self):
        return range(self.jmin, self.jmax + 1)

    def ks(self, sentinel: bool = True):
        return range(self.kmin - (1 if sentinel else 0), self.kmax + 1)

    def hs(self, sentinel: bool = True):
        return range(self.hmin - (1 if sentinel else 0), self.hmax + 1)


def _span(mags: np.ndarray) -> tuple[int, int]:
    nz = mags[mags > 0]
    lo = math.floor(math.log2(nz.min() / PHI_HI))
    hi = math.ceil(math.log2(nz.max() / PHI_LO))
    return lo, hi


@lru_cache(maxsize=32)
def block_range(grid: Grid3) -> BlockIndexRange:
    jlo, jhi = _span(np.asarray(grid.kmag))
    jlo = min(jlo, math.floor(math.log2(2 * math.pi / max(grid.lengths))) - 2)
    jhi = max(jhi, math.ceil(math.log2(math.pi * max(grid.shape) / min(grid.lengths))) + 2)
    klo, khi = _span(np.asarray(grid.k3mag))
    hlo, hhi = _span(np.asarray(grid.khmag))
    return BlockIndexRange(jlo, jhi, klo, khi, hlo, hhi)


def _magnitude(grid: Grid3, kind: str) -> np.ndarray:
    if kind == "isotropic":
        return grid.kmag
    if kind == "horizontal":
        return grid.khmag
    if kind == "vertical":
        return grid.k3mag
    raise ValueError(f"unknown block kind {kind!r}")


@lru_cache(maxsize=512)
def block_multiplier(grid: Grid3, kind: str, j: int, profile: DyadicProfile = PROFILE) -> np.ndarray:
    mag = _magnitude(grid, kind)
    rng = block_range(grid)
    sentinel = {"vertical": rng.kmin - 1, "horizontal": rng.hmin - 1}.get(kind)
    if sentinel is not None and j == sentinel:
        return (mag == 0).astype(float)
    return np.asarray(profile.phi(2.0 ** (-j) * mag))


@lru_cache(maxsize=256)
def lowpass_multiplier(grid: Grid3, kind: str, j: int, profile: DyadicProfile = PROFILE) -> np.ndarray:
    return np.asarray(profile.chi(2.0 ** (-j) * _magnitude(grid, kind)))


def _apply(f, mult):
    if isinstance(f, VectorField3):
        return VectorField3(tuple(_apply(c, mult) for c in f))
    return SpectralField(f.grid, f.fourier() * mult, Space.FOURIER)


def block(f, kind: str, j: int, profile: DyadicProfile = PROFILE):
    """``Delta_j`` (isotropic), ``Delta_j^h`` or ``Delta_j^v`` applied to a field."""
    return _apply(f, block_multiplier(f.grid, kind, j, profile))


def low_pass(f, kind: str, j: int, profile: DyadicProfile = PROFILE):
    return _apply(f, lowpass_multiplier(f.grid, kind, j, profile))


def aniso_block(f, j: int, k: int, profile: DyadicProfile = PROFILE):
    """``Delta_j Delta_k^v f``."""
    g = f.grid
    return _apply(f, block_multiplier(g, "isotropic", j, profile) * block_multiplier(g, "vertical", k, profile))


# ---------------------------------------------------------------------------
# Batched block energies (p = 2)
# ---------------------------------------------------------------------------


def _hat_stack(f) -> np.ndarray:
    if isinstance(f, VectorField3):
        return f.fourier()
    if isinstance(f, SpectralField):
        return f.fourier()[None]
    arr = np.asarray(f)
    return arr if arr.ndim == 4 else arr[None]


def mode_energy(grid: Grid3, hats: np.ndarray) -> np.ndarray:
    """Per-mode L^2 energy on the half spectrum, summed over leading components."""
    e = np.abs(hats) ** 2 * grid.half_weights
    e = e.reshape((-1,) + grid.fshape).sum(axis=0)
    return e * grid.volume / grid.npoints**2


@lru_cache(maxsize=16)
def _iso_weights(grid: Grid3, profile: DyadicProfile = PROFILE) -> tuple[np.ndarray, np.ndarray]:
    rng = block_range(grid)
    js = np.array(list(rng.js()))
    w = np.stack([block_multiplier(grid, "isotropic", int(j), profile).ravel() ** 2 for j in js])
    return js, w


@lru_cache(maxsize=16)
def _aniso_weights(grid: Grid3, profile: DyadicProfile = PROFILE):
    rng = block_range(grid)
    pairs = [(j, k) for j in rng.js() for k in rng.ks() if k <= j + N0]
    rows = []
    for j, k in pairs:
        m = block_multiplier(grid, "isotropic", j, profile) * block_multiplier(grid, "vertical", k, profile)
        rows.append(m.ravel() ** 2)
    return np.array(pairs, dtype=int).reshape(-1, 2), np.stack(rows)


def iso_block_energies(f, grid: Grid3 | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(js, ||Delta_j f||_2^2)`` over the block range."""
    grid = grid or f.grid
    js, w = _iso_weights(grid)
    return js, w @ mode_energy(grid, _hat_stack(f)).ravel()


def aniso_block_energies(f, grid: Grid3 | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(pairs, ||Delta_j Delta_k^v f||_2^2)`` for pairs with k <= j + N0."""
    grid = grid or f.grid
    pairs, w = _aniso_weights(grid)
    return pairs, w @ mode_energy(grid, _hat_stack(f)).ravel()


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def _check_exp(name: str, v: float):
    if not (1 <= v <= math.inf):
        raise ValueError(f"{name}={v} must lie in [1, inf]")


def lp_norm(grid: Grid3, values: np.ndarray, p: float) -> float:
    """Midpoint-rule L^p norm of samples; vector samples use the pointwise Euclidean length."""
    v = np.abs(values) if values.ndim == 3 else np.sqrt(np.sum(values**2, axis=0))
    if p == math.inf:
        return float(v.max())
    return float((np.sum(v**p) * grid.volume / grid.npoints) ** (1.0 / p))


def lr_sum(weighted: np.ndarray, r: float) -> float:
    weighted = np.asarray(weighted, dtype=float)
    if weighted.size == 0:
        return 0.0
    if r == math.inf:
        return float(weighted.max())
    return float(np.sum(weighted**r) ** (1.0 / r))


def iso_block_lp(f, p: float) -> tuple[np.ndarray, np.ndarray]:
    """``(js, ||Delta_j f||_{L^p})``."""
    if p == 2:
        js, e = iso_block_energies(f)
        return js, np.sqrt(np.maximum(e, 0.0))
    grid = f.grid
    hats = _hat_stack(f)
    js = np.array(list(block_range(grid).js()))
    vals = []
    for j in js:
        m = block_multiplier(grid, "isotropic", int(j))
        samples = grid.ifft(hats * m)
        vals.append(lp_norm(grid, samples[0] if samples.shape[0] == 1 else samples, p))
    return js, np.array(vals)


def besov_norm(f, s: float, p: float = 2, r: float = 2) -> float:
    """Homogeneous ``B^s_{p,r}`` norm over the active block range."""
    _check_exp("p", p)
    _check_exp("r", r)
    js, vals = iso_block_lp(f, p)
    return lr_sum(2.0 ** (js * s) * vals, r)


def aniso_norm(f, s1: float, s2: float) -> float:
    """``sum_{j,k} 2^{j s1} 2^{k s2} ||Delta_j Delta_k^v f||_{L^2}`` (pairs k > j + N0 skipped)."""
    pairs, e = aniso_block_energies(f)
    w = 2.0 ** (pairs[:, 0] * s1 + pairs[:, 1] * s2)
    return float(np.sum(w * np.sqrt(np.maximum(e, 0.0))))


def time_norm(values: np.ndarray, times: np.ndarray, q: float) -> np.ndarray:
    """Trapezoid ``L^q`` norm in time along axis 0 (``q = inf`` is the max)."""
    values = np.abs(np.asarray(values, dtype=float))
    if q == math.inf:
        return values.max(axis=0)
    if len(times) < 2:
        return np.zeros(values.shape[1:])
    return np.trapezoid(values**q, np.asarray(times), axis=0) ** (1.0 / q)


def chemin_lerner_norm(series, times, q: float, s: float, p: float = 2, r: float = 2,
                       s2: float | None = None) -> float:
    """Block-then-time norm.

    With ``s2 is None`` this is ``L~^q_T(B^s_{p,r})``; otherwise ``L~^q_T(B^{s, s2})``
    (anisotropic, p = 2 and r = 1 by definition).
    """
    series = list(series)
    if not series:
        raise ValueError("empty time series")
    _check_exp("q", q)
    times = np.asarray(times, dtype=float)
    if len(times) != len(series):
        raise ValueError("times and series lengths differ")
    if len(times) > 2 and not np.allclose(np.diff(times), times[1] - times[0], rtol=1e-9, atol=0):
        raise ValueError("time grid must be uniform")
    if s2 is None:
        _check_exp("p", p)
        _check_exp("r", r)
        rows = []
        for f in series:
            js, v = iso_block_lp(f, p)
            rows.append(v)
        per_block = time_norm(np.array(rows), times, q)
        return lr_sum(2.0 ** (js * s) * per_block, r)
    rows = []
    for f in series:
        pairs, e = aniso_block_energies(f)
        rows.append(np.sqrt(np.maximum(e, 0.0)))
    per_block = time_norm(np.array(rows), times, q)
    w = 2.0 ** (pairs[:, 0] * s + pairs[:, 1] * s2)
    return float(np.sum(w * per_block))


# ---------------------------------------------------------------------------
# Bernstein inequalities
# ---------------------------------------------------------------------------


def _horizontal_derivative_norm(grid: Grid3, ah: np.ndarray, order: int) -> float:
    """L^2 norm of the full tensor of order-``order`` horizontal derivatives."""
    return math.sqrt(grid.norm2(ah * grid.khmag**order))


def bernstein_check(f: SpectralField, k: int, orders=(1, 2)) -> list[dict]:
    """Empirical Bernstein constants for a field living in the horizontal shell ``k``.

    Rows carry ``empirical``, ``bound`` and ``ok``. Direct bounds are
    ``||d^a f|| <= (8/3)^{|a|} 2^{k|a|} ||f||``; the reverse bound is
    ``||f|| <= 2^{-kN} (4/3)^N ||grad_h^N f||``.
    """
    grid = f.grid
    ah = f.fourier()
    nrm = math.sqrt(grid.norm2(ah))
    rows = []
    live = np.abs(ah) > 1e-14 * (np.abs(ah).max() + 1e-300)
    kh = grid.khmag[live]
    in_shell = bool(np.all((kh >= PHI_LO * 2.0**k - 1e-12) & (kh <= PHI_HI * 2.0**k + 1e-12)))
    rows.append({"check": "support_in_shell", "empirical": float(in_shell), "bound": 1.0, "ok": in_shell})
    if nrm == 0:
        return rows
    for n in orders:
        for a1 in range(n + 1):
            a2 = n - a1
            d = grid.diff(grid.diff(ah, 0, a1), 1, a2)
            emp = math.sqrt(grid.norm2(d)) / (2.0 ** (k * n) * nrm)
            bound = PHI_HI**n
            rows.append({"check": f"direct_d1^{a1}d2^{a2}", "empirical": emp, "bound": bound,
                         "ok": emp <= bound * (1 + 1e-12)})
        full = _horizontal_derivative_norm(grid, ah, n)
        emp = (2.0 ** (k * n) * nrm / full) ** (1.0 / n) if full > 0 else math.inf
        bound = 1.0 / PHI_LO
        rows.append({"check": f"reverse_N{n}", "empirical": emp, "bound": bound,
                     "ok": emp <= bound * (1 + 1e-12)})
    d3 = math.sqrt(grid.norm2(grid.diff(ah, 2, 1)))
    rows.append({"check": "vertical_derivative_norm", "empirical": d3, "bound": math.inf, "ok": True})
    return rows
