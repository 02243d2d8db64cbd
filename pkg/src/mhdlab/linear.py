"""Degenerate damped linear system ``Y_tt - Delta Y_t - d3^2 Y = f``.

Per Fourier mode this is ``y'' + a y' + c y = f`` with ``a = |xi|^2`` and
``c = xi_3^2``. Everything here works on half-spectrum coefficient arrays; the
public functions wrap them in :class:`LinearState`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import littlewood_paley as lp
from .spectral import Grid3, Space, VectorField3

DEGENERATE_TOL = 1e-9
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


# ---------------------------------------------------------------------------
# Eigenvalues
# ---------------------------------------------------------------------------


def roots(a, c):
    """Roots of ``l^2 + a l + c = 0`` for ``a > 0``; returns (lam_plus, lam_minus, degenerate).

    Real roots: ``lam_plus`` is the larger-magnitude root and ``lam_minus = c/lam_plus``.
    Complex roots: ``lam_plus`` carries the positive imaginary part.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    disc = a * a - 4.0 * c
    degenerate = np.abs(disc) <= DEGENERATE_TOL * a * a
    real = (disc >= 0) & ~degenerate
    sq = np.sqrt(np.abs(disc))
    lp_real = -(a + sq) / 2.0
    safe = np.where(lp_real != 0, lp_real, 1.0)
    lm_real = c / safe + 0.0
    lp_cplx = (-a + 1j * sq) / 2.0
    lm_cplx = (-a - 1j * sq) / 2.0
    lam_p = np.where(real, lp_real + 0j, lp_cplx)
    lam_m = np.where(real, lm_real + 0j, lm_cplx)
    lam_p = np.where(degenerate, -a / 2.0 + 0j, lam_p)
    lam_m = np.where(degenerate, -a / 2.0 + 0j, lam_m)
    return lam_p, lam_m, degenerate


@dataclass(frozen=True)
class ModeSpectrum:
    xi: tuple[float, float, float]
    lam_plus: complex
    lam_minus: complex
    degenerate: bool


def eigenvalues(xi) -> ModeSpectrum:
    xi = tuple(float(v) for v in xi)
    a = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    if a == 0:
        raise ValueError("xi = 0: the symbol reduces to lambda^2 = 0")
    lp_, lm_, deg = roots(a, xi[2] ** 2)
    return ModeSpectrum(xi, complex(lp_), complex(lm_), bool(deg))


def decay_scan(direction, magnitudes) -> list[dict]:
    """Rows ``{"k", "re", "im"}`` of ``lambda_-`` along a direction."""
    d = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(d)
    if not np.isclose(nrm, 1.0, rtol=0, atol=1e-12):
        raise ValueError("direction must be a unit vector")
    rows = []
    for m in magnitudes:
        sp = eigenvalues(m * d)
        rows.append({"k": float(m), "re": sp.lam_minus.real, "im": sp.lam_minus.imag})
    return rows


def approaches_monotonically(rows: list[dict], limit: float) -> bool:
    """True when ``|Re lambda_- - limit|`` is non-increasing along the rows."""
    gaps = [abs(r["re"] - limit) for r in rows]
    return all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))


# ---------------------------------------------------------------------------
# Propagator coefficients
# ---------------------------------------------------------------------------


def _e1(z):
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def _e2(z):
    """(e^z - 1 - z) / z^2."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 0.1
    zs = z[small]
    acc = np.zeros_like(zs)
    term = np.ones_like(zs) / 2.0
    for n in range(14):
        acc += term
        term = term * zs / (n + 3)
    out[small] = acc
    zb = z[~small]
    out[~small] = (np.expm1(zb) - zb) / zb**2
    return out


def propagator_coefficients(a, c, t: float) -> dict[str, np.ndarray]:
    """Exact solution operator of ``y'' + a y' + c y = f`` over time ``t``.

    Returns the homogeneous map ``p11, p12, p21, p22`` on ``(y, y')`` and the
    Duhamel responses: constant forcing adds ``(H, G)``, the ramp ``f(s) = s/t``
    adds ``(H2/t, H/t)``. ``a = 0`` is the undamped zero mode.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    a, c = np.broadcast_arrays(a, c)
    shape = a.shape
    a, c = a.ravel(), c.ravel()
    t = float(t)
    out = {k: np.zeros(a.shape) for k in ("p11", "p12", "p21", "p22", "G", "H", "H2")}
    zero = a == 0
    out["p11"][zero] = 1.0
    out["p12"][zero] = t
    out["p22"][zero] = 1.0
    out["G"][zero] = t
    out["H"][zero] = t * t / 2
    out["H2"][zero] = t**3 / 6
    live = ~zero
    if np.any(live) and t != 0:
        aa, cc = a[live], c[live]
        lp_, lm_, _ = roots(aa, cc)
        delta = lp_ - lm_
        em = np.exp(lm_ * t)
        ep = np.exp(lp_ * t)
        G = t * em * _e1(delta * t)
        Gp = ep + lm_ * G
        p11 = em - lm_ * G
        H = np.empty_like(G)
        H2 = np.empty_like(G)
        quad = np.abs(lp_) * t <= 2.0
        sep = ~quad & (np.abs(delta) >= 0.25 * np.abs(lp_))
        close = ~quad & ~sep
        if np.any(quad):
            tau = 0.5 * t * (1 + _GL_X)[None, :]
            w = 0.5 * t * _GL_W[None, :]
            lq, dq = lm_[quad][:, None], delta[quad][:, None]
            gq = tau * np.exp(lq * tau) * _e1(dq * tau)
            H[quad] = np.sum(w * gq, axis=1)
            H2[quad] = np.sum(w * (t - tau) * gq, axis=1)
        if np.any(sep):
            l1, l2, d = lp_[sep], lm_[sep], delta[sep]
            H[sep] = t * (_e1(l1 * t) - _e1(l2 * t)) / d
            H2[sep] = t * t * (_e2(l1 * t) - _e2(l2 * t)) / d
        if np.any(close):
            ac, cc_ = aa[close], cc[close]
            H[close] = (1.0 - Gp[close] - ac * G[close]) / cc_
            H2[close] = (t - G[close] - ac * H[close]) / cc_
        out["p11"][live] = p11.real
        out["p12"][live] = G.real
        out["p21"][live] = (-cc * G).real
        out["p22"][live] = Gp.real
        out["G"][live] = G.real
        out["H"][live] = H.real
        out["H2"][live] = H2.real
    elif np.any(live):
        out["p11"][live] = 1.0
        out["p22"][live] = 1.0
    return {k: v.reshape(shape) for k, v in out.items()}


@dataclass(frozen=True)
class ModalMap:
    """Exact one-mode step: ``(y, y') -> matrix @ (y, y') + duhamel``."""

    matrix: np.ndarray
    duhamel: np.ndarray
    spectrum: ModeSpectrum | None

    def apply(self, y: complex, v: complex) -> tuple[complex, complex]:
        r = self.matrix @ np.array([y, v], dtype=complex) + self.duhamel
        return complex(r[0]), complex(r[1])


def modal_propagator(xi, dt: float, forcing=(0.0, None)) -> ModalMap:
    """Exact propagator for one mode with forcing linear in time.

    ``forcing = (f0, f1)`` gives the forcing at the start and end of the step;
    ``f1 = None`` means constant forcing ``f0``.
    """
    xi = tuple(float(v) for v in xi)
    a = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    coef = propagator_coefficients(a, xi[2] ** 2, dt)
    co = {k: float(v) for k, v in coef.items()}
    mat = np.array([[co["p11"], co["p12"]], [co["p21"], co["p22"]]], dtype=complex)
    f0, f1 = forcing
    f0 = complex(f0)
    f1 = f0 if f1 is None else complex(f1)
    duh = np.array([co["H"] * f0, co["G"] * f0], dtype=complex)
    if dt != 0 and f1 != f0:
        duh += np.array([co["H2"] / dt, co["H"] / dt]) * (f1 - f0)
    return ModalMap(mat, duh, eigenvalues(xi) if a > 0 else None)


class GridPropagator:
    """Propagator coefficients over a grid's half spectrum, computed per distinct (|xi|^2, xi_3^2)."""

    def __init__(self, grid: Grid3, t: float):
        self.grid = grid
        self.t = float(t)
        a = np.broadcast_to(grid.ksq, grid.fshape).ravel()
        c = np.broadcast_to(grid.xi[2] ** 2, grid.fshape).ravel()
        pairs, inverse = np.unique(np.stack([a, c], axis=1), axis=0, return_inverse=True)
        coef = propagator_coefficients(pairs[:, 0], pairs[:, 1], self.t)
        inverse = inverse.ravel()
        self.coef = {k: v[inverse].reshape(grid.fshape) for k, v in coef.items()}

    def apply(self, yh: np.ndarray, vh: np.ndarray, f0: np.ndarray | None = None,
              f1: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        c = self.coef
        y = c["p11"] * yh + c["p12"] * vh
        v = c["p21"] * yh + c["p22"] * vh
        if f0 is not None:
            y = y + c["H"] * f0
            v = v + c["G"] * f0
            if f1 is not None and self.t != 0:
                df = f1 - f0
                y = y + c["H2"] / self.t * df
                v = v + c["H"] / self.t * df
        return y, v


# ---------------------------------------------------------------------------
# States and solvers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearState:
    Y: VectorField3
    Yt: VectorField3
    t: float = 0.0

    @property
    def grid(self) -> Grid3:
        return self.Y.grid

    @classmethod
    def from_hats(cls, grid: Grid3, yh: np.ndarray, vh: np.ndarray, t: float = 0.0) -> "LinearState":
        return cls(VectorField3.from_array(grid, yh, Space.FOURIER),
                   VectorField3.from_array(grid, vh, Space.FOURIER), float(t))

    def hats(self) -> tuple[np.ndarray, np.ndarray]:
        return self.Y.fourier(), self.Yt.fourier()


def _forcing_hat(forcing, grid: Grid3):
    if forcing is None:
        return None
    if isinstance(forcing, VectorField3):
        return forcing.fourier()
    return np.asarray(forcing)


def solve_linear_exact(state0: LinearState, forcing=None, times=(1.0,)) -> list[LinearState]:
    """Exact states at the requested times for time-independent forcing."""
    grid = state0.grid
    yh, vh = state0.hats()
    fh = _forcing_hat(forcing, grid)
    out = []
    for t in times:
        prop = GridPropagator(grid, t - state0.t)
        y, v = prop.apply(yh, vh, fh)
        out.append(LinearState.from_hats(grid, y, v, t))
    return out


def rk4_stability_ok(grid: Grid3, dt: float) -> bool:
    lp_, _, _ = roots(np.maximum(grid.ksq.ravel(), 1e-300), (grid.xi[2] ** 2 * np.ones(grid.fshape)).ravel())
    return bool(np.max(np.abs(lp_)) * dt <= 2.78)


def solve_linear_timestep(state0: LinearState, forcing=None, dt: float = 1e-3, T: float = 1.0,
                          record_every: int | None = None, scheme: str = "RK4"):
    """Classical RK4 on the first-order system; returns (trajectory, report)."""
    if scheme.upper() != "RK4":
        raise ValueError("only RK4 is provided")
    grid = state0.grid
    yh, vh = state0.hats()
    fh = _forcing_hat(forcing, grid)
    a = grid.ksq
    c = grid.xi[2] ** 2
    nsteps = int(round(T / dt))
    if not math.isclose(nsteps * dt, T, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError("T must be an integer multiple of dt")
    record_every = record_every or nsteps

    def rhs(y, v):
        acc = -a * v - c * y
        if fh is not None:
            acc = acc + fh
        return v, acc

    traj = [LinearState.from_hats(grid, yh, vh, state0.t)]
    y, v = yh.copy(), vh.copy()
    for n in range(1, nsteps + 1):
        k1y, k1v = rhs(y, v)
        k2y, k2v = rhs(y + 0.5 * dt * k1y, v + 0.5 * dt * k1v)
        k3y, k3v = rhs(y + 0.5 * dt * k2y, v + 0.5 * dt * k2v)
        k4y, k4v = rhs(y + dt * k3y, v + dt * k3v)
        y = y + dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if n % record_every == 0:
            traj.append(LinearState.from_hats(grid, y, v, state0.t + n * dt))
    report = {"steps": nsteps, "dt": dt, "stable": rk4_stability_ok(grid, dt)}
    if not report["stable"]:
        report["warning"] = "dt exceeds the RK4 real-axis stability bound for the fastest mode"
    return traj, report


def relative_l2_error(a: LinearState, b: LinearState) -> float:
    g = a.grid
    ya, va = a.hats()
    yb, vb = b.hats()
    num = g.norm2(ya - yb) + g.norm2(va - vb)
    den = g.norm2(yb) + g.norm2(vb)
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)


# ---------------------------------------------------------------------------
# Frequency-localized energy
# ---------------------------------------------------------------------------


def regime(j: int, k: int) -> str:
    """``Low`` when ``j <= (k+1)/2`` (exact rational comparison), else ``High``."""
    return "Low" if 2 * j <= k + 1 else "High"


def _block_mult(grid: Grid3, j: int, k: int) -> np.ndarray:
    return lp.block_multiplier(grid, "isotropic", j) * lp.block_multiplier(grid, "vertical", k)


def block_terms(grid: Grid3, yh, vh, j: int, k: int, fh=None) -> dict[str, float]:
    """All quadratic quantities of the block energy for ``Delta_j Delta_k^v``."""
    m = _block_mult(grid, j, k)
    a = grid.ksq
    c = grid.xi[2] ** 2
    y, v = yh * m, vh * m
    ip = grid.inner
    out = {
        "Yt2": ip(v, v),
        "d3Y2": ip(np.sqrt(c) * y, np.sqrt(c) * y),
        "lapY2": ip(a * y, a * y),
        "cross": -ip(v, a * y),  # (Delta_j Delta_k Y_t | Delta Delta_j Delta_k Y)
        "gradYt2": ip(np.sqrt(a) * v, np.sqrt(a) * v),
        "d3gradY2": ip(np.sqrt(a * c) * y, np.sqrt(a * c) * y),
    }
    out["g2"] = 0.5 * (out["Yt2"] + out["d3Y2"] + 0.25 * out["lapY2"]) - 0.25 * out["cross"]
    out["dissipation"] = 0.75 * out["gradYt2"] + 0.25 * out["d3gradY2"]
    if fh is None:
        out["rhs"] = 0.0
    else:
        f = fh * m
        out["rhs"] = ip(f, v) + 0.25 * ip(f, a * y)
    return out


def block_energy(state: LinearState, j: int, k: int) -> tuple[float, str]:
    yh, vh = state.hats()
    return block_terms(state.grid, yh, vh, j, k)["g2"], regime(j, k)


def energy_identity_residual(trajectory: list[LinearState], j: int, k: int, forcing=None) -> dict:
    """Centered-difference residual of the block energy identity at interior snapshots."""
    if len(trajectory) < 3:
        raise ValueError("need at least three snapshots")
    times = np.array([s.t for s in trajectory])
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-14):
        raise ValueError("snapshots must be uniformly spaced")
    grid = trajectory[0].grid
    fh = _forcing_hat(forcing, grid)
    terms = [block_terms(grid, *s.hats(), j, k, fh) for s in trajectory]
    g2 = np.array([t["g2"] for t in terms])
    diss = np.array([t["dissipation"] for t in terms])
    rhs = np.array([t["rhs"] for t in terms])
    dg = (g2[2:] - g2[:-2]) / (2 * dt)
    res = np.abs(dg + diss[1:-1] - rhs[1:-1])
    scale = float(np.max(np.abs(diss[1:-1]) + np.abs(rhs[1:-1]))) or 1.0
    return {"times": times[1:-1], "residual": res, "max": float(res.max()), "scale": scale,
            "g2": g2, "dissipation": diss, "rhs": rhs}


def identity_convergence(state0: LinearState, forcing, j: int, k: int, T: float, dt: float,
                         levels: int = 3) -> dict:
    """Max identity residual for dt, dt/2, ... on exact trajectories, with observed orders."""
    maxima, dts = [], []
    for lvl in range(levels):
        h = dt / 2**lvl
        n = int(round(T / h))
        times = [state0.t + i * h for i in range(n + 1)]
        traj = solve_linear_exact(state0, forcing, times)
        maxima.append(energy_identity_residual(traj, j, k, forcing)["max"])
        dts.append(h)
    orders = [math.log2(maxima[i] / maxima[i + 1]) for i in range(levels - 1)]
    return {"dt": dts, "max_residual": maxima, "orders": orders}


def fit_decay_rate(times, values) -> float:
    """Least-squares slope of ``log(values)`` against time (negative for decay)."""
    t = np.asarray(times, dtype=float)
    v = np.log(np.asarray(values, dtype=float))
    A = np.stack([t, np.ones_like(t)], axis=1)
    slope, _ = np.linalg.lstsq(A, v, rcond=None)[0]
    return float(slope)
