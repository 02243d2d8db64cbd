"""Pseudospectral incompressible MHD with viscosity and zero magnetic diffusivity.

    b_t + u.grad b = b.grad u
    u_t + u.grad u - lap u + grad p = -grad |b|^2 / 2 + b.grad b,   div u = div b = 0

The viscous term is integrated exactly per mode (integrating factor) and the
transport terms by classical RK4. Products are formed on the grid and truncated
to the 2/3 band, so the state never leaves the dealiased band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .spectral import Grid3, Space, VectorField3

E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Flags:
    """Switches for verification runs."""

    advection: bool = True  # u.grad u and u.grad b
    coupling: bool = True  # b.grad b and b.grad u
    freeze_b: bool = False  # keep b at its initial value
    pressure: str = "projector"  # or "explicit"
    form: str = "divergence"  # products as d_j(a_j c_i), or "advective" (a . grad c)


@dataclass(frozen=True)
class MhdState:
    grid: Grid3
    bh: np.ndarray  # (3,) + fshape
    uh: np.ndarray
    t: float = 0.0

    @property
    def b(self) -> VectorField3:
        return VectorField3.from_array(self.grid, self.bh, Space.FOURIER)

    @property
    def u(self) -> VectorField3:
        return VectorField3.from_array(self.grid, self.uh, Space.FOURIER)

    @classmethod
    def from_fields(cls, b: VectorField3, u: VectorField3, t: float = 0.0) -> "MhdState":
        g = b.grid
        return cls(g, g.truncate(b.fourier()), g.truncate(u.fourier()), float(t))

    @classmethod
    def steady(cls, grid: Grid3) -> "MhdState":
        bh = np.zeros((3,) + grid.fshape, dtype=complex)
        bh[2, 0, 0, 0] = grid.npoints
        return cls(grid, bh, np.zeros_like(bh))

    def perturbation_hat(self) -> np.ndarray:
        """Fourier data of ``b - e3``."""
        out = self.bh.copy()
        out[2, 0, 0, 0] -= self.grid.npoints
        return out


def random_state(grid: Grid3, rng: np.random.Generator, eps: float, band: int = 3) -> MhdState:
    """``b = e3 + eps * bt``, ``u = eps * v`` with unit-L^2 solenoidal random ``bt`` and ``v``."""
    from .spectral import random_solenoidal_hat

    bt = random_solenoidal_hat(grid, rng, band)
    v = random_solenoidal_hat(grid, rng, band)
    st = MhdState.steady(grid)
    return MhdState(grid, st.bh + eps * bt, eps * v)


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------


def _advect(grid: Grid3, a: np.ndarray, grad_c: np.ndarray) -> np.ndarray:
    """``(a . grad) c`` in Fourier space, dealiased; ``grad_c[i, j] = d_j c^i`` physical."""
    return grid.truncate(grid.fft(np.einsum("j...,ij...->i...", a, grad_c)))


def _physical_gradient(grid: Grid3, vh: np.ndarray) -> np.ndarray:
    gh = np.stack([np.stack([grid.diff(vh[i], j) for j in range(3)]) for i in range(3)])
    return grid.ifft(gh)


def nonlinear_terms(state: MhdState, flags: Flags = Flags()) -> dict[str, np.ndarray]:
    """Dealiased ``u.grad u``, ``b.grad b``, ``b.grad u`` and ``u.grad b`` (Fourier)."""
    g = state.grid
    u = g.ifft(state.uh)
    b = g.ifft(state.bh)
    gu = _physical_gradient(g, state.uh)
    gb = _physical_gradient(g, state.bh)
    zero = np.zeros_like(state.uh)
    return {
        "u_grad_u": _advect(g, u, gu) if flags.advection else zero,
        "u_grad_b": _advect(g, u, gb) if flags.advection else zero,
        "b_grad_b": _advect(g, b, gb) if flags.coupling else zero,
        "b_grad_u": _advect(g, b, gu) if flags.coupling else zero,
        "b_phys": b,
    }


def pressure_gradient(state: MhdState, terms: dict | None = None) -> np.ndarray:
    """``grad p = -grad(|b|^2)/2 + grad (-lap)^{-1} div(u.grad u - b.grad b)``; mean of ``p`` is zero."""
    g = state.grid
    terms = terms or nonlinear_terms(state)
    bsq = g.truncate(g.fft(np.sum(terms["b_phys"] ** 2, axis=0)))
    w = terms["u_grad_u"] - terms["b_grad_b"]
    q = -g.inv_lap * g.div(w)  # (-lap)^{-1} div w
    p = -0.5 * bsq + q
    p[0, 0, 0] = 0.0
    return g.grad(p)


def _zero_mean(vh: np.ndarray) -> np.ndarray:
    vh = vh.copy()
    vh[:, 0, 0, 0] = 0.0
    return vh


_SYM = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_ANTI = ((0, 1), (0, 2), (1, 2))


def _divergence_form(state: MhdState) -> tuple[np.ndarray, np.ndarray]:
    """``b.grad u - u.grad b`` and ``b.grad b - u.grad u`` as divergences of products.

    For band-limited divergence-free fields the 2/3 truncation makes these equal to
    the advective products; they need 21 transforms instead of 36.
    """
    g = state.grid
    u = g.ifft(state.uh)
    b = g.ifft(state.bh)
    sym = np.stack([b[i] * b[j] - u[i] * u[j] for i, j in _SYM])
    anti = np.stack([u[i] * b[j] - b[i] * u[j] for i, j in _ANTI])
    S = g.truncate(g.fft(np.concatenate([sym, anti])))
    T = {}
    for n, (i, j) in enumerate(_SYM):
        T[i, j] = T[j, i] = S[n]
    W = {}
    for n, (i, j) in enumerate(_ANTI):
        W[i, j] = S[6 + n]
        W[j, i] = -S[6 + n]
    zero = np.zeros_like(state.uh[0])
    induction = np.stack([sum((g.diff(W[i, j], j) for j in range(3) if j != i), zero) for i in range(3)])
    momentum = np.stack([sum(g.diff(T[i, j], j) for j in range(3)) for i in range(3)])
    return induction, momentum


def rhs(state: MhdState, flags: Flags = Flags()) -> tuple[np.ndarray, np.ndarray]:
    """Transport parts of ``(db/dt, du/dt)``; the viscous term is left to the integrating factor.

    The zero modes are set to zero: both equations conserve the means exactly.
    """
    g = state.grid
    fast = (flags.form == "divergence" and flags.advection and flags.coupling
            and flags.pressure == "projector")
    if fast:
        induction, N = _divergence_form(state)
        db = np.zeros_like(state.bh) if flags.freeze_b else g.leray(_zero_mean(induction))
        return db, _zero_mean(g.leray(N))
    if flags.form not in ("divergence", "advective"):
        raise ValueError(f"unknown product form {flags.form!r}")
    terms = nonlinear_terms(state, flags)
    if flags.freeze_b:
        db = np.zeros_like(state.bh)
    else:
        db = g.leray(_zero_mean(terms["b_grad_u"] - terms["u_grad_b"]))
    N = terms["b_grad_b"] - terms["u_grad_u"]
    if flags.pressure == "projector":
        du = g.leray(N)
    elif flags.pressure == "explicit":
        bsq = g.truncate(g.fft(np.sum(terms["b_phys"] ** 2, axis=0)))
        du = N - 0.5 * g.grad(bsq) - pressure_gradient(state, terms)
    else:
        raise ValueError(f"unknown pressure form {flags.pressure!r}")
    return db, _zero_mean(du)


def full_rhs(state: MhdState, flags: Flags = Flags()) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side including the viscous term."""
    db, du = rhs(state, flags)
    return db, du + state.grid.lap(state.uh)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


class CflError(ValueError):
    def __init__(self, cfl: float, suggested_dt: float):
        super().__init__(f"CFL number {cfl:.3g} exceeds 0.5; try dt <= {suggested_dt:.3g}")
        self.cfl = cfl
        self.suggested_dt = suggested_dt


class SolverAbort(RuntimeError):
    def __init__(self, message: str, last_state):
        super().__init__(message)
        self.last_state = last_state


def cfl_number(state: MhdState, dt: float) -> float:
    u = state.grid.ifft(state.uh)
    umax = float(np.sqrt(np.sum(u**2, axis=0)).max())
    return dt * umax / min(state.grid.spacing)


def step(state: MhdState, dt: float, flags: Flags = Flags(), cfl_max: float = 0.5) -> MhdState:
    """One integrating-factor RK4 step (viscosity exact per mode)."""
    cfl = cfl_number(state, dt)
    if cfl > cfl_max:
        raise CflError(cfl, dt * cfl_max / cfl)
    g = state.grid
    half = np.exp(-g.ksq * (0.5 * dt))
    full = half * half

    def F(bh, uh):
        return rhs(MhdState(g, bh, uh, state.t), flags)

    b0, u0 = state.bh, state.uh
    k1b, k1u = F(b0, u0)
    k2b, k2u = F(b0 + 0.5 * dt * k1b, half * (u0 + 0.5 * dt * k1u))
    k3b, k3u = F(b0 + 0.5 * dt * k2b, half * u0 + 0.5 * dt * k2u)
    k4b, k4u = F(b0 + dt * k3b, full * u0 + dt * half * k3u)
    bn = b0 + dt / 6 * (k1b + 2 * k2b + 2 * k3b + k4b)
    un = full * u0 + dt / 6 * (full * k1u + 2 * half * (k2u + k3u) + k4u)
    if not flags.freeze_b:
        bn = g.leray(bn)
    un = g.leray(un)
    return MhdState(g, bn, un, state.t + dt)


# ---------------------------------------------------------------------------
# Monitors
# ---------------------------------------------------------------------------


def energy(state: MhdState) -> float:
    """``|b - e3|^2 + |u|^2``."""
    g = state.grid
    return g.norm2(state.perturbation_hat()) + g.norm2(state.uh)


def dissipation(state: MhdState) -> float:
    """``|grad u|^2``."""
    g = state.grid
    return float(sum(g.norm2(g.diff(state.uh[i], j)) for i in range(3) for j in range(3)))


def divergence_linf(grid: Grid3, vh: np.ndarray) -> float:
    return float(np.abs(grid.ifft(grid.div(vh))).max())


def tail_fraction(state: MhdState, shell: float = 0.8) -> float:
    """Fraction of the perturbation energy in the outer part of the retained band."""
    g = state.grid
    kmax = np.zeros(g.fshape)
    for a, k in enumerate(g.kint):
        kmax = np.maximum(kmax, np.abs(k) / (g.shape[a] // 3))
    outer = kmax > shell
    tot = energy(state)
    if tot == 0:
        return 0.0
    sub = np.where(outer, 1.0, 0.0)
    return (g.norm2(state.perturbation_hat() * sub) + g.norm2(state.uh * sub)) / tot


def blowup_values(state: MhdState) -> tuple[float, float]:
    """``(|grad u|_inf, |b|_inf^2)`` with the pointwise Frobenius norm of ``grad u``."""
    g = state.grid
    gu = _physical_gradient(g, state.uh)
    b = g.ifft(state.bh)
    return float(np.sqrt(np.sum(gu**2, axis=(0, 1))).max()), float(np.sum(b**2, axis=0).max())


MONITOR_COLUMNS = ("t", "energy", "dissipation", "div_u", "div_b", "grad_u_inf", "b_inf_sq",
                   "mean_u_inf", "mean_b_err", "tail")


def monitor_row(state: MhdState) -> dict[str, float]:
    g = state.grid
    gi, bi = blowup_values(state)
    mu = g.mean(state.uh)
    mb = g.mean(state.bh) - E3
    return {
        "t": state.t,
        "energy": energy(state),
        "dissipation": dissipation(state),
        "div_u": divergence_linf(g, state.uh),
        "div_b": divergence_linf(g, state.bh),
        "grad_u_inf": gi,
        "b_inf_sq": bi,
        "mean_u_inf": float(np.abs(mu).max()),
        "mean_b_err": float(np.abs(mb).max()),
        "tail": tail_fraction(state),
    }


@dataclass
class RunResult:
    snapshots: list[MhdState]
    monitors: dict[str, np.ndarray]
    aborted: str | None = None
    steps: int = 0

    def monitor_rows(self) -> list[dict[str, float]]:
        n = len(self.monitors["t"])
        return [{k: float(v[i]) for k, v in self.monitors.items()} for i in range(n)]


def run(state0: MhdState, dt: float, T: float, cadence: int = 1, flags: Flags = Flags(),
        monitor_every: int = 1, tail_tol: float = 1e-3, div_tol: float = 1e-10,
        raise_on_abort: bool = False) -> RunResult:
    """Advance to ``T``; snapshots every ``cadence`` steps, monitors every ``monitor_every`` steps.

    The run stops (keeping the last valid snapshot) on non-finite values, on
    divergence above ``div_tol`` or when the band tail fraction exceeds ``tail_tol``.
    """
    nsteps = int(round(T / dt))
    if not math.isclose(nsteps * dt, T, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError("T must be an integer multiple of dt")
    state = state0
    snaps = [state]
    rows = [monitor_row(state)]
    aborted = None
    n = 0
    for n in range(1, nsteps + 1):
        new = step(state, dt, flags)
        if not (np.all(np.isfinite(new.bh)) and np.all(np.isfinite(new.uh))):
            aborted = f"non-finite values at step {n}"
            break
        state = new
        if n % monitor_every == 0 or n % cadence == 0:
            row = monitor_row(state)
            rows.append(row)
            if row["div_u"] > div_tol or row["div_b"] > div_tol:
                aborted = f"divergence {max(row['div_u'], row['div_b']):.3g} above {div_tol:g} at step {n}"
            elif row["tail"] > tail_tol:
                aborted = f"band tail fraction {row['tail']:.3g} above {tail_tol:g} at step {n}"
        if n % cadence == 0:
            snaps.append(state)
        if aborted:
            break
    if aborted and raise_on_abort:
        raise SolverAbort(aborted, snaps[-1])
    monitors = {k: np.array([r[k] for r in rows]) for k in MONITOR_COLUMNS}
    return RunResult(snaps, monitors, aborted, n)


def energy_monitor(snapshots: list[MhdState]) -> dict[str, np.ndarray]:
    """Centered-difference residual of ``d/dt E/2 + |grad u|^2 = 0`` on uniformly spaced snapshots."""
    if len(snapshots) < 3:
        raise ValueError("need at least three snapshots")
    t = np.array([s.t for s in snapshots])
    dts = np.diff(t)
    if not np.allclose(dts, dts[0], rtol=1e-9):
        raise ValueError("snapshots must be uniformly spaced")
    E = np.array([energy(s) for s in snapshots])
    D = np.array([dissipation(s) for s in snapshots])
    dE = (E[2:] - E[:-2]) / (2 * dts[0])
    return {"t": t[1:-1], "residual": 0.5 * dE + D[1:-1], "energy": E, "dissipation": D}


def blowup_monitor(snapshots: list[MhdState]) -> dict[str, np.ndarray]:
    t = np.array([s.t for s in snapshots])
    vals = np.array([blowup_values(s) for s in snapshots])
    gi, bi = vals[:, 0], vals[:, 1]
    return {
        "t": t,
        "grad_u_inf": gi,
        "b_inf_sq": bi,
        "int_grad_u_inf": cumulative_trapezoid(gi, t, initial=0.0) if len(t) > 1 else np.zeros(1),
        "int_b_inf_sq": cumulative_trapezoid(bi, t, initial=0.0) if len(t) > 1 else np.zeros(1),
    }


def solution_norm(state: MhdState) -> float:
    return math.sqrt(energy(state))
