"""Lagrangian MHD: ``Y_tt - lap Y_t - d3^2 Y = f(Y, q)`` with ``grad_Y . Y_t = 0``.

The linear part is propagated exactly per mode; the forcing
``f = (grad_Y . grad_Y - lap) Y_t - grad_Y q`` enters through a second-order
exponential Runge-Kutta (Duhamel) step, with ``q`` re-solved at each stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    cofactor_from_gradient,
    cofactor_rate,
    det_from_gradient,
    invert_map,
    rho_from_gradient,
    sup_norm_gradient,
    DisplacementField,
)
from .linear import GridPropagator
from .littlewood_paley import chemin_lerner_norm, time_norm, aniso_norm
from .spectral import Grid3, Space, SpectralField, VectorField3, fourier_eval, sobolev_norm

INVARIANT_TOLERANCES = {"det": 1e-7, "div": 1e-8, "rho": 1e-7}


@dataclass(frozen=True)
class LagrangianState:
    grid: Grid3
    yh: np.ndarray  # (3,) + fshape
    vh: np.ndarray  # Y_t
    qh: np.ndarray | None = None  # zero-mean pressure at this state, once solved
    t: float = 0.0

    @property
    def Y(self) -> VectorField3:
        return VectorField3.from_array(self.grid, self.yh, Space.FOURIER)

    @property
    def Yt(self) -> VectorField3:
        return VectorField3.from_array(self.grid, self.vh, Space.FOURIER)

    @property
    def q(self) -> SpectralField:
        if self.qh is None:
            raise ValueError("pressure not solved for this state")
        return SpectralField(self.grid, self.qh, Space.FOURIER)

    @classmethod
    def zero(cls, grid: Grid3) -> "LagrangianState":
        z = np.zeros((3,) + grid.fshape, dtype=complex)
        return cls(grid, z, z.copy(), np.zeros(grid.fshape, dtype=complex))


# ---------------------------------------------------------------------------
# Pointwise kinematics
# ---------------------------------------------------------------------------


def _grad(grid: Grid3, vh: np.ndarray) -> np.ndarray:
    """Physical ``G[i, j] = d_j v^i``."""
    return grid.ifft(np.stack([np.stack([grid.diff(vh[i], j) for j in range(3)]) for i in range(3)]))


def _hat(grid: Grid3, values: np.ndarray) -> np.ndarray:
    return grid.truncate(grid.fft(values))


@dataclass
class Kinematics:
    """Gradients and cofactor data of one state, shared by the pressure solve and the source."""

    grid: Grid3
    M: np.ndarray  # grad Y
    Mt: np.ndarray  # grad Y_t
    A: np.ndarray  # cofactor matrix b_ij
    At: np.ndarray  # its time derivative
    B: np.ndarray  # A A^T - I

    @classmethod
    def of(cls, grid: Grid3, yh: np.ndarray, vh: np.ndarray) -> "Kinematics":
        M = _grad(grid, yh)
        Mt = _grad(grid, vh)
        A = cofactor_from_gradient(M)
        At = cofactor_rate(M, Mt)
        B = np.einsum("ik...,jk...->ij...", A, A) - np.eye(3).reshape(3, 3, 1, 1, 1)
        return cls(grid, M, Mt, A, At, B)


# ---------------------------------------------------------------------------
# Pressure
# ---------------------------------------------------------------------------


class PressureError(RuntimeError):
    pass


@dataclass(frozen=True)
class PressureSolution:
    qh: np.ndarray
    iterations: int
    increment: float
    contraction: float


def pressure_sources(grid: Grid3, yh: np.ndarray, vh: np.ndarray, kin: Kinematics | None = None) -> np.ndarray:
    """``div(dA/dt Y_t) + grad_Y . d3^2 Y`` in Fourier space (the latter as ``div(A d3^2 Y)``)."""
    kin = kin or Kinematics.of(grid, yh, vh)
    v = grid.ifft(vh)
    d33 = grid.ifft(np.stack([grid.diff(yh[i], 2, 2) for i in range(3)]))
    flux = np.einsum("ji...,i...->j...", kin.At, v) + np.einsum("ji...,i...->j...", kin.A, d33)
    return grid.div(_hat(grid, flux))


def pressure_solve(grid: Grid3, yh: np.ndarray, vh: np.ndarray, tol: float = 1e-10, maxiter: int = 200,
                   kin: Kinematics | None = None, q_start: np.ndarray | None = None) -> PressureSolution:
    """Picard iteration ``q <- lap^{-1}[-div((A A^T - I) grad q) + sources]`` with zero mean.

    Starts from ``lap^{-1} sources`` (or ``q_start``) and stops when the L^2 increment
    is at most ``tol``. The contraction factor is the geometric mean of the ratios
    of successive increments.
    """
    kin = kin or Kinematics.of(grid, yh, vh)
    src = pressure_sources(grid, yh, vh, kin)
    inv = grid.inv_lap
    q = inv * src if q_start is None else q_start.copy()
    q[0, 0, 0] = 0.0
    incs = []
    for it in range(1, maxiter + 1):
        dq = grid.ifft(grid.grad(q))
        flux = _hat(grid, np.einsum("jl...,l...->j...", kin.B, dq))
        qn = inv * (src - grid.div(flux))
        qn[0, 0, 0] = 0.0
        inc = math.sqrt(grid.norm2(qn - q))
        incs.append(inc)
        q = qn
        if inc <= tol:
            break
    else:
        raise PressureError(f"pressure iteration did not converge in {maxiter} steps; "
                            f"contraction factor {_contraction(incs):.3g}")
    return PressureSolution(q, it, incs[-1], _contraction(incs))


def _contraction(incs: list[float]) -> float:
    r = [b / a for a, b in zip(incs, incs[1:]) if a > 0 and b > 0]
    # the last ratios sit at round-off level; use the leading ones
    r = r[: max(1, len(r) - 1)]
    return float(np.exp(np.mean(np.log(r)))) if r else 0.0


# ---------------------------------------------------------------------------
# Source term
# ---------------------------------------------------------------------------


def source_bar_divergence(grid: Grid3, kin: Kinematics) -> np.ndarray:
    """``fbar^i = div((A A^T - I) grad Y_t^i)``."""
    F = np.einsum("jl...,il...->ij...", kin.B, kin.Mt)
    Fh = _hat(grid, F)
    return np.stack([grid.div(Fh[i]) for i in range(3)])


def source_bar_direct(grid: Grid3, kin: Kinematics, vh: np.ndarray) -> np.ndarray:
    """``fbar^i = grad_Y . grad_Y Y_t^i - lap Y_t^i`` with ``grad_Y`` applied twice."""
    g = np.einsum("ij...,jk...->ik...", kin.Mt, kin.A)  # (grad_Y Y_t^i)_k
    gh = _hat(grid, g)
    out = []
    for i in range(3):
        dg = _grad(grid, gh[i])  # dg[k, j] = d_j g_ik
        val = np.einsum("jk...,kj...->...", kin.A, dg)
        out.append(_hat(grid, val) - grid.lap(vh[i]))
    return np.stack(out)


def source_tilde(grid: Grid3, kin: Kinematics, qh: np.ndarray) -> np.ndarray:
    """``ftilde = -grad_Y q = -A^T grad q``."""
    dq = grid.ifft(grid.grad(qh))
    return -_hat(grid, np.einsum("ji...,j...->i...", kin.A, dq))


def source_f(grid: Grid3, yh: np.ndarray, vh: np.ndarray, qh: np.ndarray, kin: Kinematics | None = None,
             both_forms: bool = True) -> dict:
    """``f = fbar + ftilde`` (zero mean) with the mismatch of the two ``fbar`` evaluations."""
    kin = kin or Kinematics.of(grid, yh, vh)
    fbar = source_bar_divergence(grid, kin)
    out = {"fbar": fbar, "ftilde": source_tilde(grid, kin, qh)}
    if both_forms:
        direct = source_bar_direct(grid, kin, vh)
        out["fbar_direct"] = direct
        out["mismatch"] = float(np.abs(grid.ifft(direct - fbar)).max())
    f = fbar + out["ftilde"]
    f[:, 0, 0, 0] = 0.0
    out["f"] = f
    return out


# ---------------------------------------------------------------------------
# Invariants
# ---------------------------------------------------------------------------


def invariants(grid: Grid3, yh: np.ndarray, vh: np.ndarray, kin: Kinematics | None = None) -> dict[str, float]:
    kin = kin or Kinematics.of(grid, yh, vh)
    v = grid.ifft(vh)
    Av = _hat(grid, np.einsum("ji...,i...->j...", kin.A, v))
    divY = grid.ifft(grid.div(yh))
    rho = grid.ifft(_hat(grid, rho_from_gradient(kin.M)))
    return {
        "det": float(np.abs(det_from_gradient(kin.M) - 1).max()),
        "div": float(np.abs(grid.ifft(grid.div(Av))).max()),
        "rho": float(np.abs(divY - rho).max()),
        "grad_sup": sup_norm_gradient(kin.M),
    }


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


class InvariantDrift(RuntimeError):
    def __init__(self, message: str, last_state):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class StepOptions:
    linear: bool = False  # force f = 0
    pressure_tol: float = 1e-10
    check: bool = True
    drift_factor: float = 10.0


def with_pressure(state: LagrangianState, opts: StepOptions = StepOptions()) -> tuple[LagrangianState, PressureSolution | None]:
    if state.qh is not None:
        return state, None
    if opts.linear:
        return LagrangianState(state.grid, state.yh, state.vh, np.zeros(state.grid.fshape, complex), state.t), None
    sol = pressure_solve(state.grid, state.yh, state.vh, opts.pressure_tol)
    return LagrangianState(state.grid, state.yh, state.vh, sol.qh, state.t), sol


def _forcing(state: LagrangianState, opts: StepOptions, q_start=None):
    g = state.grid
    if opts.linear:
        return np.zeros_like(state.yh), np.zeros(g.fshape, complex), None
    kin = Kinematics.of(g, state.yh, state.vh)
    if state.qh is not None:
        qh, sol = state.qh, None
    else:
        sol = pressure_solve(g, state.yh, state.vh, opts.pressure_tol, kin=kin, q_start=q_start)
        qh = sol.qh
    return source_f(g, state.yh, state.vh, qh, kin, both_forms=False)["f"], qh, sol


def step(state: LagrangianState, dt: float, prop: GridPropagator | None = None,
         opts: StepOptions = StepOptions()) -> tuple[LagrangianState, dict]:
    """One exponential RK2 step; returns the new state (with its pressure) and a report."""
    g = state.grid
    prop = prop or GridPropagator(g, dt)
    f0, q0, s0 = _forcing(state, opts)
    ys, vs = prop.apply(state.yh, state.vh, f0)
    mid = LagrangianState(g, ys, vs, None, state.t + dt)
    f1, _, s1 = _forcing(mid, opts, q_start=q0)
    yn, vn = prop.apply(state.yh, state.vh, f0, f1)
    new = LagrangianState(g, yn, vn, None, state.t + dt)
    new, s2 = with_pressure(new, opts) if not opts.linear else (
        LagrangianState(g, yn, vn, np.zeros(g.fshape, complex), state.t + dt), None)
    sols = [s for s in (s0, s1, s2) if s is not None]
    report = {
        "pressure_iterations": max((s.iterations for s in sols), default=0),
        "contraction": max((s.contraction for s in sols), default=0.0),
    }
    if opts.check:
        inv = invariants(g, yn, vn)
        report.update(inv)
        for key, tol in INVARIANT_TOLERANCES.items():
            if inv[key] > opts.drift_factor * tol:
                raise InvariantDrift(f"{key} residual {inv[key]:.3g} exceeds {opts.drift_factor:g} x {tol:g} "
                                     f"at t = {new.t:.6g}", state)
        if inv["grad_sup"] > 0.5:
            raise InvariantDrift(f"|grad Y|_inf = {inv['grad_sup']:.3g} exceeds 1/2", state)
    return new, report


MONITOR_COLUMNS = ("t", "det", "div", "rho", "grad_sup", "pressure_iterations", "contraction")


@dataclass
class LagrangianRun:
    snapshots: list[LagrangianState]
    monitors: dict[str, np.ndarray]
    steps: int
    final: LagrangianState

    def monitor_rows(self) -> list[dict[str, float]]:
        n = len(self.monitors["t"])
        return [{k: float(v[i]) for k, v in self.monitors.items()} for i in range(n)]


def run(state0: LagrangianState, dt: float, T: float, cadence: int = 1,
        opts: StepOptions = StepOptions()) -> LagrangianRun:
    nsteps = int(round(T / dt))
    if not math.isclose(nsteps * dt, T, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError("T must be an integer multiple of dt")
    prop = GridPropagator(state0.grid, dt)
    state, _ = with_pressure(state0, opts)
    inv = invariants(state.grid, state.yh, state.vh)
    rows = [{"t": state.t, **inv, "pressure_iterations": 0, "contraction": 0.0}]
    snaps = [state]
    for n in range(1, nsteps + 1):
        state, rep = step(state, dt, prop, opts)
        if opts.check:
            rows.append({"t": state.t, **{k: rep[k] for k in MONITOR_COLUMNS[1:]}})
        if n % cadence == 0:
            snaps.append(state)
    monitors = {k: np.array([r.get(k, np.nan) for r in rows]) for k in MONITOR_COLUMNS}
    return LagrangianRun(snaps, monitors, nsteps, state)


# ---------------------------------------------------------------------------
# Energy functionals
# ---------------------------------------------------------------------------


def _d3(grid: Grid3, vh: np.ndarray) -> np.ndarray:
    return np.stack([grid.diff(vh[i], 2) for i in range(3)])


def _vec(grid: Grid3, h: np.ndarray) -> VectorField3:
    return VectorField3.from_array(grid, h, Space.FOURIER)


def _series(traj: list[LagrangianState]):
    g = traj[0].grid
    Y = [_vec(g, s.yh) for s in traj]
    Yt = [_vec(g, s.vh) for s in traj]
    d3Y = [_vec(g, _d3(g, s.yh)) for s in traj]
    gq = [_vec(g, g.grad(s.qh if s.qh is not None else np.zeros(g.fshape, complex))) for s in traj]
    return Y, Yt, d3Y, gq


def _time_sobolev(series, times, q, s) -> float:
    return float(time_norm(np.array([sobolev_norm(f, s) for f in series]), times, q))


def _cl_h(series, times, q, s) -> float:
    """``L~^q_T(H^s)`` as the Chemin-Lerner ``B^s_{2,2}`` norm."""
    return chemin_lerner_norm(series, times, q, s, 2, 2)


def _cl_aniso(series, times, q, s) -> float:
    return chemin_lerner_norm(series, times, q, s, s2=0.0)


def _time_aniso(series, times, q, s) -> float:
    return float(time_norm(np.array([aniso_norm(f, s, 0.0) for f in series]), times, q))


def energy_E(traj: list[LagrangianState], s: float) -> dict[str, float]:
    """Constituents of ``E_T^s`` (each squared); intersections are sums of the two norms."""
    times = np.array([st.t for st in traj])
    Y, Yt, d3Y, gq = _series(traj)
    parts = {
        "Yt_Linf_H": (_cl_h(Yt, times, math.inf, s) + _cl_h(Yt, times, math.inf, s + 1)) ** 2,
        "d3Y_Linf_H": _cl_h(d3Y, times, math.inf, s) ** 2,
        "Y_Linf_H": _cl_h(Y, times, math.inf, s + 2) ** 2,
        "Yt_L2_H": (_time_sobolev(Yt, times, 2, s + 1) + _time_sobolev(Yt, times, 2, s + 2)) ** 2,
        "d3Y_L2_H": _time_sobolev(d3Y, times, 2, s + 1) ** 2,
        "gradq_L2_H": _time_sobolev(gq, times, 2, s) ** 2,
        "gradq_L1_H": _time_sobolev(gq, times, 1, s) ** 2,
    }
    parts["total"] = float(sum(parts.values()))
    return parts


def energy_functionals(traj: list[LagrangianState], s1: float = 1.5, s2: float = -0.375) -> dict:
    """``E_T^{s1}``, ``E_T^{s2}`` and the combined functional with its anisotropic terms."""
    if not traj:
        raise ValueError("empty trajectory")
    times = np.array([st.t for st in traj])
    Y, Yt, d3Y, _ = _series(traj)
    E1 = energy_E(traj, s1)
    E2 = energy_E(traj, s2)
    aniso = {
        "Yt_Linf_B": (_cl_aniso(Yt, times, math.inf, 0.5) + _cl_aniso(Yt, times, math.inf, s1)) ** 2,
        "d3Y_Linf_B": (_cl_aniso(d3Y, times, math.inf, 0.5) + _cl_aniso(d3Y, times, math.inf, s1)) ** 2,
        "Y_Linf_B": (_cl_aniso(Y, times, math.inf, 2.5) + _cl_aniso(Y, times, math.inf, s1 + 2)) ** 2,
        "Yt_L1_B": (_time_aniso(Yt, times, 1, 2.5) + _time_aniso(Yt, times, 1, s1 + 2)) ** 2,
        "d3Y_L2_B": (_cl_aniso(d3Y, times, 2, 1.5) + _cl_aniso(d3Y, times, 2, s1 + 1)) ** 2,
    }
    total = E1["total"] + E2["total"] + sum(aniso.values())
    return {"s1": s1, "s2": s2, "E_s1": E1, "E_s2": E2, "anisotropic": aniso, "total": float(total)}


def breakdown_rows(fun: dict) -> list[dict]:
    rows = []
    for key in ("E_s1", "E_s2"):
        for name, v in fun[key].items():
            rows.append({"group": key, "term": name, "value": v})
    for name, v in fun["anisotropic"].items():
        rows.append({"group": "anisotropic", "term": name, "value": v})
    rows.append({"group": "all", "term": "total", "value": fun["total"]})
    return rows


# ---------------------------------------------------------------------------
# Eulerian push-forward and cross-check
# ---------------------------------------------------------------------------


def push_forward(state: LagrangianState) -> dict[str, np.ndarray]:
    """Eulerian ``u = Y_t o X^{-1}`` and ``b = (e3 + d3 Y) o X^{-1}`` sampled on the grid."""
    g = state.grid
    inv = invert_map(DisplacementField.from_hat(g, state.yh))
    pre = inv.points + inv.Z
    vals = fourier_eval(g, np.concatenate([state.vh, _d3(g, state.yh)]), pre)
    b = vals[3:]
    b[2] += 1.0
    shape = (3,) + g.shape
    return {"u": vals[:3].reshape(shape), "b": b.reshape(shape), "composition": inv.composition_residual}


def _rel(grid: Grid3, a: np.ndarray, b: np.ndarray, ref: np.ndarray) -> float:
    den = math.sqrt(np.sum(ref**2))
    num = math.sqrt(np.sum((a - b) ** 2))
    return num / den if den > 0 else num


def cross_check(lag: list[LagrangianState], eul: list, atol_time: float = 1e-9) -> list[dict]:
    """Relative L^2 discrepancies at matched snapshot times.

    ``u`` is compared relative to ``|u_E|``; ``b`` relative to ``|b_E - e3|`` (the
    perturbation), with the looser ``|b_E|``-relative value reported alongside.
    """
    rows = []
    etimes = np.array([s.t for s in eul])
    for st in lag:
        idx = np.nonzero(np.abs(etimes - st.t) <= atol_time)[0]
        if len(idx) == 0:
            continue
        e = eul[idx[0]]
        g = st.grid
        pf = push_forward(st)
        ue = g.ifft(e.uh)
        be = g.ifft(e.bh)
        bpert = be.copy()
        bpert[2] -= 1.0
        rows.append({
            "t": st.t,
            "u_rel": _rel(g, pf["u"], ue, ue),
            "b_rel": _rel(g, pf["b"], be, bpert),
            "b_rel_full": _rel(g, pf["b"], be, be),
            "composition": pf["composition"],
        })
    return rows


# ---------------------------------------------------------------------------
# Shared initial data
# ---------------------------------------------------------------------------


@dataclass
class PairedData:
    """Lagrangian ``(Y0, Y1)`` and the Eulerian ``(b0, u0)`` it induces."""

    lagrangian: LagrangianState
    eulerian: object  # MhdState
    report: dict = field(default_factory=dict)


def paired_data(grid: Grid3, rng: np.random.Generator, grad_bound: float = 0.1, velocity: float = 0.1,
                band: int = 2) -> PairedData:
    """Volume-preserving shear ``Y0`` with ``|grad Y0|_inf = grad_bound`` and ``Y1 = (I + grad Y0) w``.

    ``w`` is divergence-free with L^2 norm ``velocity``, so ``div(A Y1) = det(I + grad Y0) div w = 0``.
    """
    from .dataprep import from_displacement
    from .euler import MhdState
    from .geometry import shear_displacement
    from .spectral import random_solenoidal_hat

    y0 = shear_displacement(grid, rng, band, grad_bound)
    w = random_solenoidal_hat(grid, rng, band) * velocity
    M = _grad(grid, y0)
    wp = grid.ifft(w)
    y1 = grid.fft(wp + np.einsum("ij...,j...->i...", M, wp))
    lag = LagrangianState(grid, y0, y1)
    eul = from_displacement(grid, y0, y1)
    bh = grid.leray(grid.truncate(eul["b"].fourier()))
    uh = grid.leray(grid.truncate(eul["u"].fourier()))
    inv = invariants(grid, y0, y1)
    report = {"grad_Y0": inv["grad_sup"], "det": inv["det"], "div": inv["div"],
              "composition": eul["inverse"].composition_residual}
    return PairedData(lag, MhdState(grid, bh, uh), report)
