"""Initial-data pipeline: characteristics of ``b0``, transport solves for ``Psi``,
the frame ``(bbar0, btilde0, U0)`` and the volume-preserving map ``X0 = y + Y0``.

Fields are consumed through a small evaluator interface (``value(points)`` returning
``(M, 3)`` and ``jacobian(points)`` returning ``(M, 3, 3)`` with ``J[:, i, j] = d_j b^i``)
so that analytic data and spectral snapshots share the same trajectory code.
All point coordinates are on the real line; the vertical coordinate is wrapped
periodically only when a field is looked up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid3, Space, SpectralField, VectorField3, fourier_eval

GL_NODES = 64
SUBSTEPS = 512
FD_STEP = 2e-3


# ---------------------------------------------------------------------------
# Profiles and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BumpProfile:
    """``gamma(s) = height * exp(1 - 1/(1 - (s/K)^2))`` on ``|s| < K``, zero outside."""

    K: float
    height: float = 1.0

    def derivatives(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        u = s / self.K
        inside = np.abs(u) < 1
        q = np.where(inside, 1 - u**2, 1.0)
        E = np.where(inside, np.exp(1 - 1 / q), 0.0) * self.height
        g = -2 * u / q**2
        dg = -2 / q**2 - 8 * u**2 / q**3
        return E, E * g / self.K, E * (g**2 + dg) / self.K**2

    def __call__(self, s):
        return self.derivatives(s)[0]


def wrap_vertical(points: np.ndarray, Lz: float) -> np.ndarray:
    """Points with the vertical coordinate mapped into ``[-Lz/2, Lz/2)``."""
    p = np.array(points, dtype=float, copy=True)
    p[..., 2] = (p[..., 2] + Lz / 2) % Lz - Lz / 2
    return p


@dataclass(frozen=True)
class StreamMode:
    """One term ``weight * sin(2 pi (m1 x1 / Lx + m2 x2 / Ly) + phase)`` of the stream function."""

    m1: int
    m2: int
    weight: float = 1.0
    phase: float = 0.0


DEFAULT_MODES = (StreamMode(1, 0, 1.0, 0.3), StreamMode(0, 1, 0.7, 1.1), StreamMode(1, 1, 0.5, 2.0))


@dataclass(frozen=True)
class StreamFunctionField:
    """Divergence-free ``b0 = e3 + eps gamma'(x3) (grad_perp a(x_h) + c, 0)``.

    ``a = sum(modes)`` is a horizontal trigonometric polynomial, ``c`` the drift and ``gamma`` a
    smooth bump supported in ``[-K, K]``, so ``b0 - e3`` vanishes for ``|x3| >= K``.
    The horizontal trajectories are the time-``gamma`` flow of ``grad_perp a + c``,
    which makes every component of ``b0 - e3`` admissible.
    """

    K: float
    eps: float
    box: tuple[float, float, float] = (2 * math.pi, 2 * math.pi, 8 * math.pi)
    modes: tuple[StreamMode, ...] = DEFAULT_MODES
    drift: tuple[float, float] = (0.0, 0.0)

    @property
    def profile(self) -> BumpProfile:
        return BumpProfile(self.K)

    def _wavevectors(self):
        Lx, Ly, _ = self.box
        return [(2 * math.pi * m.m1 / Lx, 2 * math.pi * m.m2 / Ly, m) for m in self.modes]

    def horizontal(self, xh: np.ndarray, derivatives: bool = True):
        """``w = eps (grad_perp a + c)`` and (optionally) ``Dw[:, i, j] = d_j w^i`` at ``(M, 2)`` points."""
        M = xh.shape[0]
        w = np.zeros((M, 2))
        w += self.eps * np.asarray(self.drift)
        Dw = np.zeros((M, 2, 2)) if derivatives else None
        for k1, k2, m in self._wavevectors():
            arg = k1 * xh[:, 0] + k2 * xh[:, 1] + m.phase
            amp = self.eps * m.weight
            c = amp * np.cos(arg)
            # grad_perp a = (-d2 a, d1 a)
            w[:, 0] -= k2 * c
            w[:, 1] += k1 * c
            if derivatives:
                s = -amp * np.sin(arg)
                Dw[:, 0, 0] -= k2 * k1 * s
                Dw[:, 0, 1] -= k2 * k2 * s
                Dw[:, 1, 0] += k1 * k1 * s
                Dw[:, 1, 1] += k1 * k2 * s
        return w, Dw

    def value(self, points: np.ndarray) -> np.ndarray:
        p = wrap_vertical(np.atleast_2d(points), self.box[2])
        _, g1, _ = self.profile.derivatives(p[:, 2])
        w, _ = self.horizontal(p[:, :2], derivatives=False)
        out = np.zeros_like(p)
        out[:, :2] = g1[:, None] * w
        out[:, 2] = 1.0
        return out

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        p = wrap_vertical(np.atleast_2d(points), self.box[2])
        _, g1, g2 = self.profile.derivatives(p[:, 2])
        w, Dw = self.horizontal(p[:, :2])
        J = np.zeros((p.shape[0], 3, 3))
        J[:, :2, :2] = g1[:, None, None] * Dw
        J[:, :2, 2] = g2[:, None] * w
        return J

    def value_and_jacobian(self, points):
        return self.value(points), self.jacobian(points)

    def samples(self, grid: Grid3) -> VectorField3:
        pts = _signed_points(grid)
        vals = self.value(pts).T.reshape((3,) + grid.shape)
        return VectorField3.from_array(grid, vals)

    # -- closed forms (single horizontal direction, drift orthogonal to it) --
    def _shear(self):
        kv = {(k1, k2) for k1, k2, _ in self._wavevectors()}
        dirs = {(k1 / math.hypot(k1, k2), k2 / math.hypot(k1, k2)) for k1, k2 in kv}
        if len(dirs) != 1:
            raise ValueError("closed-form flow needs all modes along one horizontal direction")
        (n1, n2), = dirs
        if abs(self.drift[0] * n1 + self.drift[1] * n2) > 0:
            raise ValueError("closed-form flow needs the drift orthogonal to the mode direction")

    def horizontal_flow(self, tau: np.ndarray, xh: np.ndarray) -> np.ndarray:
        """Time-``tau`` flow of ``grad_perp a + c``; here ``k . x_h`` is invariant, so the flow is a shear."""
        self._shear()
        w, _ = self.horizontal(xh, derivatives=False)
        return xh + np.asarray(tau)[:, None] * w

    def forward_map(self, y: np.ndarray) -> np.ndarray:
        """``Phi(y) = (flow(gamma(y3), y_h), y3)``, which pushes ``e3`` forward to ``b0``."""
        y = np.atleast_2d(y)
        out = y.copy()
        out[:, :2] = self.horizontal_flow(self.profile(_wrap(y[:, 2], self.box[2])), y[:, :2])
        return out

    def inverse_map(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = x.copy()
        out[:, :2] = self.horizontal_flow(-self.profile(_wrap(x[:, 2], self.box[2])), x[:, :2])
        return out

    def exact_psi(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) - self.inverse_map(x)

    def exact_y0(self, y: np.ndarray) -> np.ndarray:
        return self.forward_map(y) - np.atleast_2d(y)


def _wrap(s, L):
    return (np.asarray(s) + L / 2) % L - L / 2


def _signed_points(grid: Grid3) -> np.ndarray:
    """Grid nodes as ``(M, 3)`` with every coordinate in ``[-L/2, L/2)``."""
    p = grid.points()
    for a in range(3):
        p[:, a] = grid.signed(p[:, a], a)
    return p


class SpectralVectorField:
    """Evaluator backed by Fourier data of a sampled vector field."""

    def __init__(self, field: VectorField3):
        self.grid = field.grid
        g = self.grid
        self._hat = field.fourier()
        grads = [g.diff(self._hat[i], j) for i in range(3) for j in range(3)]
        self._all = np.concatenate([self._hat, np.stack(grads)])

    def value(self, points):
        return fourier_eval(self.grid, self._hat, np.atleast_2d(points)).T

    def jacobian(self, points):
        return fourier_eval(self.grid, self._all[3:], np.atleast_2d(points)).T.reshape(-1, 3, 3)

    def value_and_jacobian(self, points):
        out = fourier_eval(self.grid, self._all, np.atleast_2d(points)).T
        return out[:, :3], out[:, 3:].reshape(-1, 3, 3)


class ScalarFunction:
    """Scalar right-hand side from callables ``value(points) -> (M,)`` and ``gradient(points) -> (M, 3)``."""

    def __init__(self, value, gradient):
        self._value = value
        self._gradient = gradient

    def value(self, points):
        return np.asarray(self._value(points))[:, None]

    def gradient(self, points):
        return np.asarray(self._gradient(points))[:, None, :]

    @classmethod
    def from_field(cls, f: SpectralField):
        g = f.grid
        fh = f.fourier()
        gh = g.grad(fh)
        return cls(lambda p: fourier_eval(g, fh, np.atleast_2d(p)),
                   lambda p: fourier_eval(g, gh, np.atleast_2d(p)).T)


class Perturbation:
    """The three right-hand sides ``(b0^1, b0^2, b0^3 - 1)`` of a field evaluator."""

    def __init__(self, b0):
        self.b0 = b0

    def value(self, points):
        v = np.array(self.b0.value(points))
        v[:, 2] -= 1.0
        return v

    def gradient(self, points):
        return self.b0.jacobian(points)


@dataclass(frozen=True)
class InitialMagneticField:
    b0: object  # evaluator
    K: float
    eps: float

    def samples(self, grid: Grid3) -> VectorField3:
        if hasattr(self.b0, "samples"):
            return self.b0.samples(grid)
        vals = self.b0.value(_signed_points(grid)).T.reshape((3,) + grid.shape)
        return VectorField3.from_array(grid, vals)

    def check(self, grid: Grid3) -> dict:
        """Divergence, support and lower-bound checks on the grid samples."""
        s = self.samples(grid)
        x3 = np.abs(grid.signed(grid.axis_coords(2), 2))
        outside = x3 > self.K
        pert = s.physical() - np.array([0, 0, 1.0]).reshape(3, 1, 1, 1)
        return {
            "divergence_linf": float(np.abs(grid.ifft(grid.div(s.fourier()))).max()),
            "support_linf": float(np.abs(pert[..., outside]).max()) if outside.any() else 0.0,
            "b3_min": float(s.physical()[2].min()),
        }


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def _rk4(b0, X, h):
    """One RK4 step for ``X' = b0(X)`` with per-point step ``h`` (shape (M,))."""
    h = h[:, None]
    k1 = b0.value(X)
    k2 = b0.value(X + 0.5 * h * k1)
    k3 = b0.value(X + 0.5 * h * k2)
    k4 = b0.value(X + h * k3)
    return X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _vj(b0, X):
    if hasattr(b0, "value_and_jacobian"):
        return b0.value_and_jacobian(X)
    return b0.value(X), b0.jacobian(X)


def _rk4_variational(b0, X, J, h):
    """RK4 for ``X' = b0(X)`` together with ``J' = Db0(X) J``."""
    hh = h[:, None]
    hj = h[:, None, None]
    v1, D1 = _vj(b0, X)
    j1 = D1 @ J
    v2, D2 = _vj(b0, X + 0.5 * hh * v1)
    j2 = D2 @ (J + 0.5 * hj * j1)
    v3, D3 = _vj(b0, X + 0.5 * hh * v2)
    j3 = D3 @ (J + 0.5 * hj * j2)
    v4, D4 = _vj(b0, X + hh * v3)
    j4 = D4 @ (J + hj * j3)
    return X + hh / 6 * (v1 + 2 * v2 + 2 * v3 + v4), J + hj / 6 * (j1 + 2 * j2 + 2 * j3 + j4)


@dataclass(frozen=True)
class TrajectoryPath:
    times: np.ndarray  # (S,)
    points: np.ndarray  # (S, M, 3)
    rejected: int

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


def integrate_trajectory(b0, x, tspan: float, dt: float | None = None, tol: float = 1e-10,
                         min_dt: float = 1e-8) -> TrajectoryPath:
    """Adaptive RK4 from ``x`` (shape (3,) or (M, 3)) over ``[0, tspan]`` (negative runs backward).

    The local error is estimated by step doubling; a step is rejected and ``dt`` halved
    while the estimate exceeds ``tol``. Accepted steps use the two-half-step result.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    if tspan == 0:
        return TrajectoryPath(np.zeros(1), X[None], 0)
    direction = math.copysign(1.0, tspan)
    total = abs(tspan)
    h = min(abs(dt) if dt else total / 64, total)
    t = 0.0
    times, pts, rejected = [0.0], [X.copy()], 0
    ones = np.ones(X.shape[0])
    while t < total * (1 - 1e-14):
        h = min(h, total - t)
        full = _rk4(b0, X, direction * h * ones)
        half = _rk4(b0, X, direction * 0.5 * h * ones)
        half = _rk4(b0, half, direction * 0.5 * h * ones)
        err = float(np.abs(full - half).max()) / 15
        if err > tol and h > min_dt:
            h *= 0.5
            rejected += 1
            continue
        X = half
        t += h
        times.append(direction * t)
        pts.append(X.copy())
        if err < tol / 64 and (dt is None or 2 * h <= abs(dt)):
            h *= 2
    return TrajectoryPath(np.array(times), np.stack(pts), rejected)


def flow_jacobian_fd(b0, x, t: float, h: float = 1e-5, tol: float = 1e-12) -> np.ndarray:
    """``dX(t, x)/dx`` by central differences of the adaptive flow."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        pts = np.stack([x + e, x - e])
        end = integrate_trajectory(b0, pts, t, tol=tol).end
        cols.append((end[0] - end[1]) / (2 * h))
    return np.stack(cols, axis=1)


def _exit_times(b0, x, sign: float, K: float, substeps: int = SUBSTEPS) -> np.ndarray:
    """First time at which ``sign * X3`` reaches ``K`` (points must satisfy ``sign * x3 < K``).

    The bound ``2 (K - sign x3)`` follows from ``b0^3 >= 1/2``; the crossing step is
    located on a uniform grid and refined by Newton's method on a single RK4 step.
    """
    M = x.shape[0]
    tmax = 2.0 * (K - sign * x[:, 2])
    if np.any(tmax <= 0):
        raise ValueError("start points must lie inside the support layer")
    h = sign * tmax / substeps
    X = x.copy()
    start = x.copy()
    tstart = np.zeros(M)
    found = np.zeros(M, dtype=bool)
    prev3 = X[:, 2].copy()
    for n in range(substeps):
        Xn = _rk4(b0, X, h)
        cross = (~found) & (sign * Xn[:, 2] >= K)
        if np.any(cross):
            start[cross] = X[cross]
            tstart[cross] = n * np.abs(h[cross])
            prev3[cross] = X[cross, 2]
            found |= cross
        X = Xn
        if found.all():
            break
    if not found.all():
        raise RuntimeError("trajectory did not leave the support layer; is b0^3 >= 1/2?")
    # Newton on g(tau) = sign * X3(tau) - K along one RK4 step from the crossing start
    tau = (K - sign * prev3) * np.abs(h) / np.maximum(sign * (_rk4(b0, start, h)[:, 2] - prev3), 1e-300)
    tau = np.clip(tau, 0.0, np.abs(h))
    for _ in range(6):
        Xt = _rk4(b0, start, sign * tau)
        g = sign * Xt[:, 2] - K
        d = b0.value(Xt)[:, 2]
        step = g / d
        tau = tau - step
        if np.abs(step).max() < 1e-15:
            break
    return tstart + tau


def _branch(b0, rhs, x, sign: float, K: float, gradients: bool, substeps: int = SUBSTEPS):
    """``-sign * int_0^T f(X(sign t, x)) dt`` with ``T`` the exit time, and its gradient."""
    M = x.shape[0]
    T = _exit_times(b0, x, sign, K, substeps)
    nodes, weights = np.polynomial.legendre.leggauss(GL_NODES)
    s = np.concatenate([[0.0], (nodes + 1) / 2])
    w = weights / 2
    hmax = 2 * K / substeps
    X = x.copy()
    J = np.broadcast_to(np.eye(3), (M, 3, 3)).copy()
    acc = None
    gacc = None
    for k in range(1, len(s)):
        gap = (s[k] - s[k - 1]) * T
        nsub = max(1, int(math.ceil(gap.max() / hmax)))
        h = sign * gap / nsub
        for _ in range(nsub):
            if gradients:
                X, J = _rk4_variational(b0, X, J, h)
            else:
                X = _rk4(b0, X, h)
        f = rhs.value(X)
        wk = (w[k - 1] * T)[:, None]
        acc = wk * f if acc is None else acc + wk * f
        if gradients:
            gf = rhs.gradient(X) @ J
            gacc = wk[..., None] * gf if gacc is None else gacc + wk[..., None] * gf
    psi = -sign * acc
    grad = -sign * gacc if gradients else None
    return psi, grad


def transport_at(b0, rhs, points: np.ndarray, K: float, gradients: bool = True,
                 substeps: int = SUBSTEPS):
    """Solution of ``b0 . grad psi = f`` with decay at arbitrary points.

    Points with ``x3 > 0`` use the forward integral, ``x3 < 0`` the backward one and
    ``x3 = 0`` the average of both; points with ``|x3| >= K`` get zero.
    Returns ``psi`` of shape ``(M, F)`` and, if requested, ``grad psi`` of shape ``(M, F, 3)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nf = rhs.value(pts[:1]).shape[1]
    M = pts.shape[0]
    psi = np.zeros((M, nf))
    grad = np.zeros((M, nf, 3)) if gradients else None
    x3 = pts[:, 2]
    for sign, sel in ((1.0, (x3 >= 0) & (x3 < K)), (-1.0, (x3 <= 0) & (x3 > -K))):
        if not sel.any():
            continue
        wgt = np.where(x3[sel] == 0, 0.5, 1.0)
        p, g = _branch(b0, rhs, pts[sel], sign, K, gradients, substeps)
        psi[sel] += wgt[:, None] * p
        if gradients:
            grad[sel] += wgt[:, None, None] * g
    return psi, grad


# ---------------------------------------------------------------------------
# Admissibility and transport
# ---------------------------------------------------------------------------


def admissibility_residual(f, b0, probes: np.ndarray, K: float) -> float:
    """``max |int f(X(t, x)) dt|`` over whole trajectories through probes on ``x3 = 0``."""
    rhs = _as_rhs(f)
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    fwd, _ = _branch(b0, rhs, pts, 1.0, K, False)
    bwd, _ = _branch(b0, rhs, pts, -1.0, K, False)
    # fwd = -int_0^T f, bwd = +int_{-T}^0 f
    return float(np.abs(bwd - fwd).max())


def _as_rhs(f):
    if isinstance(f, SpectralField):
        return ScalarFunction.from_field(f)
    return f


@dataclass
class TransportSolution:
    grid: Grid3
    psi: np.ndarray  # (F,) + grid.shape
    grad: np.ndarray  # (F, 3) + grid.shape, grad[i, j] = d_j psi_i
    report: dict

    def field(self, i: int = 0) -> SpectralField:
        return SpectralField(self.grid, self.psi[i])


def _layer_nodes(grid: Grid3, K: float):
    pts = _signed_points(grid)
    sel = np.abs(pts[:, 2]) < K
    return pts, sel


def solve_transport(b0, rhs, grid: Grid3, K: float, admissibility_tol: float = 1e-8,
                    probes: np.ndarray | None = None) -> TransportSolution:
    """Solve ``b0 . grad psi = f`` at every grid node by quadrature along characteristics.

    Rejects data whose admissibility residual on ``x3 = 0`` exceeds ``admissibility_tol``.
    The report holds the admissibility residual, the branch mismatch on the band
    ``|x3| <= 2 dz`` and the pointwise PDE residual ``max |b0 . grad psi - f|``.
    """
    rhs = _as_rhs(rhs)
    pts, sel = _layer_nodes(grid, K)
    if probes is None:
        probes = pts[pts[:, 2] == 0]
    adm = admissibility_residual(rhs, b0, probes, K)
    if adm > admissibility_tol:
        raise ValueError(f"right-hand side is not admissible: residual {adm:.3g} > {admissibility_tol:.3g}")
    inside = pts[sel]
    psi_in, grad_in = transport_at(b0, rhs, inside, K)
    nf = psi_in.shape[1]
    psi = np.zeros((grid.npoints, nf))
    grad = np.zeros((grid.npoints, nf, 3))
    psi[sel] = psi_in
    grad[sel] = grad_in
    bv = b0.value(pts)
    resid = np.einsum("mj,mfj->mf", bv, grad) - rhs.value(pts)
    band = np.abs(pts[:, 2]) <= 2 * grid.spacing[2]
    band_pts = pts[band & sel]
    fw, _ = _branch(b0, rhs, band_pts[band_pts[:, 2] < K], 1.0, K, False)
    bw, _ = _branch(b0, rhs, band_pts[band_pts[:, 2] > -K], -1.0, K, False)
    report = {
        "admissibility": adm,
        "branch_mismatch": float(np.abs(fw - bw).max()) if len(fw) else 0.0,
        "pde_residual": float(np.abs(resid).max()),
    }
    shape = grid.shape
    return TransportSolution(grid, psi.T.reshape((nf,) + shape),
                             grad.transpose(1, 2, 0).reshape((nf, 3) + shape), report)


# ---------------------------------------------------------------------------
# Psi, frame, Y0
# ---------------------------------------------------------------------------


def reconstruct_b0(G: np.ndarray) -> np.ndarray:
    """``b0`` rebuilt from ``G[..., i, j] = d_j psi_i`` (third column of adj(I - grad Psi))."""
    d = lambda i, j: G[..., i - 1, j - 1]  # d(i, j) = d_j psi_i  # noqa: E731
    return np.stack([
        d(1, 2) * d(2, 3) + d(1, 3) * (1 - d(2, 2)),
        d(1, 3) * d(2, 1) + d(2, 3) * (1 - d(1, 1)),
        (1 - d(1, 1)) * (1 - d(2, 2)) - d(1, 2) * d(2, 1),
    ], axis=-1)


def frame_columns(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(bbar0, btilde0)`` from ``G[..., i, j] = d_j psi_i``."""
    d = lambda i, j: G[..., i - 1, j - 1]  # noqa: E731
    bbar = np.stack([
        (1 - d(2, 2)) * (1 - d(3, 3)) - d(2, 3) * d(3, 2),
        d(2, 3) * d(3, 1) + d(2, 1) * (1 - d(3, 3)),
        d(2, 1) * d(3, 2) + d(3, 1) * (1 - d(2, 2)),
    ], axis=-1)
    btilde = np.stack([
        d(1, 3) * d(3, 2) + d(1, 2) * (1 - d(3, 3)),
        (1 - d(1, 1)) * (1 - d(3, 3)) - d(1, 3) * d(3, 1),
        d(1, 2) * d(3, 1) + d(3, 2) * (1 - d(1, 1)),
    ], axis=-1)
    return bbar, btilde


def det3(A: np.ndarray) -> np.ndarray:
    """Determinant over the last two axes."""
    return (A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
            - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
            + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0]))


@dataclass(frozen=True)
class Frame:
    bbar: np.ndarray  # (..., 3)
    btilde: np.ndarray
    U0: np.ndarray  # (..., 3, 3), columns (bbar, btilde, b0)
    report: dict


def build_frame(G: np.ndarray, b0_values: np.ndarray | None = None, tol: float = 1e-8) -> Frame:
    """Frame and ``U0 = (bbar0, btilde0, b0)`` from pointwise ``grad Psi``.

    Without ``b0_values`` the third column is rebuilt from ``grad Psi``. Reports
    ``det U0 - 1`` and ``U0 (I - grad Psi) - I``; raises when either exceeds ``tol``.
    """
    bbar, btilde = frame_columns(G)
    b0 = reconstruct_b0(G) if b0_values is None else b0_values
    U0 = np.stack([bbar, btilde, b0], axis=-1)
    N = np.eye(3) - G
    report = {
        "det_U0": float(np.abs(det3(U0) - 1).max()),
        "inverse": float(np.abs(U0 @ N - np.eye(3)).max()),
    }
    bad = {k: v for k, v in report.items() if v > tol}
    if bad:
        raise ValueError(f"frame residuals above {tol:g}: {bad}")
    return Frame(bbar, btilde, U0, report)


@dataclass(frozen=True)
class FixedPoint:
    Y0: np.ndarray  # (M, 3)
    iterations: int
    increment: float
    contraction: float


def solve_y0_fixed_point(psi, points: np.ndarray, tol: float = 1e-12, maxiter: int = 200) -> FixedPoint:
    """Picard iteration ``Y <- Psi(y + Y)`` from ``Y = 0``; ``psi(points) -> (M, 3)``."""
    y = np.atleast_2d(np.asarray(points, dtype=float))
    Y = np.zeros_like(y)
    prev_inc, ratio = None, 0.0
    for it in range(1, maxiter + 1):
        Ynew = np.asarray(psi(y + Y))
        inc = float(np.abs(Ynew - Y).max())
        if prev_inc:
            ratio = max(ratio, inc / prev_inc) if it <= 4 else ratio
        prev_inc = inc
        Y = Ynew
        if inc <= tol:
            return FixedPoint(Y, it, inc, ratio)
    raise RuntimeError(f"fixed point did not converge in {maxiter} iterations (last increment {prev_inc:.3g})")


def _fd_gradient(fn, points: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Fourth-order central differences: ``out[m, i, j] = d_j fn_i`` at each point."""
    pts = np.atleast_2d(points)
    M = pts.shape[0]
    offs = (-2, -1, 1, 2)
    coef = np.array([1, -8, 8, -1]) / (12 * h)
    shifted = []
    for j in range(3):
        for o in offs:
            p = pts.copy()
            p[:, j] += o * h
            shifted.append(p)
    vals = np.asarray(fn(np.concatenate(shifted)))
    vals = vals.reshape(3, len(offs), M, -1)
    return np.einsum("o,jomi->mij", coef, vals)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    grid: Grid3
    psi: VectorField3
    bbar: VectorField3
    btilde: VectorField3
    U0: np.ndarray  # (3, 3) + grid.shape
    Y0: VectorField3
    report: dict = field(default_factory=dict)

    def gates(self, tol: dict | None = None) -> dict[str, bool]:
        tol = tol or PIPELINE_TOLERANCES
        return {k: self.report[k] <= v for k, v in tol.items() if k in self.report}


PIPELINE_TOLERANCES = {
    "pde_residual": 1e-6,
    "reconstruction": 1e-7,
    "det_I_minus_grad_psi": 1e-7,
    "det_U0": 1e-7,
    "inverse": 1e-7,
    "div_bbar": 1e-7,
    "div_btilde": 1e-7,
    "bb2": 1e-7,
    "admissibility": 1e-8,
}


def build_psi_triple(b0, grid: Grid3, K: float) -> TransportSolution:
    """Transport solves for ``Psi`` with right-hand sides ``(b0^1, b0^2, b0^3 - 1)``.

    Adds the reconstruction residual (b0 rebuilt from ``grad Psi``) and
    ``det(I - grad Psi) - 1`` to the transport report.
    """
    sol = solve_transport(b0, Perturbation(b0), grid, K)
    G = np.moveaxis(sol.grad.reshape(3, 3, -1), -1, 0)
    pts = _signed_points(grid)
    sol.report["reconstruction"] = float(np.abs(reconstruct_b0(G) - b0.value(pts)).max())
    sol.report["det_I_minus_grad_psi"] = float(np.abs(det3(np.eye(3) - G) - 1).max())
    sol.report["grad_psi_linf"] = float(np.abs(G).max())
    return sol


def select_probes(grid: Grid3, K: float, count: int, rng: np.random.Generator) -> np.ndarray:
    pts, sel = _layer_nodes(grid, K)
    inner = pts[sel & (np.abs(pts[:, 2]) < K - 2 * FD_STEP)]
    idx = rng.choice(len(inner), size=min(count, len(inner)), replace=False)
    return inner[np.sort(idx)]


def prepare(b0, grid: Grid3, K: float, probes: int = 24, rng: np.random.Generator | None = None,
            y0_tol: float = 1e-12) -> PreparedData:
    """Full pipeline ``b0 -> Psi -> (bbar0, btilde0, U0) -> Y0`` with all residual gates."""
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    rhs = Perturbation(b0)
    sol = build_psi_triple(b0, grid, K)
    report = dict(sol.report)
    pts = _signed_points(grid)
    G = np.moveaxis(sol.grad.reshape(3, 3, -1), -1, 0)
    frame = build_frame(G, b0.value(pts), tol=math.inf)
    report.update(frame.report)

    def psi_at(p):
        return transport_at(b0, rhs, p, K, gradients=False)[0]

    def grad_psi_at(p):
        return transport_at(b0, rhs, p, K, gradients=True)[1]

    def frame_at(p):
        bb, bt = frame_columns(grad_psi_at(p))
        return np.concatenate([bb, bt], axis=1)

    # divergence of the frame at probes, by differences of the pipeline itself
    pr = select_probes(grid, K, probes, rng)
    D = _fd_gradient(frame_at, pr)  # D[m, c, j]: c in 0..5 (bbar, btilde components)
    report["div_bbar"] = float(np.abs(np.einsum("mjj->m", D[:, 0:3, :])).max())
    report["div_btilde"] = float(np.abs(np.einsum("mjj->m", D[:, 3:6, :])).max())

    # Y0 on all nodes whose image may meet the layer
    if report["grad_psi_linf"] >= 0.5:
        raise ValueError(f"|grad Psi|_inf = {report['grad_psi_linf']:.3g} too large for the fixed point")
    bound = float(np.abs(sol.psi).max())
    near = np.abs(pts[:, 2]) < K + bound + 1e-12
    fp = solve_y0_fixed_point(psi_at, pts[near], tol=y0_tol)
    Y0 = np.zeros_like(pts)
    Y0[near] = fp.Y0
    report["y0_iterations"] = fp.iterations
    report["y0_increment"] = fp.increment
    report["y0_contraction"] = fp.contraction

    # BB2 at probes: U0(y + Y0) against I + grad Y0 from differences of the fixed-point solve
    def y0_at(p):
        return solve_y0_fixed_point(psi_at, p, tol=y0_tol).Y0

    Yp = y0_at(pr)
    Gx = grad_psi_at(pr + Yp)
    U_at = np.stack([*frame_columns(Gx), b0.value(pr + Yp)], axis=-1)
    dY = _fd_gradient(y0_at, pr)
    report["bb2"] = float(np.abs(U_at - (np.eye(3) + dY)).max())

    shape = grid.shape
    vec = lambda a: VectorField3.from_array(grid, a.T.reshape((3,) + shape))  # noqa: E731
    U0 = np.moveaxis(frame.U0, 0, -1).reshape((3, 3) + shape)
    return PreparedData(grid, VectorField3.from_array(grid, sol.psi), vec(frame.bbar), vec(frame.btilde),
                        U0, vec(Y0), report)


# ---------------------------------------------------------------------------
# Data from a displacement (Lagrangian route)
# ---------------------------------------------------------------------------


def from_displacement(grid: Grid3, y0_hat: np.ndarray, y1_hat: np.ndarray) -> dict:
    """Eulerian data pushed forward from Lagrangian ``(Y0, Y1)``.

    ``b0 = (e3 + d3 Y0) o X0^{-1}`` (third column of ``I + grad Y0``) and
    ``u0 = Y1 o X0^{-1}``, both sampled on the grid through the inverse map.
    """
    from .geometry import DisplacementField, invert_map

    D = DisplacementField.from_hat(grid, y0_hat)
    inv = invert_map(D)
    pre = inv.points + inv.Z  # X0^{-1}(x) at the grid nodes
    col = np.stack([grid.diff(y0_hat[i], 2) for i in range(3)])
    vals = fourier_eval(grid, np.concatenate([col, y1_hat]), pre)
    b = vals[:3]
    b[2] += 1.0
    shape = (3,) + grid.shape
    return {
        "b": VectorField3.from_array(grid, b.reshape(shape)),
        "u": VectorField3.from_array(grid, vals[3:].reshape(shape)),
        "inverse": inv,
    }
