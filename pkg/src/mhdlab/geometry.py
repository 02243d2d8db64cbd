"""Lagrangian geometry: cofactor matrix, determinant expansion, ``grad_Y`` operators,
magnetic pullback, tension identities and inversion of ``x = y + Y(y)``.

Gradient convention: ``M[i, j] = d_j Y^i``. Pointwise products are formed on the
grid and truncated to the 2/3 band before any further differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .spectral import Grid3, Space, SpectralField, VectorField3, fourier_eval

INVERTIBILITY_BOUND = 0.5


# ---------------------------------------------------------------------------
# Pointwise algebra on gradient arrays
# ---------------------------------------------------------------------------


def cofactor_from_gradient(M: np.ndarray) -> np.ndarray:
    """Entries ``b_ij`` of the cofactor matrix of ``I + M`` (shape (3, 3, ...))."""
    d = lambda i, j: M[j - 1, i - 1]  # d(i, j) = d_i Y^j  # noqa: E731
    b = np.empty_like(M)
    b[0, 0] = (1 + d(2, 2)) * (1 + d(3, 3)) - d(3, 2) * d(2, 3)
    b[0, 1] = d(3, 1) * d(2, 3) - d(2, 1) * (1 + d(3, 3))
    b[0, 2] = d(2, 1) * d(3, 2) - d(3, 1) * (1 + d(2, 2))
    b[1, 0] = d(3, 2) * d(1, 3) - d(1, 2) * (1 + d(3, 3))
    b[1, 1] = (1 + d(1, 1)) * (1 + d(3, 3)) - d(3, 1) * d(1, 3)
    b[1, 2] = d(3, 1) * d(1, 2) - (1 + d(1, 1)) * d(3, 2)
    b[2, 0] = d(1, 2) * d(2, 3) - (1 + d(2, 2)) * d(1, 3)
    b[2, 1] = d(2, 1) * d(1, 3) - (1 + d(1, 1)) * d(2, 3)
    b[2, 2] = (1 + d(1, 1)) * (1 + d(2, 2)) - d(2, 1) * d(1, 2)
    return b


def cofactor_rate(M: np.ndarray, Mt: np.ndarray) -> np.ndarray:
    """Time derivative of the cofactor entries given ``M = grad Y`` and ``Mt = grad Y_t``."""
    d = lambda i, j: M[j - 1, i - 1]  # noqa: E731
    e = lambda i, j: Mt[j - 1, i - 1]  # noqa: E731
    b = np.empty_like(M)
    b[0, 0] = e(2, 2) * (1 + d(3, 3)) + (1 + d(2, 2)) * e(3, 3) - e(3, 2) * d(2, 3) - d(3, 2) * e(2, 3)
    b[0, 1] = e(3, 1) * d(2, 3) + d(3, 1) * e(2, 3) - e(2, 1) * (1 + d(3, 3)) - d(2, 1) * e(3, 3)
    b[0, 2] = e(2, 1) * d(3, 2) + d(2, 1) * e(3, 2) - e(3, 1) * (1 + d(2, 2)) - d(3, 1) * e(2, 2)
    b[1, 0] = e(3, 2) * d(1, 3) + d(3, 2) * e(1, 3) - e(1, 2) * (1 + d(3, 3)) - d(1, 2) * e(3, 3)
    b[1, 1] = e(1, 1) * (1 + d(3, 3)) + (1 + d(1, 1)) * e(3, 3) - e(3, 1) * d(1, 3) - d(3, 1) * e(1, 3)
    b[1, 2] = e(3, 1) * d(1, 2) + d(3, 1) * e(1, 2) - e(1, 1) * d(3, 2) - (1 + d(1, 1)) * e(3, 2)
    b[2, 0] = e(1, 2) * d(2, 3) + d(1, 2) * e(2, 3) - e(2, 2) * d(1, 3) - (1 + d(2, 2)) * e(1, 3)
    b[2, 1] = e(2, 1) * d(1, 3) + d(2, 1) * e(1, 3) - e(1, 1) * d(2, 3) - (1 + d(1, 1)) * e(2, 3)
    b[2, 2] = e(1, 1) * (1 + d(2, 2)) + (1 + d(1, 1)) * e(2, 2) - e(2, 1) * d(1, 2) - d(2, 1) * e(1, 2)
    return b


def rho_from_gradient(M: np.ndarray) -> np.ndarray:
    """Quadratic-plus-cubic remainder with ``det(I + M) = 1 + tr M - rho``."""
    d = lambda i, j: M[j - 1, i - 1]  # noqa: E731
    quad = 0.0
    for i in range(1, 4):
        for j in range(i + 1, 4):
            quad = quad - d(i, i) * d(j, j) + d(i, j) * d(j, i)
    cubic = (-d(1, 1) * d(2, 2) * d(3, 3) - d(3, 1) * d(1, 2) * d(2, 3) - d(2, 1) * d(3, 2) * d(1, 3)
             + d(1, 1) * d(3, 2) * d(2, 3) + d(3, 1) * d(2, 2) * d(1, 3) + d(2, 1) * d(1, 2) * d(3, 3))
    return quad + cubic


def det_from_gradient(M: np.ndarray) -> np.ndarray:
    F = M + np.eye(3).reshape((3, 3) + (1,) * (M.ndim - 2))
    return (F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
            - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
            + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0]))


def matvec(B: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(B v)_i = sum_j B_ij v_j`` pointwise."""
    return np.einsum("ij...,j...->i...", B, v)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,kj...->ij...", A, B)


def transpose(B: np.ndarray) -> np.ndarray:
    return np.swapaxes(B, 0, 1)


# ---------------------------------------------------------------------------
# Spectral helpers
# ---------------------------------------------------------------------------


def gradient_hat(grid: Grid3, vh: np.ndarray) -> np.ndarray:
    """``G[i, j] = d_j v^i`` in Fourier space for vector data ``vh`` of shape (3, ...)."""
    return np.stack([np.stack([grid.diff(vh[i], j) for j in range(3)]) for i in range(3)])


def gradient_physical(grid: Grid3, vh: np.ndarray) -> np.ndarray:
    return grid.ifft(gradient_hat(grid, vh))


def dealiased_hat(grid: Grid3, values: np.ndarray) -> np.ndarray:
    return grid.truncate(grid.fft(values))


def sup_norm_gradient(M: np.ndarray) -> float:
    """``max_y |grad Y(y)|`` with the pointwise Frobenius norm."""
    return float(np.sqrt(np.sum(M**2, axis=(0, 1))).max())


# ---------------------------------------------------------------------------
# Field-level API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DisplacementField:
    """Displacement ``Y`` of the map ``X(y) = y + Y(y)`` with a cached gradient."""

    Y: VectorField3

    @property
    def grid(self) -> Grid3:
        return self.Y.grid

    @cached_property
    def hat(self) -> np.ndarray:
        return self.Y.fourier()

    @cached_property
    def gradient(self) -> np.ndarray:
        return gradient_physical(self.grid, self.hat)

    @cached_property
    def grad_sup(self) -> float:
        return sup_norm_gradient(self.gradient)

    def require_invertible(self, bound: float = INVERTIBILITY_BOUND):
        if self.grad_sup > bound:
            raise ValueError(f"|grad Y|_inf = {self.grad_sup:.3g} exceeds {bound}")

    @classmethod
    def from_hat(cls, grid: Grid3, yh: np.ndarray) -> "DisplacementField":
        return cls(VectorField3.from_array(grid, yh, Space.FOURIER))


@dataclass(frozen=True)
class CofactorMatrix:
    grid: Grid3
    b: np.ndarray  # (3, 3, nx, ny, nz), physical

    def entry(self, i: int, j: int) -> SpectralField:
        """``b_ij`` with 1-based indices."""
        return SpectralField(self.grid, self.b[i - 1, j - 1])


def _disp(Y) -> DisplacementField:
    return Y if isinstance(Y, DisplacementField) else DisplacementField(Y)


def cofactor(Y) -> CofactorMatrix:
    D = _disp(Y)
    return CofactorMatrix(D.grid, cofactor_from_gradient(D.gradient))


def rho(Y) -> SpectralField:
    D = _disp(Y)
    return SpectralField(D.grid, dealiased_hat(D.grid, rho_from_gradient(D.gradient)), Space.FOURIER)


def _scalar_hat(f) -> np.ndarray:
    return f.fourier() if isinstance(f, (SpectralField, VectorField3)) else np.asarray(f)


def grad_Y(f, A: CofactorMatrix):
    """``(grad_Y f)_i = sum_j b_ji d_j f`` (dealiased, Fourier space).

    A vector input returns the matrix ``[i][a] = (grad_Y f^i)_a`` as an array.
    """
    g = A.grid
    fh = _scalar_hat(f)
    if fh.ndim == 4:
        return np.stack([_scalar_hat(grad_Y(SpectralField(g, fh[i], Space.FOURIER), A)) for i in range(3)])
    df = g.ifft(g.grad(fh))
    out = np.einsum("ji...,j...->i...", A.b, df)
    return VectorField3.from_array(g, dealiased_hat(g, out), Space.FOURIER)


def div_Y(v: VectorField3, A: CofactorMatrix) -> SpectralField:
    """``sum_ij b_ji d_j v^i`` formed pointwise, then truncated."""
    g = A.grid
    dv = gradient_physical(g, v.fourier())  # dv[i, j] = d_j v^i
    val = np.einsum("ji...,ij...->...", A.b, dv)
    return SpectralField(g, dealiased_hat(g, val), Space.FOURIER)


def div_Y_conservative(v: VectorField3, A: CofactorMatrix) -> SpectralField:
    """``div(A v)`` with ``(A v)_j = sum_i b_ji v^i``."""
    g = A.grid
    Av = matvec(A.b, v.physical())
    return SpectralField(g, g.div(dealiased_hat(g, Av)), Space.FOURIER)


def pullback_values(grid: Grid3, yh: np.ndarray) -> np.ndarray:
    """``b o X = (d3 Y^1, d3 Y^2, 1 + d3 Y^3)`` as samples."""
    bx = grid.ifft(np.stack([grid.diff(yh[i], 2) for i in range(3)]))
    bx[2] += 1.0
    return bx


def magnetic_pullback(Y, det_tol: float = 1e-8) -> tuple[VectorField3, float]:
    """Return ``b o X`` and the residual ``|A_Y (b o X) - e_3|_inf``."""
    D = _disp(Y)
    g = D.grid
    det = det_from_gradient(D.gradient)
    err = float(np.abs(det - 1).max())
    if err > det_tol:
        raise ValueError(f"det(I + grad Y) deviates from 1 by {err:.3g}")
    bx = pullback_values(g, D.hat)
    A = cofactor_from_gradient(D.gradient)
    r = matvec(A, bx)
    r[2] -= 1.0
    return VectorField3.from_array(g, bx), float(np.abs(r).max())


def _norms(grid: Grid3, values: np.ndarray) -> tuple[float, float]:
    linf = float(np.abs(values).max())
    l2 = float(math.sqrt(np.sum(values**2) * grid.volume / grid.npoints))
    return linf, l2


def tension_identity_residual(Y) -> dict:
    """Residual fields of the tension identities.

    ``residual1 = div[A (bX) (x) (bX)] - d3 (bX)`` and
    ``residual2 = grad_Y . d3^2 Y - div((A - I) d3^2 Y) - d3^2 rho(Y)``.
    """
    D = _disp(Y)
    g = D.grid
    M = D.gradient
    A = cofactor_from_gradient(M)
    bx = pullback_values(g, D.hat)
    w = matvec(A, bx)
    flux = dealiased_hat(g, w[:, None] * bx[None, :])  # flux[j, i] = w_j bx_i
    div_flux = np.stack([sum(g.diff(flux[j, i], j) for j in range(3)) for i in range(3)])
    d3bx = np.stack([g.diff(g.diff(D.hat[i], 2), 2) for i in range(3)])  # d3 bX = d3^2 Y
    r1 = g.ifft(div_flux - d3bx)
    d33Y_hat = d3bx
    d33Y = g.ifft(d33Y_hat)
    grad_d33 = gradient_physical(g, d33Y_hat)
    direct = dealiased_hat(g, np.einsum("ji...,ij...->...", A, grad_d33))
    Am = A - np.eye(3).reshape(3, 3, 1, 1, 1)
    cons = g.div(dealiased_hat(g, matvec(Am, d33Y)))
    rho_h = dealiased_hat(g, rho_from_gradient(M))
    r2 = g.ifft(direct - cons - g.diff(g.diff(rho_h, 2), 2))
    n1 = _norms(g, r1)
    n2 = _norms(g, r2)
    return {"residual1": r1, "residual2": r2, "residual1_linf": n1[0], "residual1_l2": n1[1],
            "residual2_linf": n2[0], "residual2_l2": n2[1]}


# ---------------------------------------------------------------------------
# Map inversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InverseMap:
    """``X^{-1}(x) = x + Z(x)`` at the requested points."""

    points: np.ndarray
    Z: np.ndarray  # (M, 3)
    iterations: int
    increment: float
    composition_residual: float


def invert_map(Y, points: np.ndarray | None = None, tol: float = 1e-12, maxiter: int = 100,
               check_gradient: bool = True) -> InverseMap:
    """Solve ``Z = -Y(x + Z)`` by Picard iteration at ``points`` (default: the grid)."""
    D = _disp(Y)
    g = D.grid
    if check_gradient:
        D.require_invertible()
    x = g.points() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    yh = D.hat
    Z = np.zeros_like(x)
    inc = math.inf
    for it in range(1, maxiter + 1):
        Znew = -fourier_eval(g, yh, x + Z).T
        inc = float(np.abs(Znew - Z).max())
        Z = Znew
        if inc <= tol:
            break
    else:
        raise RuntimeError(f"map inversion did not contract in {maxiter} steps (last increment {inc:.3g})")
    comp = float(np.abs(Z + fourier_eval(g, yh, x + Z).T).max())
    return InverseMap(x, Z, it, inc, comp)


# ---------------------------------------------------------------------------
# Volume-preserving test displacements
# ---------------------------------------------------------------------------


def shear_displacement(grid: Grid3, rng: np.random.Generator, band: int, amplitude: float,
                       order: tuple[int, int, int] | None = None) -> np.ndarray:
    """Exactly volume-preserving band-limited displacement (Fourier data, shape (3, ...)).

    With an axis order ``(a, b, c)``: ``Y^a = g1(y_b, y_c)``, ``Y^b = g2(y_c)``, ``Y^c = 0``,
    so ``grad Y`` is nilpotent and ``det(I + grad Y) = 1`` pointwise. ``amplitude`` is the
    resulting ``max |grad Y|`` (Frobenius).
    """
    if order is None:
        order = tuple(int(i) for i in rng.permutation(3))
    a, b, c = order
    mask = np.ones(grid.fshape, dtype=bool)
    for ax, k in enumerate(grid.kint):
        mask &= np.abs(k) <= band
    yh = np.zeros((3,) + grid.fshape, dtype=complex)
    for comp, free in ((a, (b, c)), (b, (c,))):
        m = mask.copy()
        for ax in range(3):
            if ax not in free:
                m &= grid.kint[ax] == 0
        raw = (rng.standard_normal(grid.fshape) + 1j * rng.standard_normal(grid.fshape)) * m
        raw[0, 0, 0] = 0.0
        yh[comp] = grid.fft(grid.ifft(raw))
    M = gradient_physical(grid, yh)
    scale = sup_norm_gradient(M)
    return yh * (amplitude / scale if scale > 0 else 0.0)


def random_displacement(grid: Grid3, rng: np.random.Generator, band: int, amplitude: float) -> np.ndarray:
    """General band-limited displacement with ``max |grad Y| = amplitude`` (not volume-preserving)."""
    from .spectral import random_hat

    yh = random_hat(grid, rng, band, 3)
    scale = sup_norm_gradient(gradient_physical(grid, yh))
    return yh * (amplitude / scale)


# ---------------------------------------------------------------------------
# Identity suite
# ---------------------------------------------------------------------------


def identity_residuals(Y, v: VectorField3 | None = None, volume_preserving: bool = True) -> list[dict]:
    """Residual records ``{identity, linf, l2}`` for every static identity that applies."""
    D = _disp(Y)
    g = D.grid
    M = D.gradient
    A = cofactor_from_gradient(M)
    det = det_from_gradient(M)
    recs = []

    def rec(name, values):
        linf, l2 = _norms(g, np.asarray(values))
        recs.append({"identity": name, "linf": linf, "l2": l2})

    bh = dealiased_hat(g, A)
    piola = np.stack([g.ifft(sum(g.diff(bh[i, j], i) for i in range(3))) for j in range(3)])
    rec("piola_column_divergence", piola)
    F = M + np.eye(3).reshape(3, 3, 1, 1, 1)
    adj = matmul(F, A) - det * np.eye(3).reshape(3, 3, 1, 1, 1)
    rec("adjugate", adj)
    divY = g.ifft(g.div(D.hat))
    rec("determinant_expansion", det - 1 - divY + rho_from_gradient(M))
    if v is not None:
        Ab = CofactorMatrix(g, A)
        rec("divergence_forms", g.ifft(div_Y(v, Ab).fourier() - div_Y_conservative(v, Ab).fourier()))
    if volume_preserving:
        rec("determinant_one", det - 1)
        bx = pullback_values(g, D.hat)
        r = matvec(A, bx)
        r[2] -= 1.0
        rec("magnetic_pullback", r)
        t = tension_identity_residual(D)
        rec("tension_flux", t["residual1"])
        rec("tension_rho", t["residual2"])
        rec("divergence_equals_rho", divY - g.ifft(dealiased_hat(g, rho_from_gradient(M))))
    return recs
