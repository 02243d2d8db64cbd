import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mhdlab import geometry as G
from mhdlab.spectral import Grid3, Space, SpectralField, VectorField3, make_rng

EYE = np.eye(3)


def _const(M, grid):
    return np.broadcast_to(np.asarray(M, float)[:, :, None, None, None], (3, 3) + grid.shape).copy()


def _vec(grid, yh):
    return VectorField3.from_array(grid, yh, Space.FOURIER)


def _shear3(grid, amp=0.2):
    """Y = (g(y3), 0, 0) with g = amp * sin(y3 * 2pi / Lz)."""
    w = 2 * math.pi / grid.Lz
    z = grid.mesh()[2]
    Y = np.zeros((3,) + grid.shape)
    Y[0] = amp * np.sin(w * z)
    return VectorField3.from_array(grid, Y), w


small_matrix = arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3))


@given(M=small_matrix)
def test_pointwise_adjugate_and_determinant(M):
    A = G.cofactor_from_gradient(M)
    F = EYE + M
    det = np.linalg.det(F)
    assert np.abs(F @ A - det * EYE).max() <= 1e-12
    assert G.det_from_gradient(M) == pytest.approx(det, abs=1e-13)
    assert abs(det - 1 - np.trace(M) + G.rho_from_gradient(M)) <= 1e-13


@given(M=small_matrix, Mt=small_matrix)
def test_cofactor_rate_matches_finite_difference(M, Mt):
    h = 1e-6
    fd = (G.cofactor_from_gradient(M + h * Mt) - G.cofactor_from_gradient(M - h * Mt)) / (2 * h)
    assert np.abs(G.cofactor_rate(M, Mt) - fd).max() <= 1e-8


def test_cofactor_examples():
    assert np.array_equal(G.cofactor_from_gradient(np.zeros((3, 3))), EYE)
    a = 0.3
    M = np.zeros((3, 3))
    M[0, 1] = a  # Y = (a y2, 0, 0)
    want = EYE.copy()
    want[0, 1] = -a
    assert np.abs(G.cofactor_from_gradient(M) - want).max() == 0


def test_rho_examples():
    a, b = 0.3, -0.7
    M = np.zeros((3, 3))
    M[0, 1], M[1, 0] = a, b  # Y = (a y2, b y1, 0)
    assert G.rho_from_gradient(M) == pytest.approx(a * b, abs=1e-15)
    M = np.zeros((3, 3))
    M[0, 2] = 0.8
    assert G.rho_from_gradient(M) == 0


def test_grad_Y_linear_shear_hand_expansion(grid16):
    g = grid16
    a = 0.25
    M = np.zeros((3, 3))
    M[0, 1] = a
    A = G.CofactorMatrix(g, _const(G.cofactor_from_gradient(M), g))
    f = SpectralField.from_function(g, lambda x, y, z: np.sin(2 * x))
    got = G.grad_Y(f, A).physical()
    d1 = 2 * np.cos(2 * g.mesh()[0])
    assert np.abs(got[0] - d1).max() <= 1e-12
    assert np.abs(got[1] + a * d1).max() <= 1e-12
    assert np.abs(got[2]).max() <= 1e-12


def test_grad_Y_identity_for_zero_displacement(grid16, rng):
    from mhdlab.spectral import random_hat

    g = grid16
    A = G.cofactor(_vec(g, np.zeros((3,) + g.fshape, complex)))
    fh = random_hat(g, rng, 4)[0]
    got = G.grad_Y(SpectralField(g, fh, Space.FOURIER), A).fourier()
    assert np.abs(got - g.grad(fh)).max() <= 1e-12 * np.abs(g.grad(fh)).max()


@given(seed=st.integers(0, 10**6), amp=st.floats(0.05, 0.5))
def test_identities_on_general_displacements(seed, amp):
    from mhdlab.spectral import random_hat

    g = Grid3(16, 16, 16)
    r = make_rng(seed)
    Y = _vec(g, G.random_displacement(g, r, 2, amp))
    v = _vec(g, random_hat(g, r, 3, 3))
    recs = {x["identity"]: x for x in G.identity_residuals(Y, v, volume_preserving=False)}
    assert set(recs) == {"piola_column_divergence", "adjugate", "determinant_expansion", "divergence_forms"}
    for name, x in recs.items():
        assert x["linf"] <= 1e-10, name


@given(seed=st.integers(0, 10**6), amp=st.floats(0.05, 0.5))
def test_identities_on_volume_preserving_displacements(seed, amp):
    g = Grid3(16, 16, 16)
    Y = _vec(g, G.shear_displacement(g, make_rng(seed), 2, amp))
    assert G.DisplacementField(Y).grad_sup == pytest.approx(amp, rel=1e-12)
    for x in G.identity_residuals(Y):
        assert x["linf"] <= 1e-10, x["identity"]


def test_magnetic_pullback_examples(grid16):
    g = grid16
    bx, res = G.magnetic_pullback(_vec(g, np.zeros((3,) + g.fshape, complex)))
    assert res == 0 and np.array_equal(bx.physical(), np.stack([np.zeros(g.shape)] * 2 + [np.ones(g.shape)]))
    Y, w = _shear3(g)
    bx, res = G.magnetic_pullback(Y)
    z = g.mesh()[2]
    assert res <= 1e-10
    assert np.abs(bx.physical()[0] - 0.2 * w * np.cos(w * z)).max() <= 1e-12
    with pytest.raises(ValueError):
        G.magnetic_pullback(_vec(g, G.random_displacement(g, make_rng(1), 2, 0.4)))


def test_tension_residual_examples(grid16):
    g = grid16
    zero = G.tension_identity_residual(_vec(g, np.zeros((3,) + g.fshape, complex)))
    assert zero["residual1_linf"] == 0 and zero["residual2_linf"] == 0
    Y, _ = _shear3(g)
    out = G.tension_identity_residual(Y)
    assert out["residual1_linf"] <= 1e-10 and out["residual2_linf"] <= 1e-10


def test_invert_map_examples(grid16):
    g = grid16
    z = np.zeros((3,) + g.fshape, complex)
    inv = G.invert_map(_vec(g, z))
    assert np.all(inv.Z == 0)
    c = np.array([0.3, -1.1, 2.0])
    const = z.copy()
    const[:, 0, 0, 0] = c * g.npoints
    inv = G.invert_map(_vec(g, const))
    assert np.abs(inv.Z + c).max() <= 1e-12
    Y, w = _shear3(g, 0.3)
    pts = make_rng(4).uniform(0, 2 * math.pi, (40, 3))
    inv = G.invert_map(Y, pts)
    assert np.abs(inv.Z[:, 0] + 0.3 * np.sin(w * pts[:, 2])).max() <= 1e-12
    assert np.abs(inv.Z[:, 1:]).max() <= 1e-14
    assert inv.composition_residual <= 1e-10


def test_invert_map_general_and_errors(grid16):
    g = grid16
    Y = _vec(g, G.random_displacement(g, make_rng(2), 2, 0.45))
    inv = G.invert_map(Y)
    assert inv.composition_residual <= 1e-10
    big = _vec(g, G.random_displacement(g, make_rng(2), 2, 0.9))
    with pytest.raises(ValueError):
        G.invert_map(big)
    with pytest.raises(RuntimeError):
        G.invert_map(big, check_gradient=False, maxiter=3)
