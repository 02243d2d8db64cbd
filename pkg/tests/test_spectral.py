import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mhdlab.fldio import read_fld, vector_from, write_fld
from mhdlab.spectral import (
    Grid3,
    Space,
    band_mask,
    SpectralField,
    VectorField3,
    dealias,
    derivative,
    divergence,
    fourier_eval,
    inner_product,
    laplacian,
    leray_project,
    make_rng,
    random_hat,
    random_solenoidal_hat,
    sample_at,
    sobolev_norm,
    transform,
)

even = st.integers(2, 6).map(lambda n: 2 * n)
lengths = st.floats(0.5, 30.0)


def test_grid_rejects_odd_or_small():
    with pytest.raises(ValueError):
        Grid3(5, 8, 8)
    with pytest.raises(ValueError):
        Grid3(2, 8, 8)
    with pytest.raises(ValueError):
        Grid3(8, 8, 8, Lz=0.0)


def test_constant_field_has_only_zero_mode(grid16):
    h = SpectralField(grid16, np.ones(grid16.shape)).fourier()
    assert h[0, 0, 0] == pytest.approx(grid16.npoints)
    h[0, 0, 0] = 0
    assert np.abs(h).max() < 1e-12


def test_cosine_has_two_conjugate_modes():
    g = Grid3(8, 8, 8, Lx=3.0)
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(2 * np.pi * x / g.Lx))
    h = f.fourier()
    assert h[1, 0, 0] == pytest.approx(g.npoints / 2)
    assert h[-1, 0, 0] == pytest.approx(g.npoints / 2)
    h[1, 0, 0] = h[-1, 0, 0] = 0
    assert np.abs(h).max() < 1e-10


@given(nx=even, ny=even, nz=even, L=lengths, seed=st.integers(0, 2**31))
def test_round_trip(nx, ny, nz, L, seed):
    g = Grid3(nx, ny, nz, Lx=L)
    a = make_rng(seed).standard_normal(g.shape)
    back = transform(transform(SpectralField(g, a), "fourier"), "physical").data
    assert np.abs(back - a).max() <= 1e-13 * np.abs(a).max()


@given(seed=st.integers(0, 2**31), L=lengths)
def test_parseval(seed, L):
    g = Grid3(8, 10, 12, Lz=L)
    r = make_rng(seed)
    a, b = r.standard_normal(g.shape), r.standard_normal(g.shape)
    phys = float(np.sum(a * b)) * g.volume / g.npoints
    four = inner_product(SpectralField(g, a), SpectralField(g, b))
    assert four == pytest.approx(phys, rel=1e-12, abs=1e-12 * g.volume)


def test_derivative_of_sine(grid16):
    g = Grid3(16, 16, 16, Lx=5.0)
    f = SpectralField.from_function(g, lambda x, y, z: np.sin(2 * np.pi * x / g.Lx))
    d = derivative(f, 1).physical()
    x = g.mesh()[0]
    assert np.abs(d - 2 * np.pi / g.Lx * np.cos(2 * np.pi * x / g.Lx)).max() <= 1e-12


def test_vertical_derivative_of_x3_independent_field_is_zero(grid16, rng):
    a = rng.standard_normal(grid16.shape[:2])[:, :, None] * np.ones(grid16.shape)
    assert np.all(derivative(SpectralField(grid16, a), 3).fourier() == 0)


def test_laplacian_symbol(grid16):
    g = grid16
    k = (2, -1, 3)
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(k[0] * x + k[1] * y + k[2] * z))
    lap = laplacian(f).physical()
    assert np.abs(lap + 14 * f.physical()).max() <= 1e-11


def test_odd_derivative_zeroes_nyquist():
    g = Grid3(8, 8, 8)
    h = np.zeros(g.fshape, complex)
    h[4, 0, 0] = 1.0
    f = SpectralField(g, h, Space.FOURIER)
    assert np.all(derivative(f, 1).fourier() == 0)
    assert np.abs(derivative(f, 1, 2).fourier()[4, 0, 0]) == pytest.approx(16.0)


def test_leray_annihilates_gradients_and_is_idempotent(grid16, rng):
    g = grid16
    phi = random_hat(g, rng, 5)[0]
    grad = VectorField3.from_array(g, g.grad(phi), Space.FOURIER)
    assert np.abs(leray_project(grad).fourier()).max() <= 1e-12 * np.abs(g.grad(phi)).max()
    v = VectorField3.from_array(g, random_hat(g, rng, 5, 3), Space.FOURIER)
    p1 = leray_project(v)
    p2 = leray_project(p1)
    assert np.abs(p2.fourier() - p1.fourier()).max() <= 1e-12 * np.abs(p1.fourier()).max()
    assert np.abs(divergence(p1).physical()).max() <= 1e-12


def test_leray_single_mode_example():
    g = Grid3(8, 8, 8, Lx=3.0)
    h = np.zeros((3,) + g.fshape, complex)
    h[0, 1, 0, 0] = 1.0
    out = leray_project(VectorField3.from_array(g, h, Space.FOURIER)).fourier()
    assert abs(out[0, 1, 0, 0]) <= 1e-15


def test_derivative_commutes_with_leray_on_solenoidal(grid16, rng):
    g = grid16
    v = VectorField3.from_array(g, random_solenoidal_hat(g, rng, 5), Space.FOURIER)
    d = VectorField3(tuple(derivative(c, 1) for c in v))
    a = leray_project(d).fourier()
    assert np.abs(a - d.fourier()).max() <= 1e-12 * np.abs(d.fourier()).max()


def test_dealias_keeps_band_and_kills_nyquist(grid16, rng):
    g = grid16
    h = random_hat(g, rng, g.nx // 3)[0] * band_mask(g, g.nx // 3)
    f = SpectralField(g, h, Space.FOURIER)
    assert np.array_equal(dealias(f).fourier(), h)
    ny = np.zeros(g.fshape, complex)
    ny[8, 0, 0] = 1.0
    assert np.all(dealias(SpectralField(g, ny, Space.FOURIER)).fourier() == 0)


def test_dealiased_product_is_exact(grid16, rng):
    g = grid16
    a = SpectralField(g, random_hat(g, rng, 2)[0], Space.FOURIER)
    b = SpectralField(g, random_hat(g, rng, 2)[0], Space.FOURIER)
    prod = dealias(SpectralField(g, a.physical() * b.physical())).physical()
    pts = make_rng(7).uniform(0, 2 * np.pi, (50, 3))
    exact = sample_at(a, pts) * sample_at(b, pts)
    got = sample_at(SpectralField(g, prod), pts)
    assert np.abs(got - exact).max() <= 1e-12


def test_sobolev_single_mode_and_pythagoras():
    g = Grid3(16, 16, 16, Lz=4.0)
    w = 2 * np.pi * 3 / g.Lz
    f = SpectralField.from_function(g, lambda x, y, z: 2.0 * np.cos(w * z))
    l2 = sobolev_norm(f, 0)
    assert l2 == pytest.approx(math.sqrt(2.0 * g.volume), rel=1e-13)
    assert sobolev_norm(f, 1.7) == pytest.approx(w**1.7 * l2, rel=1e-12)
    h = SpectralField.from_function(g, lambda x, y, z: np.sin(2 * x))
    tot = SpectralField(g, f.physical() + h.physical())
    assert sobolev_norm(tot, 0.5) == pytest.approx(math.hypot(sobolev_norm(f, 0.5), sobolev_norm(h, 0.5)), rel=1e-12)
    assert sobolev_norm(SpectralField.zeros(g), -0.3) == 0.0


def test_sobolev_negative_requires_zero_mean(grid16):
    with pytest.raises(ValueError):
        sobolev_norm(SpectralField(grid16, np.ones(grid16.shape)), -0.5)


def test_sample_at_grid_points_and_single_mode(grid16, rng):
    g = grid16
    f = SpectralField(g, random_hat(g, rng, 7)[0], Space.FOURIER)
    pts = g.points()[::37]
    vals = f.physical().reshape(-1)[::37]
    assert np.abs(sample_at(f, pts) - vals).max() <= 1e-12
    m = SpectralField.from_function(g, lambda x, y, z: np.cos(x - 2 * y + 3 * z))
    p = make_rng(3).uniform(-5, 15, (40, 3))
    assert np.abs(sample_at(m, p) - np.cos(p[:, 0] - 2 * p[:, 1] + 3 * p[:, 2])).max() <= 1e-12


def test_sample_at_matches_refined_grid(rng):
    g = Grid3(16, 16, 16)
    fine = Grid3(32, 32, 32)
    h = random_hat(g, rng, 5)[0]
    hf = np.zeros(fine.fshape, complex)
    for i in range(-5, 6):
        for j in range(-5, 6):
            hf[i, j, :6] = h[i, j, :6] * 8
    mid = fine.points().reshape(32, 32, 32, 3)[1::2, 1::2, 1::2].reshape(-1, 3)
    got = sample_at(SpectralField(g, h, Space.FOURIER), mid)
    want = fine.ifft(hf)[1::2, 1::2, 1::2].reshape(-1)
    assert np.abs(got - want).max() <= 1e-10


def test_trilinear_fallback_is_second_order():
    errs = []
    for n in (16, 32):
        g = Grid3(n, n, n)
        f = SpectralField.from_function(g, lambda x, y, z: np.sin(x) * np.cos(y + z))
        p = make_rng(2).uniform(0, 2 * np.pi, (200, 3))
        exact = np.sin(p[:, 0]) * np.cos(p[:, 1] + p[:, 2])
        errs.append(np.abs(sample_at(f, p, "trilinear") - exact).max())
    assert math.log2(errs[0] / errs[1]) > 1.7


def test_fourier_eval_vectorized(grid16, rng):
    g = grid16
    hats = random_hat(g, rng, 4, 2)
    p = make_rng(5).uniform(0, 7, (9, 3))
    both = fourier_eval(g, hats, p)
    one = fourier_eval(g, hats[1], p)
    assert np.abs(both[1] - one).max() <= 1e-14


def test_fld_round_trip(tmp_path, rng):
    g = Grid3(8, 6, 4, Lx=1.0, Ly=2.0, Lz=3.0)
    v = VectorField3.from_array(g, rng.standard_normal((3,) + g.shape))
    s = SpectralField(g, rng.standard_normal(g.shape))
    path = write_fld(tmp_path / "a.fld", {"u": v, "p": s}, time=0.25)
    g2, fields, header = read_fld(path)
    assert g2 == g and header["time"] == 0.25
    assert np.array_equal(vector_from(fields, "u").physical(), v.physical())
    assert np.array_equal(fields["p"].physical(), s.physical())
    raw = path.read_bytes()
    assert raw[:8] == b"MHDFLD01"
    # x-fastest ordering: the first samples run along axis 0
    hlen = int.from_bytes(raw[8:16], "little")
    first = np.frombuffer(raw[16 + hlen:16 + hlen + 16], "<f8")
    assert np.array_equal(first, v.physical()[0][:2, 0, 0])


def test_fld_rejects_garbage(tmp_path):
    p = tmp_path / "x.fld"
    p.write_bytes(b"NOTAFILE" + bytes(8))
    with pytest.raises(ValueError):
        read_fld(p)
