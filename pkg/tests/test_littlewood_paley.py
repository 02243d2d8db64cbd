import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mhdlab import littlewood_paley as lp
from mhdlab.spectral import Grid3, Space, SpectralField, VectorField3, make_rng, random_hat, sobolev_norm

FROZEN_RATIO = {
    -0.375: (0.8137827573348851, 1.208908619559883),
    0.5: (0.5780604340009547, 0.8923942574026312),
    1.5: (0.3720722159479583, 0.7285017557091266),
}

GRID = Grid3(32, 32, 32, Lz=4 * 2 * math.pi)


def _field(seed, band=8, grid=GRID, zero_vertical_mean=False):
    h = random_hat(grid, make_rng(seed), band)[0]
    if zero_vertical_mean:
        h[:, :, 0] = 0.0
    return SpectralField(grid, h, Space.FOURIER)


def _norm(f):
    return math.sqrt(f.grid.norm2(f.fourier()))


@given(t=st.floats(1e-6, 1e6))
def test_partition_of_unity_pointwise(t):
    p = lp.PROFILE
    full = sum(p.phi(t / 2.0**j) for j in range(-30, 30))
    low = p.chi(t) + sum(p.phi(t / 2.0**j) for j in range(0, 30))
    assert abs(full - 1) <= 1e-12
    assert abs(low - 1) <= 1e-12


def test_partition_of_unity_on_grid_magnitudes():
    rng = lp.block_range(GRID)
    total = sum(lp.block_multiplier(GRID, "isotropic", j) for j in rng.js())
    live = GRID.kmag > 0
    assert np.abs(total[live] - 1).max() <= 1e-12
    assert np.all(total[~live] == 0)


def test_profile_supports_and_table_mode():
    p = lp.PROFILE
    t = np.linspace(0, 4, 4001)
    assert np.all(p.phi(t[(t < 0.75) | (t > 8 / 3)]) == 0)
    assert np.all(p.chi(t[t > 4 / 3]) == 0)
    tab = lp.DyadicProfile(mode="table")
    assert np.abs(tab.chi(t) - p.chi(t)).max() < 1e-9
    assert lp.N0 == 1


def test_single_unit_mode_hits_at_most_two_blocks():
    g = Grid3(16, 16, 16)
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(x))
    active = [j for j in lp.block_range(g).js() if np.abs(lp.block(f, "isotropic", j).fourier()).max() > 1e-12 * g.npoints]
    assert 1 <= len(active) <= 2 and all(2.0**-j * 1 >= 0.75 and 2.0**-j <= 8 / 3 for j in active)


def test_blocks_sum_to_field_minus_mean():
    f = SpectralField(GRID, make_rng(3).standard_normal(GRID.shape))
    total = sum(lp.block(f, "isotropic", j).fourier() for j in lp.block_range(GRID).js())
    want = f.fourier().copy()
    want[0, 0, 0] = 0
    assert np.abs(total - want).max() <= 1e-12 * np.abs(want).max()


@given(seed=st.integers(0, 10**6), j=st.integers(-3, 5), gap=st.integers(2, 5))
def test_almost_orthogonality(seed, j, gap):
    f = _field(seed)
    out = lp.block(lp.block(f, "isotropic", j), "isotropic", j + gap)
    assert _norm(out) <= 1e-12 * _norm(f)


def test_paraproduct_localization():
    g = Grid3(32, 32, 32)
    a = _field(1, band=10, grid=g)
    b = _field(2, band=10, grid=g)
    for j in range(0, 4):
        prod = lp.low_pass(a, "isotropic", j - 1).physical() * lp.block(b, "isotropic", j).physical()
        P = SpectralField(g, prod)
        for k in range(-3, 10):
            if abs(k - j) >= 5:
                assert _norm(lp.block(P, "isotropic", k)) <= 1e-12 * _norm(a) * _norm(b)


def test_low_pass_telescopes():
    f = _field(4)
    rng = lp.block_range(GRID)
    for j in (-1, 1, 3):
        want = sum(lp.block(f, "isotropic", i).fourier() for i in range(rng.jmin, j))
        want[0, 0, 0] += f.fourier()[0, 0, 0]
        assert np.abs(lp.low_pass(f, "isotropic", j).fourier() - want).max() <= 1e-12 * np.abs(f.fourier()).max()
    hi = lp.low_pass(f, "isotropic", rng.jmax + 1).fourier()
    assert np.abs(hi - f.fourier()).max() <= 1e-12 * np.abs(f.fourier()).max()
    lo = lp.low_pass(f, "isotropic", rng.jmin - 1).fourier()
    lo[0, 0, 0] = 0
    assert np.abs(lo).max() == 0


def test_block_range_matches_formula_and_example():
    r = lp.block_range(GRID)
    assert (r.jmin, r.jmax) == (-4, 6)
    assert (r.kmin, r.kmax) == (-4, 3)
    assert (r.hmin, r.hmax) == (-2, 5)
    assert r.jmin <= math.floor(math.log2(2 * math.pi / max(GRID.lengths))) - 2


@pytest.mark.parametrize("s", sorted(FROZEN_RATIO))
def test_ratio_bounds_regression(s):
    lo, hi = lp.ratio_bounds(s)
    assert (lo, hi) == pytest.approx(FROZEN_RATIO[s], rel=1e-12)


@given(seed=st.integers(0, 10**6), s=st.sampled_from(sorted(FROZEN_RATIO)))
def test_besov_sobolev_ratio_in_frozen_interval(seed, s):
    f = _field(seed)
    lo, hi = FROZEN_RATIO[s]
    r = lp.besov_norm(f, s, 2, 2) / sobolev_norm(f, s)
    assert lo - 1e-12 <= r <= hi + 1e-12


def test_besov_single_mode_two_block_bound():
    g = Grid3(16, 16, 16)
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(3 * x))
    for p in (1, 2, 4, math.inf):
        js, vals = lp.iso_block_lp(f, p)
        assert np.count_nonzero(vals > 1e-12 * vals.max()) <= 2
        s = 0.7
        b = lp.besov_norm(f, s, p, 1)
        base = lp.lp_norm(g, f.physical(), p)
        assert b >= 3**s * base * 2.0**-abs(s) * 0.999 and b <= 2 * 3**s * base * 2.0 ** abs(s)
    assert lp.besov_norm(SpectralField.zeros(g), 1.0) == 0.0
    with pytest.raises(ValueError):
        lp.besov_norm(f, 0.0, 0.5, 2)


@given(seed=st.integers(0, 10**6), t1=st.floats(-0.5, 2.0), t2=st.floats(0.1, 2.0))
def test_embedding_inequality(seed, t1, t2):
    f = _field(seed, zero_vertical_mean=True)
    lhs = lp.aniso_norm(f, t1, t2)
    rhs = lp.embedding_constant(t2) * lp.besov_norm(f, t1 + t2, 2, 1)
    assert lhs <= rhs * (1 + 1e-12)


@given(seed=st.integers(0, 10**6), s=st.sampled_from(sorted(FROZEN_RATIO)))
def test_aniso_dominates_sobolev(seed, s):
    f = _field(seed, zero_vertical_mean=True)
    assert lp.aniso_norm(f, s, 0.0) >= FROZEN_RATIO[s][0] * sobolev_norm(f, s) * (1 - 1e-12)


def test_aniso_product_mode_closed_form():
    g = GRID
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(2 * x) * np.cos(0.75 * z))
    pairs, e = lp.aniso_block_energies(f)
    active = pairs[e > 1e-28]
    assert 1 <= len(active) <= 4
    kmag = math.hypot(2, 0.75)
    l2 = _norm(f)
    s1, s2 = 0.8, -0.3
    want = sum(2.0 ** (j * s1 + k * s2) * lp.PROFILE.phi(2.0**-j * kmag) * lp.PROFILE.phi(2.0**-k * 0.75) * l2
               for j, k in active)
    assert lp.aniso_norm(f, s1, s2) == pytest.approx(want, rel=1e-12)


def test_aniso_vertical_dc_sentinel():
    g = GRID
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(2 * x))
    pairs, e = lp.aniso_block_energies(f)
    active = pairs[e > 1e-28]
    assert np.all(active[:, 1] == lp.block_range(g).kmin - 1)


def test_chemin_lerner_reductions():
    f = _field(5)
    assert lp.chemin_lerner_norm([f], [0.0], math.inf, 0.5) == pytest.approx(lp.besov_norm(f, 0.5))
    times = np.linspace(0, 2.0, 9)
    series = [f] * len(times)
    assert lp.chemin_lerner_norm(series, times, math.inf, 0.5) == pytest.approx(lp.besov_norm(f, 0.5))
    assert lp.chemin_lerner_norm(series, times, 2, 0.5) == pytest.approx(2.0**0.5 * lp.besov_norm(f, 0.5))
    with pytest.raises(ValueError):
        lp.chemin_lerner_norm([], [], 2, 0.5)
    with pytest.raises(ValueError):
        lp.chemin_lerner_norm(series, np.r_[times[:-1], 5.0], 2, 0.5)


def test_chemin_lerner_two_mode_hand_integral():
    g = Grid3(16, 16, 16)
    a = SpectralField.from_function(g, lambda x, y, z: np.cos(x))
    b = SpectralField.from_function(g, lambda x, y, z: np.cos(6 * y))
    times = np.linspace(0, 1, 2001)
    series = [SpectralField(g, np.exp(-t) * a.physical() + t * b.physical()) for t in times]
    s = 1.0
    ja, va = lp.iso_block_lp(a, 2)
    jb, vb = lp.iso_block_lp(b, 2)
    # L^2 in time of e^{-t} and t on [0, 1]
    ea = math.sqrt((1 - math.exp(-2)) / 2)
    eb = math.sqrt(1 / 3)
    w = 2.0 ** (ja * s)
    want = math.sqrt(np.sum((w * va * ea) ** 2) + np.sum((w * vb * eb) ** 2))
    got = lp.chemin_lerner_norm(series, times, 2, s, 2, 2)
    assert got == pytest.approx(want, rel=1e-6)


def test_bernstein():
    g = GRID
    f = SpectralField.from_function(g, lambda x, y, z: np.cos(2 * x + 0 * y))
    rows = lp.bernstein_check(f, 1)
    assert all(r["ok"] for r in rows)
    d1 = next(r for r in rows if r["check"] == "direct_d1^1d2^0")
    assert d1["empirical"] <= 8 / 3
    assert next(r for r in rows if r["check"] == "vertical_derivative_norm")["empirical"] == 0
    h = random_hat(g, make_rng(9), 12)[0] * lp.block_multiplier(g, "horizontal", 2)
    rows = lp.bernstein_check(SpectralField(g, h, Space.FOURIER), 2)
    assert all(r["ok"] for r in rows)


def test_vector_fields_use_component_sum():
    v = VectorField3((_field(1), _field(2), _field(3)))
    tot = math.sqrt(sum(lp.besov_norm(c, 0.5) ** 2 for c in v))
    assert lp.besov_norm(v, 0.5) == pytest.approx(tot, rel=1e-12)
