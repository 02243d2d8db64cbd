import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhdlab import euler as E
from mhdlab import lagrangian as LG
from mhdlab import linear as L
from mhdlab.geometry import shear_displacement
from mhdlab.littlewood_paley import besov_norm
from mhdlab.spectral import Grid3, make_rng, random_hat, random_solenoidal_hat

G16 = Grid3(16, 16, 16)
# quartic products of band-2 data need a 24-point grid to stay inside the 2/3 band
G24 = Grid3(24, 24, 24)


def _solenoidal(g, seed, amp, band=3):
    return g.truncate(random_solenoidal_hat(g, make_rng(seed), band)) * amp


def _paired(seed, grad=0.1, vel=0.1, grid=G16):
    return LG.paired_data(grid, make_rng(seed), grad, vel)


def test_zero_state_pressure_and_evolution():
    z = LG.LagrangianState.zero(G16)
    sol = LG.pressure_solve(G16, z.yh, z.vh)
    assert np.all(sol.qh == 0)
    r = LG.run(z, 0.01, 0.05)
    assert np.all(r.final.yh == 0) and np.all(r.final.vh == 0) and np.all(r.final.qh == 0)


def test_pressure_at_zero_displacement_matches_eulerian_pressure():
    g = G16
    vh = _solenoidal(g, 1, 0.3)
    q = LG.pressure_solve(g, np.zeros_like(vh), vh).qh
    eul = E.MhdState(g, E.MhdState.steady(g).bh, vh)
    assert np.abs(g.grad(q) - E.pressure_gradient(eul)).max() <= 1e-12 * np.abs(g.grad(q)).max()


def test_pressure_contraction_at_moderate_gradient():
    g = G16
    rng = make_rng(2)
    yh = shear_displacement(g, rng, 2, 0.3)
    vh = _solenoidal(g, 3, 0.2, band=2)
    sol = LG.pressure_solve(g, yh, vh)
    assert 0 < sol.contraction <= 0.6 and sol.increment <= 1e-10


def test_pressure_failure_reports_contraction():
    g = G16
    yh = shear_displacement(g, make_rng(2), 2, 0.3)
    with pytest.raises(LG.PressureError, match="contraction"):
        LG.pressure_solve(g, yh, _solenoidal(g, 3, 0.2, band=2), maxiter=3)


@settings(max_examples=10)
@given(seed=st.integers(0, 10**6), amp=st.floats(0.05, 0.4))
def test_source_forms_agree(seed, amp):
    g = G24
    rng = make_rng(seed)
    yh = shear_displacement(g, rng, 2, amp)
    vh = random_hat(g, rng, 2, 3) * 0.2
    out = LG.source_f(g, yh, vh, random_hat(g, rng, 2)[0])
    assert out["mismatch"] <= 1e-9
    assert np.all(out["f"][:, 0, 0, 0] == 0)


def test_source_zero_displacement():
    g = G16
    rng = make_rng(4)
    vh = random_hat(g, rng, 3, 3)
    qh = random_hat(g, rng, 3)[0]
    out = LG.source_f(g, np.zeros_like(vh), vh, qh)
    assert np.abs(out["fbar"]).max() == 0
    assert np.abs(out["ftilde"] + g.grad(qh)).max() <= 1e-12 * np.abs(g.grad(qh)).max()


def test_source_vertical_shear_hand_expansion():
    g = G16
    a = 0.2
    x, y, z = g.mesh()
    Y = np.zeros((3,) + g.shape)
    Y[0] = a * np.sin(z)  # Y = (g(y3), 0, 0)
    c = np.array([0.3, -0.5, 0.7])
    phase = x + y
    V = c[:, None, None, None] * np.cos(phase)
    kin = LG.Kinematics.of(g, g.fft(Y), g.fft(V))
    gp, gpp = a * np.cos(z), -a * np.sin(z)
    # grad_Y = (d1, d2, d3 - g' d1), so fbar = -g'' d1 V - 2 g' d1 d3 V + g'^2 d1^2 V
    d1V = -c[:, None, None, None] * np.sin(phase)
    d11V = -V
    want = -gpp * d1V + gp**2 * d11V
    for form in (LG.source_bar_divergence(g, kin), LG.source_bar_direct(g, kin, g.fft(V))):
        assert np.abs(g.ifft(form) - want).max() <= 1e-10


def test_linear_flag_reproduces_exact_linear_evolution():
    g = G16
    rng = make_rng(5)
    yh, vh = random_hat(g, rng, 3, 3), random_hat(g, rng, 3, 3)
    opts = LG.StepOptions(linear=True, check=False)
    r = LG.run(LG.LagrangianState(g, yh, vh), 0.05, 0.5, cadence=10, opts=opts)
    ex = L.solve_linear_exact(L.LinearState.from_hats(g, yh, vh), None, (0.5,))[0]
    ey, ev = ex.hats()
    scale = max(np.abs(ey).max(), np.abs(ev).max())
    assert np.abs(r.final.yh - ey).max() <= 1e-10 * scale
    assert np.abs(r.final.vh - ev).max() <= 1e-10 * scale


def test_second_order_in_time():
    p = _paired(6, grad=0.2, vel=0.2)
    opts = LG.StepOptions(check=False)
    T = 0.2
    ref = LG.run(p.lagrangian, 0.005, T, cadence=40, opts=opts).final
    errs = []
    for dt in (0.04, 0.02, 0.01):
        s = LG.run(p.lagrangian, dt, T, cadence=int(round(T / dt)), opts=opts).final
        errs.append(math.sqrt(G16.norm2(s.yh - ref.yh) + G16.norm2(s.vh - ref.vh)))
    orders = [math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])]
    assert min(orders) >= 1.9


def test_invariants_hold_over_a_run(grid32):
    p = _paired(7, grid=grid32)
    r = LG.run(p.lagrangian, 0.0025, 0.1, cadence=10)
    m = r.monitors
    assert m["det"].max() <= LG.INVARIANT_TOLERANCES["det"]
    assert m["div"].max() <= LG.INVARIANT_TOLERANCES["div"]
    assert m["rho"].max() <= LG.INVARIANT_TOLERANCES["rho"]
    assert m["grad_sup"].max() <= 0.5
    assert np.all(m["contraction"][1:] < 1)
    assert len(r.snapshots) == 5 and len(m["t"]) == 41


def test_invariant_drift_aborts_with_last_state():
    p = _paired(7, grad=0.3, vel=0.3)
    with pytest.raises(LG.InvariantDrift) as exc:
        LG.run(p.lagrangian, 0.05, 0.5, opts=LG.StepOptions(drift_factor=1e-6))
    assert exc.value.last_state.t == 0.0


def test_energy_functionals_zero_and_single_snapshot():
    z = LG.LagrangianState.zero(G16)
    fun = LG.energy_functionals([z, LG.LagrangianState(G16, z.yh, z.vh, z.qh, 0.1)])
    assert fun["total"] == 0
    p = _paired(8)
    st0, _ = LG.with_pressure(p.lagrangian)
    E1 = LG.energy_E([st0], 1.5)
    assert E1["Y_Linf_H"] == pytest.approx(besov_norm(st0.Y, 3.5) ** 2, rel=1e-12)
    assert E1["Yt_Linf_H"] == pytest.approx((besov_norm(st0.Yt, 1.5) + besov_norm(st0.Yt, 2.5)) ** 2, rel=1e-12)
    assert E1["Yt_L2_H"] == 0 and E1["gradq_L1_H"] == 0
    rows = LG.breakdown_rows(LG.energy_functionals([st0]))
    assert rows[-1]["term"] == "total" and len(rows) == 2 * 8 + 5 + 1


def test_energy_functional_is_quadratic_in_the_data():
    g = G16
    rng = make_rng(9)
    yh = shear_displacement(g, rng, 2, 0.1)
    vh = _solenoidal(g, 10, 0.1, band=2)
    vals = []
    for scale in (1.0, 0.5):
        st0 = LG.LagrangianState(g, yh * scale, vh * scale, np.zeros(g.fshape, complex))
        vals.append(LG.energy_functionals([st0])["total"])
    # with q = 0 every constituent is a norm of a linear function of (Y, Y_t)
    assert vals[0] / vals[1] == pytest.approx(4.0, rel=1e-12)


def test_cross_check_initial_and_steady(grid32):
    p = _paired(11, grid=grid32)
    rows = LG.cross_check([p.lagrangian], [p.eulerian])
    assert rows[0]["u_rel"] <= 1e-8 and rows[0]["b_rel"] <= 1e-8
    assert p.report["det"] <= 1e-12 and p.report["div"] <= 1e-10
    z = LG.LagrangianState.zero(G16)
    lag = LG.run(z, 0.01, 0.05, cadence=1).snapshots
    eul = E.run(E.MhdState.steady(G16), 0.01, 0.05, cadence=1).snapshots
    rows = LG.cross_check(lag, eul)
    assert len(rows) == 6 and all(r["u_rel"] == 0 and r["b_rel"] == 0 for r in rows)
