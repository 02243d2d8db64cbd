import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mhdlab import euler as E
from mhdlab.spectral import Grid3, VectorField3, make_rng, random_solenoidal_hat

G16 = Grid3(16, 16, 16)


def _state(seed, eps=0.1, band=2, grid=G16):
    return E.random_state(grid, make_rng(seed), eps, band)


def _l2(g, a, b):
    return math.sqrt(g.norm2(a - b))


def test_steady_state_is_a_fixed_point():
    s = E.MhdState.steady(G16)
    db, du = E.rhs(s)
    assert np.all(db == 0) and np.all(du == 0)
    assert np.all(E.pressure_gradient(s) == 0)
    r = E.run(s, 1e-2, 2.0, cadence=200)
    last = r.snapshots[-1]
    assert np.array_equal(last.bh, s.bh) and np.array_equal(last.uh, s.uh)
    bm = E.blowup_monitor(r.snapshots)
    assert np.all(bm["grad_u_inf"] == 0) and np.allclose(bm["b_inf_sq"], 1.0, rtol=0, atol=1e-15)


def test_vertical_field_induction_is_d3u():
    g = G16
    uh = g.truncate(random_solenoidal_hat(g, make_rng(2), 4))
    s = E.MhdState(g, E.MhdState.steady(g).bh, uh)
    db, _ = E.rhs(s)
    want = np.stack([g.diff(uh[i], 2) for i in range(3)])
    assert np.abs(db - want).max() <= 1e-12 * np.abs(want).max()


@given(seed=st.integers(0, 10**6))
def test_right_hand_side_forms_agree(seed):
    s = _state(seed, eps=0.3, band=3)
    base = E.rhs(s)
    scale = max(np.abs(base[0]).max(), np.abs(base[1]).max())
    for flags in (E.Flags(form="advective"), E.Flags(pressure="explicit"),
                  E.Flags(form="advective", pressure="explicit")):
        db, du = E.rhs(s, flags)
        assert np.abs(db - base[0]).max() <= 1e-11 * scale
        assert np.abs(du - base[1]).max() <= 1e-11 * scale


def test_pressure_makes_momentum_solenoidal():
    s = _state(3, eps=0.2, band=3)
    g = s.grid
    t = E.nonlinear_terms(s)
    bsq = g.truncate(g.fft(np.sum(t["b_phys"] ** 2, axis=0)))
    mom = t["b_grad_b"] - t["u_grad_u"] - 0.5 * g.grad(bsq) - E.pressure_gradient(s, t)
    assert E.divergence_linf(g, mom) <= 1e-10


def test_pressure_single_mode_hand_computation():
    g = G16
    a = 0.3
    x, y, z = g.mesh()
    b = np.stack([a * np.cos(y), 0 * y, 1 + 0 * y])
    s = E.MhdState.from_fields(VectorField3.from_array(g, b), VectorField3.from_array(g, 0 * b))
    # b . grad b = 0, so grad p = -grad |b|^2 / 2 = (0, a^2 cos y sin y, 0)
    gp = g.ifft(E.pressure_gradient(s))
    assert np.abs(gp[1] - a * a * np.cos(y) * np.sin(y)).max() <= 1e-13
    assert np.abs(gp[0]).max() <= 1e-13 and np.abs(gp[2]).max() <= 1e-13


def test_heat_decay_is_exact_with_coupling_disabled():
    g = G16
    x, y, z = g.mesh()
    u = np.stack([np.sin(2 * y + 3 * z), 0 * x, 0 * x])
    s = E.MhdState.from_fields(VectorField3.from_array(g, np.stack([0 * x, 0 * x, 1 + 0 * x])),
                               VectorField3.from_array(g, u))
    flags = E.Flags(advection=False, coupling=False, freeze_b=True)
    r = E.run(s, 0.01, 0.5, cadence=50, flags=flags)
    got = g.ifft(r.snapshots[-1].uh)
    assert np.abs(got - math.exp(-13 * 0.5) * u).max() <= 1e-10


def test_fourth_order_in_time():
    s0 = _state(1)
    g = s0.grid
    T = 0.2
    ref = E.run(s0, 1.25e-3, T, cadence=160).snapshots[-1]
    errs = []
    for dt in (0.02, 0.01, 0.005):
        s = E.run(s0, dt, T, cadence=int(round(T / dt))).snapshots[-1]
        errs.append(math.hypot(_l2(g, s.uh, ref.uh), _l2(g, s.bh, ref.bh)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.8


def test_run_monitors_and_invariants():
    s0 = _state(4)
    r = E.run(s0, 5e-3, 0.5, cadence=10, monitor_every=5)
    assert r.aborted is None and r.steps == 100
    assert len(r.snapshots) == 11 and len(r.monitors["t"]) == 21
    m = r.monitors
    assert m["div_u"].max() <= 1e-10 and m["div_b"].max() <= 1e-10
    assert m["mean_u_inf"].max() <= 1e-14 and m["mean_b_err"].max() <= 1e-14
    assert np.all(np.diff(m["energy"]) <= 1e-14)
    bm = E.blowup_monitor(r.snapshots)
    inc = np.diff(bm["int_grad_u_inf"])
    assert np.all(inc > 0) and inc[-1] < inc[0]


def test_energy_identity_second_order_under_cadence_halving():
    r = E.run(_state(1), 1e-3, 0.2, cadence=1)
    res = [np.abs(E.energy_monitor(r.snapshots[::c])["residual"]).max() for c in (4, 2, 1)]
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9
    steady = [E.MhdState(G16, E.MhdState.steady(G16).bh, np.zeros((3,) + G16.fshape, complex), t)
              for t in (0, 0.1, 0.2)]
    assert np.all(E.energy_monitor(steady)["residual"] == 0)
    with pytest.raises(ValueError):
        E.energy_monitor(steady[:2])


def test_linear_response_scaling():
    norms, grads = [], []
    for eps in (0.02, 0.01):
        last = E.run(_state(5, eps=eps), 5e-3, 0.5, cadence=100).snapshots[-1]
        norms.append(E.solution_norm(last))
        grads.append(E.blowup_values(last)[0])
    assert norms[0] / norms[1] == pytest.approx(2.0, rel=0.05)
    assert grads[0] / grads[1] == pytest.approx(2.0, rel=0.10)


def test_cfl_rejection_and_bad_horizon():
    s = _state(6, eps=50.0)
    with pytest.raises(E.CflError) as exc:
        E.step(s, 0.5)
    assert exc.value.suggested_dt < 0.5
    E.step(s, exc.value.suggested_dt)
    with pytest.raises(ValueError):
        E.run(_state(6), 0.003, 0.01)


def test_runaway_data_aborts_with_last_snapshot():
    s = _state(7, eps=4.0, band=5)
    r = E.run(s, 1e-3, 0.5, cadence=1, tail_tol=1e-6)
    assert r.aborted is not None and r.snapshots[-1].t < 0.5
    with pytest.raises(E.SolverAbort) as exc:
        E.run(s, 1e-3, 0.5, cadence=1, tail_tol=1e-6, raise_on_abort=True)
    assert exc.value.last_state.t == r.snapshots[-1].t
