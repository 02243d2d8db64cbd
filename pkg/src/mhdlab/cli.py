"""Command line entry point: ``mhdlab <subcommand> [--config FILE] [--set key=value ...]``.

Exit status: 0 when every residual gate passes, 1 on a gate failure (or a solver
abort), 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .reports import fmt, write_csv, write_json, write_table
from .spectral import SpectralField, VectorField3, Space, make_rng

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2


def _vec(grid, hats) -> VectorField3:
    return VectorField3.from_array(grid, hats, Space.FOURIER)


def _gate_summary(out: Path, gates: dict[str, bool], extra: dict | None = None) -> int:
    write_json(out / "gates.json", {"gates": gates, **(extra or {})})
    failed = [k for k, ok in gates.items() if not ok]
    for k in failed:
        print(f"gate failed: {k}", file=sys.stderr)
    return EXIT_GATE if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_norms(cfg, out: Path) -> int:
    from . import littlewood_paley as lp
    from .spectral import random_hat, sobolev_norm

    g = C.grid_of(cfg)
    rng = make_rng(cfg.seed)
    hats = random_hat(g, rng, cfg.band, cfg.count)
    rows, ratio_ok = [], True
    for i, h in enumerate(hats):
        f = SpectralField(g, h, Space.FOURIER)
        for s in cfg.s:
            hs = sobolev_norm(f, s)
            bs = lp.besov_norm(f, s, cfg.p, cfg.r)
            rows.append({"quantity": f"field{i}:sobolev", "s1": s, "s2": "", "p": 2.0, "r": 2.0, "value": hs})
            rows.append({"quantity": f"field{i}:besov", "s1": s, "s2": "", "p": cfg.p, "r": cfg.r, "value": bs})
            b22 = lp.besov_norm(f, s, 2, 2)
            lo, hi = lp.ratio_bounds(s)
            ratio = b22 / hs
            ratio_ok &= lo - 1e-12 <= ratio <= hi + 1e-12
            rows.append({"quantity": f"field{i}:ratio_b22_over_h", "s1": s, "s2": "", "p": 2.0, "r": 2.0,
                         "value": ratio})
        rows.append({"quantity": f"field{i}:anisotropic", "s1": cfg.s1, "s2": cfg.s2, "p": 2.0, "r": 1.0,
                     "value": lp.aniso_norm(f, cfg.s1, cfg.s2)})
    write_csv(out / "norms.csv", rows, ("quantity", "s1", "s2", "p", "r", "value"))
    (out / "profile.json").write_text(lp.PROFILE.to_json() + "\n")
    t = np.linspace(0.0, 64.0, 2**14)
    pu = lp.PROFILE.chi(t) + sum(lp.PROFILE.phi(t / 2.0**j) for j in range(8))
    pu_err = float(np.abs(pu - 1).max())
    x = lp.PROFILE.mesh()
    write_table(out / "profile.dat", ["t", "chi", "phi_2t"], np.stack([x, lp.PROFILE.chi(x), lp.PROFILE.phi(2 * x)], 1))
    return _gate_summary(out, {"partition_of_unity": pu_err <= 1e-12, "ratio_interval": bool(ratio_ok)},
                         {"partition_of_unity_error": pu_err})


def cmd_linear_scan(cfg, out: Path) -> int:
    from .linear import approaches_monotonically, decay_scan

    mags = np.geomspace(cfg.kmin, cfg.kmax, cfg.count)
    rows = decay_scan(cfg.direction, mags)
    limit = -(cfg.direction[2] ** 2)
    csv_rows = [{"direction": " ".join(fmt(d) for d in cfg.direction), "k": r["k"], "re": r["re"],
                 "im": r["im"]} for r in rows]
    write_csv(out / "decay_scan.csv", csv_rows, ("direction", "k", "re", "im"))
    write_table(out / "decay_scan.dat", ["k", "re_lambda_minus", "im_lambda_minus"],
                [[r["k"], r["re"], r["im"]] for r in rows])
    # below the double-root magnitude the pair is complex with Re = -|xi|^2/2, which
    # overshoots the limit; monotonicity is a statement about the real branch
    real = [r for r in rows if r["im"] == 0]
    ok = len(real) >= 2 and approaches_monotonically(real, limit)
    return _gate_summary(out, {"monotone_approach": ok}, {"limit": limit, "real_branch_rows": len(real)})


def cmd_linear_solve(cfg, out: Path) -> int:
    from .linear import (LinearState, block_terms, regime, relative_l2_error, solve_linear_exact,
                         solve_linear_timestep)
    from .spectral import random_hat

    g = C.grid_of(cfg)
    rng = make_rng(cfg.seed)
    yh = random_hat(g, rng, cfg.band, 3)
    vh = random_hat(g, rng, cfg.band, 3)
    fh = random_hat(g, rng, cfg.band, 3) if cfg.forcing else None
    s0 = LinearState.from_hats(g, yh, vh)
    traj, rep = solve_linear_timestep(s0, fh, cfg.dt, cfg.T, cfg.cadence)
    exact = solve_linear_exact(s0, fh, [s.t for s in traj])
    err = [relative_l2_error(a, b) for a, b in zip(traj, exact)]
    rows = []
    for s in exact:
        for j, k in cfg.blocks:
            terms = block_terms(g, *s.hats(), j, k, fh)
            rows.append({"t": s.t, "j": j, "k": k, "regime": regime(j, k), **terms})
    write_csv(out / "block_energy.csv", rows,
              ("t", "j", "k", "regime", "g2", "dissipation", "rhs", "Yt2", "d3Y2", "lapY2", "cross",
               "gradYt2", "d3gradY2"))
    write_table(out / "error.dat", ["t", "relative_l2_error"], [[s.t, e] for s, e in zip(traj, err)])
    return _gate_summary(out, {"exact_vs_rk4": max(err) <= cfg.tol, "rk4_stable": rep["stable"]},
                         {"max_relative_error": max(err)})


def cmd_prep_data(cfg, out: Path) -> int:
    from .dataprep import SpectralVectorField, StreamFunctionField, prepare
    from .fldio import read_fld, vector_from, write_fld

    g = C.grid_of(cfg)
    if cfg.input:
        _, fields, _ = read_fld(cfg.input)
        b0 = SpectralVectorField(vector_from(fields, "b0"))
    else:
        b0 = StreamFunctionField(cfg.K, cfg.eps, tuple(cfg.box), drift=tuple(cfg.drift))
    data = prepare(b0, g, cfg.K, probes=cfg.probes, rng=make_rng(cfg.seed))
    U0 = {f"U0_{i + 1}{j + 1}": SpectralField(g, data.U0[i, j]) for i in range(3) for j in range(3)}
    write_fld(out / "psi.fld", {"psi": data.psi})
    write_fld(out / "frame.fld", {"bbar": data.bbar, "btilde": data.btilde, **U0})
    write_fld(out / "Y0.fld", {"Y0": data.Y0})
    gates = data.gates()
    write_json(out / "residuals.json", {"grid": list(cfg.grid), "box": list(cfg.box), "K": cfg.K,
                                        "field": cfg.input or f"stream-function family eps={cfg.eps}",
                                        "report": data.report})
    return _gate_summary(out, gates)


def _paired(cfg):
    from .lagrangian import paired_data

    return paired_data(C.grid_of(cfg), make_rng(cfg.seed), cfg.eps, cfg.velocity, cfg.band)


def cmd_mhd_run(cfg, out: Path) -> int:
    from . import euler as E
    from .fldio import read_fld, vector_from, write_fld

    g = C.grid_of(cfg)
    if cfg.data == "steady":
        s0 = E.MhdState.steady(g)
    elif cfg.data == "random":
        s0 = E.random_state(g, make_rng(cfg.seed), cfg.eps, cfg.band)
    elif cfg.data == "lagrangian":
        from .lagrangian import paired_data

        s0 = paired_data(g, make_rng(cfg.seed), cfg.eps, cfg.eps, cfg.band).eulerian
    else:
        g2, fields, _ = read_fld(cfg.data)
        if g2 != g:
            raise C.ConfigError("data: snapshot grid differs from the configured grid")
        s0 = E.MhdState.from_fields(vector_from(fields, "b"), vector_from(fields, "u"))
    flags = E.Flags(advection=cfg.advection, coupling=cfg.coupling, freeze_b=cfg.freeze_b)
    res = E.run(s0, cfg.dt, cfg.T, cfg.cadence, flags, div_tol=cfg.div_tol)
    write_csv(out / "monitors.csv", res.monitor_rows(), E.MONITOR_COLUMNS)
    for i, s in enumerate(res.snapshots):
        write_fld(out / f"snapshot_{i:04d}.fld", {"b": _vec(g, s.bh), "u": _vec(g, s.uh)}, time=s.t)
    if len(res.snapshots) >= 3:
        em = E.energy_monitor(res.snapshots)
        ts = [s.t for s in res.snapshots]
        write_table(out / "energy.dat", ["t", "energy", "dissipation"], np.stack([ts, em["energy"], em["dissipation"]], 1))
        write_table(out / "energy_residual.dat", ["t", "residual"], np.stack([em["t"], em["residual"]], 1))
    div = float(max(res.monitors["div_u"].max(), res.monitors["div_b"].max()))
    gates = {"completed": res.aborted is None, "divergence": div <= cfg.div_tol}
    return _gate_summary(out, gates, {"aborted": res.aborted, "max_divergence": div})


def cmd_lagrangian_run(cfg, out: Path) -> int:
    from . import lagrangian as L
    from .fldio import write_fld

    pd = _paired(cfg)
    g = pd.lagrangian.grid
    opts = L.StepOptions(linear=cfg.linear)
    try:
        res = L.run(pd.lagrangian, cfg.dt, cfg.T, cfg.cadence, opts)
    except (L.InvariantDrift, L.PressureError) as exc:
        print(f"lagrangian run aborted: {exc}", file=sys.stderr)
        return _gate_summary(out, {"completed": False}, {"aborted": str(exc)})
    write_csv(out / "monitors.csv", res.monitor_rows(), L.MONITOR_COLUMNS)
    for i, s in enumerate(res.snapshots):
        write_fld(out / f"snapshot_{i:04d}.fld",
                  {"Y": _vec(g, s.yh), "Yt": _vec(g, s.vh), "q": SpectralField(g, s.qh, Space.FOURIER)}, time=s.t)
    extra = {}
    if cfg.energy:
        fun = L.energy_functionals(res.snapshots, cfg.s1, cfg.s2)
        write_csv(out / "energy_functionals.csv", L.breakdown_rows(fun), ("group", "term", "value"))
        extra["energy_functional"] = fun["total"]
    m = res.monitors
    gates = {"completed": True}
    for key, tol in L.INVARIANT_TOLERANCES.items():
        gates[f"invariant_{key}"] = bool(np.nanmax(m[key]) <= tol)
    gates["grad_bound"] = bool(np.nanmax(m["grad_sup"]) <= 0.5)
    extra.update({k: float(np.nanmax(m[k])) for k in ("det", "div", "rho", "grad_sup", "contraction")})
    return _gate_summary(out, gates, extra)


def cmd_cross_check(cfg, out: Path) -> int:
    from . import euler as E
    from . import lagrangian as L

    pd = _paired(cfg)
    lag = L.run(pd.lagrangian, cfg.dt, cfg.T, cfg.cadence, L.StepOptions(drift_factor=math.inf))
    eul = E.run(pd.eulerian, cfg.dt, cfg.T, cfg.cadence, monitor_every=cfg.cadence)
    rows = L.cross_check(lag.snapshots, eul.snapshots)
    write_csv(out / "cross_check.csv", rows, ("t", "u_rel", "b_rel", "b_rel_full", "composition"))
    write_table(out / "cross_check.dat", ["t", "u_rel", "b_rel"], [[r["t"], r["u_rel"], r["b_rel"]] for r in rows])
    first, last = rows[0], rows[-1]
    gates = {
        "eulerian_completed": eul.aborted is None,
        "initial": max(first["u_rel"], first["b_rel"]) <= cfg.initial_tol,
        "final": max(last["u_rel"], last["b_rel"]) <= cfg.tol,
    }
    return _gate_summary(out, gates, {"data": pd.report, "final_u_rel": last["u_rel"], "final_b_rel": last["b_rel"]})


def cmd_identity_suite(cfg, out: Path) -> int:
    from .geometry import identity_residuals, random_displacement, shear_displacement
    from .spectral import random_solenoidal_hat

    g = C.grid_of(cfg)
    rng = make_rng(cfg.seed)
    records = []
    for n in range(cfg.count):
        v = _vec(g, random_solenoidal_hat(g, rng, cfg.band))
        general = random_displacement(g, rng, cfg.band, cfg.amplitude)
        shear = shear_displacement(g, rng, cfg.band, cfg.amplitude)
        for kind, yh, vp in (("general", general, False), ("volume-preserving shear", shear, True)):
            desc = f"{kind} displacement #{n}, band {cfg.band}, sup|grad Y| = {cfg.amplitude}"
            for r in identity_residuals(_vec(g, yh), v, volume_preserving=vp):
                records.append({**r, "grid": list(cfg.grid), "field": desc})
    write_json(out / "residuals.json", records)
    worst: dict[str, float] = {}
    for r in records:
        worst[r["identity"]] = max(worst.get(r["identity"], 0.0), r["linf"])
    return _gate_summary(out, {k: v <= cfg.tol for k, v in worst.items()}, {"worst_linf": worst})


COMMANDS = {
    "norms": cmd_norms,
    "linear-scan": cmd_linear_scan,
    "linear-solve": cmd_linear_solve,
    "prep-data": cmd_prep_data,
    "mhd-run": cmd_mhd_run,
    "lagrangian-run": cmd_lagrangian_run,
    "cross-check": cmd_cross_check,
    "identity-suite": cmd_identity_suite,
}


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise C.ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhdlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (value parsed as JSON when possible)")
        sp.add_argument("--output", help="output directory (default: <output>/<subcommand>)")
    return p


def dispatch(command: str, cfg, output: str | Path | None = None) -> int:
    out = Path(output) if output else Path(cfg.output) / command
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(C.config_json(cfg))
    return COMMANDS[command](cfg, out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = C.parse_config(args.command, args.config, _parse_set(args.set))
    except C.ConfigError as exc:
        print(f"mhdlab {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return dispatch(args.command, cfg, args.output)
    except C.ConfigError as exc:
        print(f"mhdlab {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ValueError) as exc:
        print(f"mhdlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
