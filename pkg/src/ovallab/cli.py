"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 selftest failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import (BlowUp, ChartBreakdown, ConfigError, DomainCollapse, FlowError, GaugeFailure,
                     IntegrationFailure, InvalidArgument)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4
NUMERIC_ERRORS = (BlowUp, ChartBreakdown, DomainCollapse, FlowError, GaugeFailure,
                  IntegrationFailure, ArithmeticError)


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_window(text: str) -> tuple[float, float]:
    # "-40:-25"
    lo, hi = text.split(":")
    return float(lo), float(hi)


# ------------------------------------------------------------ stages


def stage_bowl(m: int, rho_max: float, outdir: str, tol: float = 1e-11, h: float = 0.005) -> dict:
    from .bowl import bowl_fit, series_coefficients, solve_bowl, write_bowl_csv
    prof = solve_bowl(m, rho_max, tol=tol, h=h)
    near = bowl_fit(prof, "near")
    far = bowl_fit(prof, "far")
    write_bowl_csv(prof, os.path.join(outdir, "bowl.csv"))
    fit = {"schema": "ovallab.bowl_fit/1", "m": m, "rho_max": rho_max, "tol": tol,
           "near": near, "far": far, "near_expected": series_coefficients(m)[0],
           "far_expected": -1.0 / (2.0 * np.sqrt(2.0) * m),
           "max_residual": float(np.max(np.abs(prof.residual())))}
    _dump(fit, os.path.join(outdir, "bowl_fit.json"))
    return fit


def stage_ode(params, ode: dict, outdir: str) -> dict:
    from .spectral_dynamics import (integrate_riccati, phase_portrait, write_phase_portrait,
                                    write_riccati_csv)
    k, beta = params.k, params.beta
    a0 = beta / ode["tau_from"] * np.eye(k)
    tr = integrate_riccati(a0, ode["tau_from"], ode["tau_to"], beta, step=ode["step"],
                           record_every=max(1, int(round(0.1 / ode["step"]))))
    write_riccati_csv(tr, os.path.join(outdir, "riccati.csv"))
    exact = beta / tr.tau[:, None, None] * np.eye(k)[None]
    out = {"riccati_max_dev": float(np.max(np.abs(tr.a - exact)))}
    if ode.get("xi0"):
        rows = phase_portrait(k, ode["xi0"], sigma_span=ode["sigma_span"])
        write_phase_portrait(rows, os.path.join(outdir, "phase_portrait.json"))
        out["phase_portrait_rows"] = len(rows)
    return out


def stage_flow(flow, outdir: str):
    from .flow import run_flow, write_trajectory
    traj = run_flow(flow)
    write_trajectory(traj, os.path.join(outdir, "flow"))
    return traj


def stage_diagnostics(states, params, diag: dict, outdir: str) -> list:
    from .bowl import solve_bowl
    from .diagnostics import region_report, write_reports
    bowl = solve_bowl(params.m, diag["bowl_rho_max"]) if "tip" in diag["reports"] else None
    reports = []
    for s in states:
        r = region_report(s, bowl, eps_window=diag["eps_window"])
        reports.append(r)
    write_reports(reports, os.path.join(outdir, "reports.json"), os.path.join(outdir, "reports.csv"))
    return reports


def stage_compare(states_a, states_b, params, window, outdir: str) -> dict:
    from .bowl import solve_bowl
    from .diagnostics import pair_diagnostics
    bowl = solve_bowl(params.m, 20.0)
    pd = pair_diagnostics(states_a, states_b, window, params, bowl=bowl)
    out = {"schema": "ovallab.pair_diagnostics/1", "window": list(window)} | pd.to_json()
    _dump(out, os.path.join(outdir, "pair_diagnostics.json"))
    return out


def cylinder_state(params, tau: float):
    """The shrinking-cylinder fixed point v = sqrt(2m) as a synthetic profile."""
    from .diagnostics import FunctionState
    c = params.radius
    return FunctionState(params, float(tau), lambda pts: np.full(len(pts), c))


def run_experiment(cfg) -> int:
    """Run the configured stages in order: bowl, ode, flow, diagnostics, compare."""
    from .flow import config_echo, read_trajectory_states
    os.makedirs(cfg.output_dir, exist_ok=True)
    manifest = {"schema": "ovallab.experiment_manifest/1", "name": cfg.name, "seed": cfg.seed,
                "version": __version__, "stages": []}
    status = EXIT_OK
    states = None

    def record(stage, ok, info):
        manifest["stages"].append({"stage": stage, "ok": ok} | info)

    try:
        if cfg.bowl is not None:
            fit = stage_bowl(cfg.params.m, cfg.bowl["rho_max"], cfg.output_dir, cfg.bowl["tol"],
                             cfg.bowl["h"])
            record("bowl", True, {"far_coeff": fit["far"]["coeff"], "near_coeff": fit["near"]["coeff"]})
        if cfg.ode is not None:
            record("ode", True, stage_ode(cfg.params, cfg.ode, cfg.output_dir))
        if cfg.flow is not None:
            traj = stage_flow(cfg.flow, cfg.output_dir)
            states = [s.state for s in traj.snapshots]
            record("flow", True, {"config": config_echo(cfg.flow), "snapshots": len(states)})
        if cfg.diagnostics is not None:
            if cfg.diagnostics["source"] == "cylinder":
                states = [cylinder_state(cfg.params, cfg.diagnostics["tau"])]
            reps = stage_diagnostics(states, cfg.params, cfg.diagnostics, cfg.output_dir)
            record("diagnostics", True, {"reports": len(reps),
                                         "parabolic_dev": [r.parabolic_dev for r in reps]})
        if cfg.compare is not None:
            if states is None:
                raise InvalidArgument("compare stage needs a flow stage")
            other = read_trajectory_states(os.path.join(cfg.compare["run"], "flow"))
            out = stage_compare(states, other, cfg.params, cfg.compare["window"], cfg.output_dir)
            record("compare", True, {"coercivity_ratio": out["coercivity_ratio"]})
    except NUMERIC_ERRORS as exc:
        record("failed", False, {"error": type(exc).__name__, "message": str(exc),
                                 "tau": getattr(exc, "tau", None)})
        status = EXIT_NUMERIC
    _dump(manifest, os.path.join(cfg.output_dir, "manifest.json"))
    return status


# ------------------------------------------------------------ subcommands


def _out(args, name):
    from .config import OUTPUT_ENV
    root = args.out or os.path.join(os.environ.get(OUTPUT_ENV, "ovallab-out"), name)
    os.makedirs(root, exist_ok=True)
    return root


def cmd_bowl(args) -> int:
    outdir = _out(args, f"bowl_m{args.m}")
    fit = stage_bowl(args.m, args.rho_max, outdir, tol=args.tol)
    print(f"near coefficient {fit['near']['coeff']:.10f} (expected {fit['near_expected']:.10f})")
    print(f"far coefficient  {fit['far']['coeff']:.10f} (expected {fit['far_expected']:.10f}), "
          f"log coefficient {fit['far']['log_coeff']:.6f}")
    print(f"wrote {os.path.join(outdir, 'bowl.csv')}")
    return EXIT_OK


def cmd_spectral_ode(args) -> int:
    from .gauss_spectral import CylinderParams
    from .spectral_dynamics import build_b_matrix
    k = args.k
    status = EXIT_OK
    if args.check_eigen:
        ev = np.sort(np.linalg.eigvals(build_b_matrix(k).astype(float)).real)
        want = -np.arange(k, 0, -1, dtype=float)
        err = float(np.max(np.abs(ev - want)))
        print("eigenvalues of B:", " ".join(f"{x:.12g}" for x in ev))
        print(f"expected {{{', '.join(str(int(x)) for x in want[::-1])}}}: max error {err:.2e}")
        if err > 1e-10:
            status = EXIT_NUMERIC
    if args.riccati or args.phase_portrait:
        n = args.n if args.n is not None else k + 1
        params = CylinderParams(n, k)
        outdir = _out(args, f"ode_k{k}")
        xi0 = None
        if args.phase_portrait:
            rng = np.random.default_rng(args.seed)
            xi0 = [list(rng.uniform(-0.5, 0.5, size=k)) for _ in range(8)] + [[0.0] * k]
        info = stage_ode(params, {"tau_from": args.tau_from, "tau_to": args.tau_to,
                                  "step": args.step, "xi0": xi0, "sigma_span": 10.0}, outdir)
        print(json.dumps(info, sort_keys=True))
    return status


def cmd_flow(args) -> int:
    from .config import load_config
    from .flow import FlowConfig, InitialData
    from .gauss_spectral import CylinderParams
    if args.config:
        cfg = load_config(args.config)
        if cfg.flow is None:
            raise ConfigError("config has no [flow] table", key="flow")
        flow = cfg.flow
        name = cfg.name
    else:
        params = CylinderParams(args.n, args.k)
        d = tuple(args.d) if args.d else (1.0,) * args.k
        flow = FlowConfig(params=params, initial=InitialData(d=d, tau_init=args.tau0),
                          tau_end=args.tau_end, backend=args.backend, cadence=args.cadence)
        name = f"flow_n{args.n}_k{args.k}"
    outdir = _out(args, name)
    traj = stage_flow(flow, outdir)
    for snap in traj.snapshots[:: max(1, len(traj.snapshots) // 10)]:
        print(f"tau={snap.tau:9.3f}")
    print(f"{len(traj.snapshots)} snapshots in {os.path.join(outdir, 'flow')}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .flow import read_trajectory_states
    states = read_trajectory_states(os.path.join(args.run, "flow") if os.path.isdir(
        os.path.join(args.run, "flow")) else args.run)
    params = states[0].params
    diag = {"reports": ["parabolic", "intermediate", "collar", "tip", "concavity", "kappa"],
            "eps_window": args.eps_window, "bowl_rho_max": 20.0}
    outdir = args.out or args.run
    reps = stage_diagnostics(states, params, diag, outdir)
    for r in reps:
        f = lambda x: "   n/a" if x is None else f"{x:.4g}"
        print(f"tau={r.tau:8.3f} parabolic={f(r.parabolic_dev)} intermediate={f(r.intermediate_dev)} "
              f"collar={f(r.collar_dev)} tip={f(r.tip_dev)} concavity={f(r.concavity_margin)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .flow import read_trajectory_states

    def load(p):
        sub = os.path.join(p, "flow")
        return read_trajectory_states(sub if os.path.isdir(sub) else p)

    a, b = load(args.a), load(args.b)
    outdir = args.out or args.a
    out = stage_compare(a, b, a[0].params, _parse_window(args.window), outdir)
    print(json.dumps({k: out[k] for k in ("window", "coercivity_ratio", "W_t_tip")}))
    return EXIT_OK


def cmd_run(args) -> int:
    from .config import load_config
    cfg = load_config(args.config)
    if args.out:
        from dataclasses import replace
        cfg = replace(cfg, output_dir=args.out)
    return run_experiment(cfg)


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    ok = run_selftest(full=args.full, seed=args.seed)
    return EXIT_OK if ok else EXIT_ACCEPT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ovallab", description="Numerical lab for ancient oval flows.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bowl", help="solve the bowl soliton ODE and fit both branches")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--rho-max", type=float, default=100.0)
    p.add_argument("--tol", type=float, default=1e-11)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bowl)

    p = sub.add_parser("spectral-ode", help="matrix B checks, Riccati and xi trajectories")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--check-eigen", action="store_true")
    p.add_argument("--riccati", action="store_true")
    p.add_argument("--phase-portrait", action="store_true")
    p.add_argument("--tau-from", type=float, default=-100.0)
    p.add_argument("--tau-to", type=float, default=-20.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectral_ode)

    p = sub.add_parser("flow", help="evolve ellipsoidal initial data")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--d", type=float, nargs="+")
    p.add_argument("--tau0", type=float, default=-100.0)
    p.add_argument("--tau-end", type=float, default=-25.0)
    p.add_argument("--backend", choices=("radial", "grid2d"), default="radial")
    p.add_argument("--cadence", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("diagnose", help="region reports for every snapshot of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--eps-window", type=float, default=0.25)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="pair diagnostics of two runs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--window", required=True, help="lo:hi in tau; write --window=-40:-25 since the value starts with a dash")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("run", help="run an experiment config (all stages)")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("selftest", help="property checks keyed to the acceptance criteria")
    p.add_argument("--full", action="store_true", help="include the long flow criteria")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        tau = getattr(exc, "tau", None)
        where = f" at tau={tau:g}" if isinstance(tau, float) else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
