"""Experiment configuration: a TOML document with one table per stage.

    name = "oval-21"
    seed = 7
    output_dir = "runs/oval-21"     # optional; default is $OVALLAB_OUT/<name>

    [params]  n, k, theta (optional), big_l (optional)
    [bowl]    rho_max, tol, h
    [ode]     tau_from, tau_to, step, xi0 (list of lists), sigma_span
    [flow]    backend, tau0, tau_end, d, center_shift, dtau, dtau_max, cadence,
              scheme, rtol, atol, nv, ny, recenter, grid_R, grid_h, v_floor
    [diagnostics]  reports, eps_window, bowl_rho_max, source ("flow" or "cylinder"), tau
    [compare] run, window

Unknown keys are errors; the message carries the dotted key path.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InvalidArgument
from .flow import FlowConfig, InitialData
from .gauss_spectral import CylinderParams

OUTPUT_ENV = "OVALLAB_OUT"
REPORT_KINDS = ("parabolic", "intermediate", "collar", "tip", "concavity", "kappa")

_SCHEMA = {
    "": {"name": str, "seed": int, "output_dir": str, "params": dict, "bowl": dict, "ode": dict,
         "flow": dict, "diagnostics": dict, "compare": dict},
    "params": {"n": int, "k": int, "theta": float, "big_l": float},
    "bowl": {"rho_max": float, "tol": float, "h": float},
    "ode": {"tau_from": float, "tau_to": float, "step": float, "xi0": list, "sigma_span": float},
    "flow": {"backend": str, "tau0": float, "tau_end": float, "d": list, "center_shift": bool,
             "dtau": float, "dtau_max": float, "cadence": float, "scheme": str, "rtol": float,
             "atol": float, "nv": int, "ny": int, "recenter": bool, "grid_R": float,
             "grid_h": float, "v_floor": float},
    "diagnostics": {"reports": list, "eps_window": float, "bowl_rho_max": float, "source": str,
                    "tau": float},
    "compare": {"run": str, "window": list},
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    params: CylinderParams
    output_dir: str
    seed: int = 0
    bowl: dict | None = None
    ode: dict | None = None
    flow: FlowConfig | None = None
    diagnostics: dict | None = None
    compare: dict | None = None
    raw: dict = field(default_factory=dict, repr=False)


def _check_table(table: dict, section: str) -> None:
    allowed = _SCHEMA[section]
    for key, val in table.items():
        path = f"{section}.{key}" if section else key
        if key not in allowed:
            raise ConfigError("unknown key", key=path)
        want = allowed[key]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            continue
        if want is int and isinstance(val, bool):
            raise ConfigError("expected int", key=path)
        if not isinstance(val, want):
            raise ConfigError(f"expected {want.__name__}, got {type(val).__name__}", key=path)


def _get(table, key, default):
    v = table.get(key, default)
    return float(v) if isinstance(default, float) and v is not None else v


def parse_config(text: str, base_dir: str | None = None) -> ExperimentConfig:
    """Validate a TOML document and apply defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed document: {exc}", key="") from exc
    _check_table(doc, "")
    for sec in ("params", "bowl", "ode", "flow", "diagnostics", "compare"):
        if sec in doc:
            _check_table(doc[sec], sec)
    if "name" not in doc:
        raise ConfigError("missing key", key="name")
    if "params" not in doc:
        raise ConfigError("missing table", key="params")
    if not any(s in doc for s in ("bowl", "ode", "flow", "diagnostics")):
        raise ConfigError("need at least one of bowl/ode/flow/diagnostics", key="")
    pt = doc["params"]
    for key in ("n", "k"):
        if key not in pt:
            raise ConfigError("missing key", key=f"params.{key}")
    try:
        params = CylinderParams(pt["n"], pt["k"], theta=pt.get("theta"),
                                big_l=float(pt.get("big_l", 10.0)))
    except InvalidArgument as exc:
        raise ConfigError(str(exc), key="params") from exc
    name = doc["name"]
    out = doc.get("output_dir")
    if out is None:
        out = os.path.join(os.environ.get(OUTPUT_ENV, "ovallab-out"), name)
    elif base_dir is not None and not os.path.isabs(out):
        out = os.path.normpath(os.path.join(base_dir, out))

    flow = None
    if "flow" in doc:
        ft = doc["flow"]
        for key in ("tau0", "tau_end"):
            if key not in ft:
                raise ConfigError("missing key", key=f"flow.{key}")
        d = ft.get("d", [1.0] * params.k)
        try:
            init = InitialData(d=tuple(float(x) for x in d), tau_init=float(ft["tau0"]),
                               center_shift=ft.get("center_shift", True))
            if len(init.d) != params.k:
                raise ConfigError(f"must have k = {params.k} entries", key="flow.d")
            flow = FlowConfig(params=params, initial=init, tau_end=float(ft["tau_end"]),
                              backend=ft.get("backend", "radial"), dtau=_get(ft, "dtau", 0.05),
                              dtau_max=_get(ft, "dtau_max", 0.5), cadence=_get(ft, "cadence", 1.0),
                              scheme=ft.get("scheme", "bdf"), rtol=_get(ft, "rtol", 1e-7),
                              atol=_get(ft, "atol", 1e-9), nv=ft.get("nv", 1400),
                              ny=ft.get("ny", 400), recenter=ft.get("recenter", True),
                              grid_R=_get(ft, "grid_R", 8.0), grid_h=_get(ft, "grid_h", 0.1),
                              v_floor=ft.get("v_floor"))
        except InvalidArgument as exc:
            raise ConfigError(str(exc), key="flow") from exc
        if flow.scheme not in ("bdf", "rk2"):
            raise ConfigError("must be 'bdf' or 'rk2'", key="flow.scheme")
    diag = None
    if "diagnostics" in doc:
        dt = dict(doc["diagnostics"])
        reports = dt.get("reports", list(REPORT_KINDS))
        for i, r in enumerate(reports):
            if r not in REPORT_KINDS:
                raise ConfigError(f"unknown report {r!r}", key=f"diagnostics.reports[{i}]")
        source = dt.get("source", "flow")
        if source not in ("flow", "cylinder"):
            raise ConfigError("must be 'flow' or 'cylinder'", key="diagnostics.source")
        if source == "flow" and "flow" not in doc:
            raise ConfigError("diagnostics on a flow need a [flow] table", key="diagnostics.source")
        tau = float(dt.get("tau", -100.0))
        if tau >= 0:
            raise ConfigError("must be negative", key="diagnostics.tau")
        diag = {"reports": list(reports), "eps_window": float(dt.get("eps_window", 0.25)),
                "bowl_rho_max": float(dt.get("bowl_rho_max", 20.0)), "source": source, "tau": tau}
    bowl = None
    if "bowl" in doc:
        bt = doc["bowl"]
        bowl = {"rho_max": float(bt.get("rho_max", 100.0)), "tol": float(bt.get("tol", 1e-11)),
                "h": float(bt.get("h", 0.005))}
    ode = None
    if "ode" in doc:
        ot = doc["ode"]
        ode = {"tau_from": float(ot.get("tau_from", -100.0)), "tau_to": float(ot.get("tau_to", -20.0)),
               "step": float(ot.get("step", 1e-3)), "xi0": ot.get("xi0"),
               "sigma_span": float(ot.get("sigma_span", 10.0))}
        if not ode["tau_from"] < ode["tau_to"] < 0:
            raise ConfigError("need tau_from < tau_to < 0", key="ode.tau_to")
    compare = None
    if "compare" in doc:
        ct = doc["compare"]
        if "run" not in ct:
            raise ConfigError("missing key", key="compare.run")
        win = ct.get("window")
        if win is None or len(win) != 2:
            raise ConfigError("must be [lo, hi]", key="compare.window")
        run = ct["run"]
        if base_dir is not None and not os.path.isabs(run):
            run = os.path.normpath(os.path.join(base_dir, run))
        compare = {"run": run, "window": [float(win[0]), float(win[1])]}
    return ExperimentConfig(name=name, params=params, output_dir=out, seed=int(doc.get("seed", 0)),
                            bowl=bowl, ode=ode, flow=flow, diagnostics=diag, compare=compare,
                            raw=doc)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
