"""Acceptance checks, one function per criterion.

Each check measures a quantity, compares it with its tolerance and returns a
CriterionResult. The long flow criteria (7 to 11 and 14) share two radial runs
through ``FlowRuns``. ``run_selftest`` prints the PASS/FAIL table.
"""
from __future__ import annotations

import glob
import json
import math
import os
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .bowl import bowl_fit, series_coefficients, solve_bowl
from .diagnostics import (FunctionState, bowl_tip_chart, collar_report, concavity_report, gauge_fix,
                          intermediate_report, random_admissible, tip_poincare_check, tip_report,
                          tip_weight, truncated_values)
from .errors import InvalidArgument
from .flow import FlowConfig, InitialData, make_initial, run_flow, step_radial
from .gauss_spectral import (CylinderParams, build_quadrature, neutral_basis, neutral_index_pairs,
                             ou_apply, poincare_ratio, project_modes, spectral_ratio)
from .grid2d import grid_stable_dt, make_grid_initial, step_grid2d, symmetry_defect
from .spectral_dynamics import build_b_matrix, integrate_riccati, symmetric_polys

FLOW_CASES = ((2, 1), (3, 2))
FLOW_TAU0, FLOW_TAU_END, PROBE_TAU = -100.0, -25.0, -40.0


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    value: float | None
    limit: float | None
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {tag}  {self.title}: {self.detail} [{self.seconds:.1f} s]"


def _result(number, title, value, limit, detail, t0, budget=None, passed=None):
    sec = time.perf_counter() - t0
    ok = (value is not None and value <= limit) if passed is None else passed
    if budget is not None and sec > budget:
        ok = False
        detail += f"; runtime over the {budget:g} s budget"
    return CriterionResult(number, title, bool(ok), value, limit, detail, sec)


# ------------------------------------------------------------ 1-6: bowl, OU, matrix ODEs


def criterion_1() -> CriterionResult:
    t0 = time.perf_counter()
    errs, slowest = [], 0.0
    for m in (1, 2, 3):
        t = time.perf_counter()
        fit = bowl_fit(solve_bowl(m, 2.0), "near")
        slowest = max(slowest, time.perf_counter() - t)
        errs.append(abs(fit["coeff"] - series_coefficients(m)[0]))
    err = max(errs)
    ok = err <= 1e-6 and slowest < 1.0
    return _result(1, "bowl near-field coefficient", err, 1e-6,
                   f"max error {err:.2e} (tol 1e-6), slowest m {slowest:.2f} s", t0, passed=ok)


def criterion_2() -> CriterionResult:
    t0 = time.perf_counter()
    errs = []
    for m in (1, 2, 3):
        fit = bowl_fit(solve_bowl(m, 100.0), "far")
        errs.append(abs(fit["coeff"] + 1.0 / (2.0 * math.sqrt(2.0) * m)))
    err = max(errs)
    return _result(2, "bowl far-field coefficient", err, 5e-3,
                   f"max error {err:.2e} (tol 5e-3), per m " + ", ".join(f"{e:.1e}" for e in errs),
                   t0, budget=5.0 * 3)


def criterion_3() -> CriterionResult:
    t0 = time.perf_counter()
    y = np.linspace(-6.0, 6.0, 121)
    res = []
    for f, lam in ((np.ones_like(y), 1.0), (y, 0.5), (y * y - 2.0, 0.0)):
        res.append(float(np.max(np.abs(ou_apply(f, y) - lam * f))))
    Y1, Y2 = np.meshgrid(y, y, indexing="ij")
    for f, lam in ((Y1 * Y2, 0.0), (Y2, 0.5), (Y1 * Y1 - 2.0, 0.0)):
        res.append(float(np.max(np.abs(ou_apply(f, [y, y]) - lam * f))))
    rule = build_quadrature(2, 40)
    basis = [neutral_basis(i, j, rule.nodes) for i, j in neutral_index_pairs(2)]
    gram = np.array([[np.dot(rule.weights, a * b) for b in basis] for a in basis])
    off = float(np.max(np.abs(gram - np.diag(np.diag(gram)))) / np.max(np.diag(gram)))
    r = max(res)
    ok = r <= 1e-8 and off <= 1e-10
    return _result(3, "OU eigenfunctions and neutral Gram matrix", max(r, off), 1e-8,
                   f"max residual {r:.1e} (tol 1e-8), relative off-diagonal Gram {off:.1e} (tol 1e-10)",
                   t0, budget=1.0, passed=ok)


def criterion_4() -> CriterionResult:
    t0 = time.perf_counter()
    err = 0.0
    for k in range(1, 7):
        ev = np.sort(np.linalg.eigvals(build_b_matrix(k).astype(float)).real)
        err = max(err, float(np.max(np.abs(ev + np.arange(k, 0, -1)))))
    return _result(4, "eigenvalues of B are -1..-k", err, 1e-10,
                   f"max error {err:.1e} over k = 1..6 (tol 1e-10)", t0, budget=1.0)


def _riccati(k: int, beta: float):
    return integrate_riccati(beta / -100.0 * np.eye(k), -100.0, -20.0, beta, step=1e-3)


def criterion_5() -> CriterionResult:
    t0 = time.perf_counter()
    errs = []
    for n, k in ((2, 1), (3, 2), (4, 3)):
        beta = CylinderParams(n, k).beta
        tr = _riccati(k, beta)
        exact = beta / tr.tau[:, None, None] * np.eye(k)[None]
        errs.append(float(np.max(np.abs(tr.a - exact))))
    err = max(errs)
    return _result(5, "Riccati exact solution beta/tau I", err, 1e-6,
                   f"max deviation {err:.1e} (tol 1e-6)", t0, budget=5.0 * 3)


def s_equation_residual(tr, beta: float) -> float:
    """max_j |S_j' + (S_1 S_j - (j+1) S_{j+1}) / beta| along a trajectory, S_j' by
    fourth-order centered differences of the recorded samples."""
    S = np.array([symmetric_polys(a) for a in tr.a])
    k = S.shape[1]
    h = tr.tau[1] - tr.tau[0]
    dS = (8.0 * (S[3:-1] - S[1:-3]) - (S[4:] - S[:-4])) / (12.0 * h)
    Sc = S[2:-2]
    Sn = np.concatenate([Sc[:, 1:], np.zeros((Sc.shape[0], 1))], axis=1)
    j = np.arange(1, k + 1)
    rhs = -(Sc[:, :1] * Sc - (j + 1) * Sn) / beta
    return float(np.max(np.abs(dS - rhs)))


def criterion_6() -> CriterionResult:
    t0 = time.perf_counter()
    errs = []
    for n, k in ((3, 2), (4, 3)):
        beta = CylinderParams(n, k).beta
        errs.append(s_equation_residual(_riccati(k, beta), beta))
    err = max(errs)
    return _result(6, "symmetric-polynomial ODE residual", err, 1e-6,
                   f"max residual {err:.1e} for k = 2, 3 (tol 1e-6)", t0, budget=5.0 * 2)


# ------------------------------------------------------------ 7-11: flow runs


class FlowRuns:
    """The two symmetric radial runs from the ellipsoidal data, computed once."""

    def __init__(self):
        self._runs: dict = {}
        self.seconds: dict = {}

    def get(self, n: int, k: int):
        if (n, k) not in self._runs:
            t0 = time.perf_counter()
            params = CylinderParams(n, k)
            cfg = FlowConfig(params=params, initial=InitialData(d=(1.0,) * k, tau_init=FLOW_TAU0),
                             tau_end=FLOW_TAU_END, cadence=1.0)
            self._runs[(n, k)] = run_flow(cfg)
            self.seconds[(n, k)] = time.perf_counter() - t0
        return self._runs[(n, k)]

    def probe(self, n: int, k: int):
        return self.get(n, k).nearest(PROBE_TAU).state


def neutral_coefficient(state) -> float:
    """a_11 of the truncated profile."""
    p = state.params
    rule = build_quadrature(p.k, 40 if p.k == 2 else 48)
    vals = truncated_values(state, rule.nodes)
    return float(project_modes(vals, p, rule, state.tau).a[0, 0])


def criterion_7(runs: FlowRuns) -> CriterionResult:
    t0 = time.perf_counter()
    parts, worst = [], 0.0
    for n, k in FLOW_CASES:
        s = runs.probe(n, k)
        beta = s.params.beta
        a = neutral_coefficient(s)
        dev = abs(a * abs(s.tau) + beta) / beta
        worst = max(worst, dev)
        parts.append(f"(n,k)=({n},{k}) a11|tau|/beta={a * abs(s.tau) / beta:.4f}")
    return _result(7, "neutral mode a11 ~ -beta/|tau| at tau=-40", worst, 0.1,
                   "; ".join(parts) + f"; max |a11|tau|+beta|/beta {worst:.3f} (tol 0.1)", t0)


def criterion_8(runs: FlowRuns) -> CriterionResult:
    t0 = time.perf_counter()
    parts, worst = [], 0.0
    for n, k in FLOW_CASES:
        s = runs.probe(n, k)
        val = intermediate_report(s) / math.sqrt(s.params.m)
        worst = max(worst, val)
        parts.append(f"({n},{k}) {val * math.sqrt(s.params.m):.4f}")
    return _result(8, "intermediate region at tau=-40", worst, 0.05,
                   "sup deviation " + ", ".join(parts) + f"; max ratio to sqrt(n-k) {worst:.3f} (tol 0.05)",
                   t0)


def criterion_9(runs: FlowRuns) -> CriterionResult:
    t0 = time.perf_counter()
    parts, worst, empty = [], 0.0, []
    for n, k in FLOW_CASES:
        s = runs.probe(n, k)
        try:
            val = collar_report(s) / s.params.m
        except InvalidArgument as exc:
            empty.append(f"({n},{k}) {exc}")
            continue
        worst = max(worst, val)
        parts.append(f"({n},{k}) {val:.4f}")
    if empty:
        return _result(9, "collar at tau=-40", None, 0.3, "; ".join(empty + parts), t0, passed=False)
    return _result(9, "collar at tau=-40", worst, 0.3,
                   "ratio to n-k " + ", ".join(parts) + " (tol 0.3)", t0)


def criterion_10(runs: FlowRuns) -> CriterionResult:
    t0 = time.perf_counter()
    parts, worst = [], 0.0
    for n, k in FLOW_CASES:
        s = runs.probe(n, k)
        bowl = solve_bowl(s.params.m, 20.0)
        val = tip_report(s, bowl) / math.sqrt(2 * s.params.m)
        worst = max(worst, val)
        parts.append(f"({n},{k}) {val * math.sqrt(2 * s.params.m):.4f}")
    return _result(10, "tip vs bowl on rho <= 5 at tau=-40", worst, 0.05,
                   "C0 distance " + ", ".join(parts) + f"; max ratio to sqrt(2(n-k)) {worst:.3f} (tol 0.05)",
                   t0)


def criterion_11(runs: FlowRuns) -> CriterionResult:
    t0 = time.perf_counter()
    worst, checked, skipped, parts = -np.inf, 0, 0, []
    for n, k in FLOW_CASES:
        excess = -np.inf
        for snap in runs.get(n, k).snapshots:
            try:
                margin, slack = concavity_report(snap.state, with_slack=True)
            except InvalidArgument:
                skipped += 1
                continue
            checked += 1
            excess = max(excess, margin - slack)
        worst = max(worst, excess)
        parts.append(f"({n},{k}) max(margin-slack) {excess:.2e}")
    if checked == 0:
        return _result(11, "collar concavity margin", None, 0.0, "region empty at every snapshot", t0,
                       passed=False)
    return _result(11, "collar concavity margin", worst, 0.0,
                   "; ".join(parts) + f"; {checked} snapshots checked, {skipped} with empty region", t0)


# ------------------------------------------------------------ 12-14


def load_c0() -> dict:
    text = resources.files("ovallab").joinpath("golden/tip_poincare_c0.json").read_text()
    return json.loads(text)


def _random_gaussian_function(rng: np.random.Generator, k: int):
    deg = [(i, j) for i in range(5) for j in range(5) if i + j <= 4] if k == 2 else [(i, 0) for i in range(5)]
    c = rng.normal(size=len(deg))
    om = rng.normal(size=k)
    ph = rng.uniform(0, 2 * np.pi)
    amp = rng.normal()

    def f(y):
        y = np.atleast_2d(y)
        y2 = y[:, 1] if k == 2 else np.zeros(len(y))
        out = sum(ci * y[:, 0] ** i * y2 ** j for ci, (i, j) in zip(c, deg))
        return out + amp * np.sin(y @ om + ph)

    return f


def criterion_12(seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    gauss = []
    for k, order in ((1, 48), (2, 40)):
        rule = build_quadrature(k, order)
        for _ in range(50):
            gauss.append(poincare_ratio(_random_gaussian_function(rng, k), rule))
    c0 = load_c0()
    params = CylinderParams(c0["n"], c0["k"])
    bowl = solve_bowl(params.m, c0["bowl_rho_max"])
    chart = bowl_tip_chart(bowl, c0["tau"], params.theta, ny=c0["chart_ny"])
    weight = tip_weight(chart, bowl, params.theta, c0["tau"])
    tip = [tip_poincare_check(random_admissible(rng, params.theta, c0["modes"]), weight)
           for _ in range(50)]
    g, t = max(gauss), max(tip)
    ok = g <= 6.0 and t <= c0["C0"] * (1 + 1e-9)
    return _result(12, "Poincare suites", max(g / 6.0, t / c0["C0"]), 1.0,
                   f"Gaussian max ratio {g:.3f} (tol 6), tip max ratio {t:.4f} (frozen C0 {c0['C0']:.4f})",
                   t0, budget=10.0, passed=ok)


def _perturbed_states(params: CylinderParams, rng: np.random.Generator):
    k = params.k
    c = params.radius
    a0 = rng.uniform(-0.3, 0.3, k)
    b0 = rng.uniform(-0.05, 0.05)
    pert = rng.uniform(-0.08, 0.08, (k, k))
    bend = np.eye(k) + 0.5 * (pert + pert.T)

    def make(tau):
        def fn(pts):
            y = (pts - a0) / (1 + b0)
            q = np.einsum("ni,ij,nj->n", y, bend, y) - 2 * np.trace(bend)
            return (1 + b0) * c * np.sqrt(np.maximum(1 - q / (2 * abs(tau)), 0.0))
        return FunctionState(params, float(tau), fn)

    return [make(t) for t in np.linspace(-116.0, -84.0, 17)]


def criterion_13(seed: int = 0, steps: int = 10_000) -> CriterionResult:
    t0 = time.perf_counter()
    p2 = CylinderParams(3, 2)
    g = make_grid_initial(InitialData(d=(0.9, 1.1), tau_init=-40.0), p2, R=10.0, h=0.2)
    dt = 0.2 * grid_stable_dt(g)
    sym = 0.0
    for _ in range(steps):
        g = step_grid2d(g, dt)
        sym = max(sym, symmetry_defect(g))
    rng = np.random.default_rng(seed)
    gauge = 0.0
    for n, k in ((2, 1), (3, 2)):
        for _ in range(3):
            gauge = max(gauge, gauge_fix(_perturbed_states(CylinderParams(n, k), rng), -100.0,
                                         tol=1e-10)["residual"])
    rule = build_quadrature(2, 40)
    iso = make_grid_initial(InitialData(d=(1.0, 1.0), tau_init=-40.0), p2, R=10.0, h=0.2)
    for _ in range(200):
        iso = step_grid2d(iso, grid_stable_dt(iso))
    ratio_err = 0.0
    for s in (make_initial(InitialData(d=(1.0, 1.0), tau_init=-100.0), p2), iso):
        r = spectral_ratio(truncated_values(s, rule.nodes), p2, rule)
        ratio_err = max(ratio_err, float(np.max(np.abs(r - 0.5))))
    ok = sym <= 1e-10 and gauge <= 1e-8 and ratio_err <= 1e-6
    return _result(13, "symmetry and gauge", max(sym, gauge), 1e-8,
                   f"grid symmetry defect {sym:.1e} over {steps} steps (tol 1e-10), "
                   f"gauge residual {gauge:.1e} (tol 1e-8), spectral ratio error {ratio_err:.1e} (tol 1e-6)",
                   t0, budget=60.0, passed=ok)


CROSS_H, CROSS_R, CROSS_MARGIN = 0.07, 8.0, 0.5


def cross_validation(h: float = CROSS_H, margin: float = CROSS_MARGIN, tau0: float = -30.0,
                     span: float = 5.0, every: float = 0.5) -> list[tuple[float, float]]:
    """sup |v_radial - v_grid| on grid cells at least ``margin`` from the truncation
    boundary, for the symmetric (3, 2) data, at every ``every`` time units."""
    from scipy.ndimage import distance_transform_edt
    p = CylinderParams(3, 2)
    data = InitialData(d=(1.0, 1.0), tau_init=tau0)
    r = make_initial(data, p)
    g = make_grid_initial(data, p, R=CROSS_R, h=h, profile=r)
    X, Y = np.meshgrid(g.x, g.x, indexing="ij")
    rr = np.sqrt(X * X + Y * Y)
    out = []
    for target in tau0 + every * np.arange(1, int(round(span / every)) + 1):
        while g.tau < target - 1e-12:
            g = step_grid2d(g, min(grid_stable_dt(g), target - g.tau))
        r = step_radial(r, target - r.tau, rtol=1e-9, atol=1e-11)
        core = distance_transform_edt(g.mask) * g.h > margin
        vr = r.v_at_y(np.where(core, rr, 0.0))
        out.append((float(target), float(np.max(np.abs(vr - g.v)[core]))))
    return out


def criterion_14() -> CriterionResult:
    t0 = time.perf_counter()
    rows = cross_validation()
    err = max(e for _, e in rows)
    return _result(14, "radial vs grid2d over 5 time units", err, 1e-3,
                   f"sup difference {err:.2e} (tol 1e-3) on cells > {CROSS_MARGIN} from the truncation "
                   f"boundary, h={CROSS_H}", t0)


# ------------------------------------------------------------ driver


def validate_shipped_configs(root: str | None = None) -> list[str]:
    """Parse every demos/configs/*.toml; returns error strings (empty when all are valid)."""
    from .config import load_config
    from .errors import ConfigError
    if root is None:
        root = os.path.join(os.path.dirname(__file__), "..", "..", "demos", "configs")
    errors = []
    for path in sorted(glob.glob(os.path.join(root, "*.toml"))):
        try:
            load_config(path)
        except ConfigError as exc:
            errors.append(f"{os.path.basename(path)}: {exc}")
    return errors


QUICK = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6)


def run_selftest(full: bool = False, seed: int = 0, echo=print) -> bool:
    results = [fn() for fn in QUICK]
    results.append(criterion_12(seed))
    results.append(criterion_13(seed))
    if full:
        runs = FlowRuns()
        results += [criterion_7(runs), criterion_8(runs), criterion_9(runs), criterion_10(runs),
                    criterion_11(runs), criterion_14()]
    results.sort(key=lambda r: r.number)
    for r in results:
        echo(r.line())
    if not full:
        echo("criteria 7-11 and 14 need the long flow runs: use --full")
    cfg_errors = validate_shipped_configs()
    for e in cfg_errors:
        echo(f"config FAIL  {e}")
    passed = sum(r.passed for r in results)
    echo(f"{passed}/{len(results)} criteria passed")
    return passed == len(results) and not cfg_errors
