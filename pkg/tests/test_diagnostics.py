import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ovallab.bowl import bowl_eval, solve_bowl
from ovallab.cli import cylinder_state
from ovallab.diagnostics import (REPORT_SCHEMA, FunctionState, admissible_function, bowl_tip_chart,
                                 collar_report, concavity_report, gauge_fix, intermediate_report,
                                 pair_diagnostics, parabolic_report, random_admissible, region_report,
                                 sphere_area, tip_norm, tip_poincare_check, tip_report, tip_weight,
                                 write_reports)
from ovallab.errors import GaugeFailure, InvalidArgument
from ovallab.flow import InitialData, ProfileState, ansatz_v, invert_decreasing, make_initial
from ovallab.gauss_spectral import CylinderParams
from ovallab.selftest import _perturbed_states, load_c0


@pytest.fixture(scope="module")
def bowl1():
    return solve_bowl(1, 40.0)


def expansion_gap(state, data, R):
    # independent evaluation of |tau| sup |ansatz - quadratic expansion| on |y| <= R
    p = state.params
    T = abs(state.tau)
    y = np.linspace(0, R, 4001)
    v = ansatz_v(y[:, None], data, p)
    return T * np.max(np.abs(v - p.radius * (1 - (y * y - 2 * p.k) / (4 * T))))


def test_parabolic_on_cylinder_is_the_quadratic_term():
    for n, k in ((2, 1), (3, 2)):
        p = CylinderParams(n, k)
        got = parabolic_report(cylinder_state(p, -100.0), eps_window=0.25)
        assert got == pytest.approx(p.radius * (16 - 2 * k) / 4, rel=1e-12)


def test_parabolic_on_ansatz():
    p = CylinderParams(2, 1)
    data = InitialData(d=(1.0,), tau_init=-100.0)
    s = make_initial(data, p)
    assert parabolic_report(s) == pytest.approx(expansion_gap(s, data, 4.0), rel=1e-5)
    with pytest.raises(InvalidArgument):
        parabolic_report(s, eps_window=0.01)


def test_intermediate_vanishes_for_unshifted_ansatz():
    p = CylinderParams(2, 1)
    s = make_initial(InitialData(d=(1.0,), tau_init=-100.0, center_shift=False), p)
    assert intermediate_report(s) < 1e-10
    shifted = make_initial(InitialData(d=(1.0,), tau_init=-100.0), p)
    # v differs by sqrt(m(2 + 2k/T - z^2)) - sqrt(m(2 - z^2)), largest at the window's upper end
    z = math.sqrt(2) - 0.2
    want = math.sqrt(2.02 - z * z) - math.sqrt(2 - z * z)
    assert intermediate_report(shifted) == pytest.approx(want, rel=3e-3)  # sampled at dz


@pytest.fixture(scope="module")
def collar_state():
    # theta = 0.1 and L = 1.5 put the collar [0.15, 0.2] inside the pure ansatz part of the chart
    p = CylinderParams(2, 1, theta=0.1, big_l=1.5)
    return make_initial(InitialData(d=(1.0,), tau_init=-100.0, center_shift=False), p, nv=20000)


def test_collar_both_forms_agree_with_closed_form(collar_state):
    # v^2 = m(2 - y^2/T) gives y (v^2)_y + 4m = 2 v^2, largest at v = 2 theta
    want = 2 * 0.2 ** 2
    # both are sampled sups, so they sit slightly below the closed form
    assert collar_report(collar_state, "primal") == pytest.approx(want, abs=1e-3)
    assert collar_report(collar_state, "inverse") == pytest.approx(want, abs=1e-3)


def test_collar_empty_at_desk_scale():
    s = make_initial(InitialData(d=(1.0,), tau_init=-40.0), CylinderParams(2, 1))
    with pytest.raises(InvalidArgument, match="empty collar"):
        collar_report(s)


def test_concavity_closed_form():
    p = CylinderParams(2, 1)
    s = make_initial(InitialData(d=(1.0,), tau_init=-100.0, center_shift=False), p)
    margin, slack = concavity_report(s, with_slack=True)
    T = 100.0
    want = -p.m / T - 20 * T ** -1.5 * (2 * p.m) ** -1.5
    assert margin == pytest.approx(want, abs=1e-7)
    assert 0 <= slack < 1e-6
    with pytest.raises(InvalidArgument, match="empty"):
        concavity_report(make_initial(InitialData(d=(1.0,), tau_init=-40.0), p))


def bowl_state(bowl, params, tau, nv=1500):
    """A radial state whose both charts are the rescaled bowl."""
    T = abs(tau)
    s = math.sqrt(T)
    vgrid, Y = bowl_tip_chart(bowl, tau, params.theta)
    rho = np.linspace(0, bowl.rho_max, 40001)
    zb = bowl_eval(bowl, rho)["z"]
    zhat = (math.sqrt(2 * T) + bowl_eval(bowl, s * 0.9 * params.theta)["z"] / s) / s
    z = np.linspace(0, zhat, nv + 1)
    # v(z) from Z_B(rho) = T (z - sqrt 2) / ... inverted on the fine table
    target = s * (z * s - math.sqrt(2 * T))
    vbar = invert_decreasing(rho, zb, target) / s
    vbar[-1] = 0.9 * params.theta
    return ProfileState(params, tau, z, vbar, vgrid, Y / s)


def test_tip_report_vanishes_on_the_bowl(bowl1):
    p = CylinderParams(2, 1)
    st_ = bowl_state(bowl1, p, -100.0)
    assert tip_report(st_, bowl1) < 1e-6
    with pytest.raises(InvalidArgument):
        tip_report(cylinder_state(p, -100.0), bowl1)


@pytest.fixture(scope="module")
def weight(bowl1):
    p = CylinderParams(2, 1)
    chart = bowl_tip_chart(bowl1, -100.0, p.theta)
    return tip_weight(chart, bowl1, p.theta, -100.0)


def test_tip_weight_is_gaussian_where_zeta_is_one(weight):
    th = weight.theta
    sel = (weight.v >= th / 4) & (weight.v <= 2 * th)
    np.testing.assert_allclose(weight.mu[sel], -weight._Y[sel] ** 2 / 4, atol=1e-10)
    assert weight.mu[0] == -np.inf


def test_tip_weight_bowl_zone_matches_quad(weight, bowl1):
    # for v < theta/8: d mu/dv = m (1 + Y_B'^2) / v, integrated independently with scipy quad
    th, m = weight.theta, weight.m
    s = 10.0
    f = lambda v: m * (1 + bowl_eval(bowl1, s * v)["zp"] ** 2) / v
    i, j = 3, 22
    a, b = weight.v[i], weight.v[j]
    assert b < th / 8
    want, _ = quad(f, a, b, epsabs=1e-13, epsrel=1e-13)
    assert weight.mu[j] - weight.mu[i] == pytest.approx(want, rel=1e-9)


def test_tip_weight_validation(bowl1):
    p = CylinderParams(2, 1)
    v, Y = bowl_tip_chart(bowl1, -100.0, p.theta)
    with pytest.raises(InvalidArgument):
        tip_weight((v[: len(v) // 2], Y[: len(v) // 2]), bowl1, p.theta, -100.0)
    with pytest.raises(InvalidArgument):
        tip_weight((v, Y), bowl1, p.theta, 5.0)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0))
def test_tip_norm_is_homogeneous(weight, c):
    F = np.cos(weight.v / weight.theta)
    base = tip_norm(F[None, :], weight, [-100.0])
    assert tip_norm(c * F[None, :], weight, [-100.0]) == pytest.approx(c * base, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_tip_poincare_below_frozen_constant(weight, seed):
    c0 = load_c0()
    F = random_admissible(np.random.default_rng(seed), weight.theta, c0["modes"])
    r = tip_poincare_check(F, weight)
    assert 0 < r <= c0["C0"] * (1 + 1e-9)


def test_tip_poincare_rejects_inadmissible(weight):
    th = weight.theta
    with pytest.raises(InvalidArgument, match="F'\\(0\\)"):
        tip_poincare_check(lambda v: (np.sin(v), np.cos(v)), weight)
    with pytest.raises(InvalidArgument, match="vanish"):
        tip_poincare_check(lambda v: (np.ones_like(v), np.zeros_like(v)), weight)
    F = admissible_function([1.0, 0.5], th)
    f, fv = F(np.array([0.0, 1.8 * th, 2 * th]))
    assert fv[0] == 0.0 and f[1] == 0.0 and f[2] == 0.0


@pytest.mark.parametrize("n,k", [(2, 1), (3, 2)])
def test_gauge_fix_converges_on_perturbed_states(n, k):
    rng = np.random.default_rng(11)
    out = gauge_fix(_perturbed_states(CylinderParams(n, k), rng), -100.0, tol=1e-10)
    assert out["residual"] <= 1e-10
    assert out["cross_residual"] < 1e-12
    assert abs(out["b"]) < 0.5 and abs(out["Gamma"]) <= 0.1
    R = out["R"]
    np.testing.assert_allclose(R @ R.T, np.eye(k), atol=1e-12)


def test_gauge_fix_reports_failure_outside_the_box():
    p = CylinderParams(2, 1)
    c = p.radius
    # bending 1.7 times the natural one needs |Gamma| > 0.1
    fn = lambda tau: FunctionState(p, tau, lambda pts: c * np.sqrt(np.maximum(
        1 - 1.7 * (pts[:, 0] ** 2 - 2) / (2 * abs(tau)), 0)))
    states = [fn(t) for t in np.linspace(-116, -84, 17)]
    with pytest.raises(GaugeFailure):
        gauge_fix(states, -100.0)


def test_pair_diagnostics_identical_and_distinct(bowl1):
    p = CylinderParams(2, 1)
    a = make_initial(InitialData(d=(1.0,), tau_init=-100.0), p)
    b = make_initial(InitialData(d=(1.0,), tau_init=-100.0, center_shift=False), p)
    same = pair_diagnostics([a], [a], (-100.0, -100.0), p, bowl=bowl1)
    assert same.W_t_norm < 1e-20 and same.coercivity_ratio is None
    diff = pair_diagnostics([a], [b], (-100.0, -100.0), p, bowl=bowl1)
    assert diff.w_c_norm[0] > 0 and diff.W_t_norm > 0
    js = diff.to_json()
    assert set(js) >= {"taus", "w_c_H", "w_c_D", "p0_w_c_H", "rest_D", "W_t_tip", "coercivity_ratio"}
    with pytest.raises(InvalidArgument):
        pair_diagnostics([a], [b], (-50.0, -40.0), p)


def test_region_report_and_writer(tmp_path, bowl1):
    p = CylinderParams(2, 1)
    s = make_initial(InitialData(d=(1.0,), tau_init=-100.0), p)
    rep = region_report(s, bowl1)
    assert rep.collar_dev is None and "collar" in rep.notes
    assert rep.parabolic_dev > 0 and rep.tip_dev is not None and rep.kappa is not None
    cyl = region_report(cylinder_state(p, -100.0))
    assert cyl.intermediate_dev is None and cyl.kappa > 0
    write_reports([rep, cyl], tmp_path / "r.json", tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["schema"] == REPORT_SCHEMA and len(doc["reports"]) == 2
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("tau,parabolic_dev") and len(lines) == 3
