import math

import numpy as np
import pytest

from ovallab.errors import InvalidArgument
from ovallab.flow import (EDGE, FlowConfig, InitialData, ProfileState, ansatz_v, chart_mismatch,
                          constant_mode, graphical_radius_check, invert_profile, make_initial,
                          read_snapshot, read_trajectory_states, recenter, run_flow, scale_transform,
                          stable_dt, step_radial, write_snapshot, write_trajectory)
from ovallab.gauss_spectral import CylinderParams, build_quadrature
from ovallab.grid2d import make_grid_initial


def sphere_state(params, tau, N):
    """The sphere v^2 + |y|^2 = 2n is a fixed point of the rescaled flow."""
    n, th, T = params.n, params.theta, abs(tau)
    vg = np.linspace(0, 2 * th, N + 1)
    yb = np.sqrt(2 * n - vg ** 2) / math.sqrt(T)
    zhat = math.sqrt(2 * n - (EDGE * th) ** 2) / math.sqrt(T)
    z = np.linspace(0, zhat, 3 * N + 1)
    vb = np.sqrt(np.maximum(2 * n - T * z ** 2, 0))
    vb[-1] = EDGE * th
    return ProfileState(params, tau, z, vb, vg, yb)


def sphere_errors(params, N):
    s = sphere_state(params, -6.0, N)
    for _ in range(20):
        s = step_radial(s, 0.1)
    T = abs(s.tau)
    ev = np.max(np.abs(s.vbar - np.sqrt(np.maximum(2 * params.n - T * s.z ** 2, 0))))
    ey = np.max(np.abs(s.ybar - np.sqrt(2 * params.n - s.vgrid ** 2) / math.sqrt(T)))
    return ev, ey


@pytest.mark.parametrize("n,k", [(2, 1), (3, 2)])
def test_sphere_is_stationary_with_second_order_convergence(n, k):
    p = CylinderParams(n, k)
    ev1, ey1 = sphere_errors(p, 200)
    ev2, ey2 = sphere_errors(p, 400)
    assert ev2 < 1.5e-2 and ey2 < 5e-4
    assert math.log2(ev1 / ev2) > 1.8
    assert math.log2(ey1 / ey2) > 1.8


def test_initial_state_matches_ansatz_on_the_body():
    p = CylinderParams(2, 1)
    data = InitialData(d=(1.0,), tau_init=-100.0)
    s = make_initial(data, p)
    y = np.linspace(0, 8, 50)
    np.testing.assert_allclose(s.v_at_y(y), ansatz_v(y[:, None], data, p), atol=1e-12)
    assert s.vbar[-1] == pytest.approx(EDGE * p.theta)
    assert chart_mismatch(s) < 1e-4
    # the tip lies near sqrt(2 |tau| + 2k)
    assert s.z_tip() * s.scale == pytest.approx(math.sqrt(2 * 100 + 2), rel=5e-3)


def test_initial_data_validation():
    with pytest.raises(InvalidArgument):
        InitialData(d=(1.0, -1.0))
    with pytest.raises(InvalidArgument):
        InitialData(tau_init=-10.0)
    with pytest.raises(InvalidArgument):
        InitialData(kind="sphere")
    assert InitialData(d=(2.0, 4.0)).d == pytest.approx((2 / 3, 4 / 3))
    with pytest.raises(InvalidArgument):
        make_initial(InitialData(d=(0.9, 1.1)), CylinderParams(3, 2))
    with pytest.raises(InvalidArgument):
        make_initial(InitialData(d=(1.0, 1.0)), CylinderParams(2, 1))


def test_ansatz_without_shift_is_the_ellipse():
    p = CylinderParams(2, 1)
    data = InitialData(d=(1.0,), tau_init=-50.0, center_shift=False)
    z = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(ansatz_v(z[:, None] * math.sqrt(50), data, p), np.sqrt(2 - z ** 2))
    assert np.isnan(ansatz_v(np.array([[20.0]]), data, p)[0])


def test_scale_transform_round_trip():
    p = CylinderParams(2, 1)
    s = make_initial(InitialData(d=(1.0,), tau_init=-60.0), p)
    b = 0.03
    t = scale_transform(s, b)
    assert t.tau == pytest.approx(s.tau + 2 * math.log1p(b))
    # v -> (1+b) v(y/(1+b)) at the same physical point
    y = np.linspace(0, 6, 13)
    np.testing.assert_allclose(t.v_at_y(y), (1 + b) * s.v_at_y(y / (1 + b)), atol=1e-9)
    back = scale_transform(t, 1 / (1 + b) - 1)
    assert back.tau == pytest.approx(s.tau)
    np.testing.assert_allclose(back.v_at_y(y), s.v_at_y(y), atol=1e-9)
    with pytest.raises(InvalidArgument):
        scale_transform(s, 0.7)


def test_recenter_zeroes_constant_mode():
    p = CylinderParams(2, 1)
    s = make_initial(InitialData(d=(1.0,), tau_init=-100.0, center_shift=False), p)
    rule = build_quadrature(1, 48)
    assert abs(constant_mode(s, rule)) > 1e-3
    t, b = recenter(s, rule)
    assert abs(constant_mode(t, rule)) < 1e-10
    assert b != 0.0


def test_short_run_and_persistence(tmp_path):
    p = CylinderParams(2, 1)
    cfg = FlowConfig(params=p, initial=InitialData(d=(1.0,), tau_init=-100.0), tau_end=-99.0,
                     cadence=0.5)
    traj = run_flow(cfg)
    np.testing.assert_allclose(traj.taus, [-100.0, -99.5, -99.0])
    assert traj.nearest(-99.4).tau == -99.5
    # the tip moves inward as |tau| decreases
    assert traj.steps[-1]["y_tip"] < traj.steps[0]["y_tip"]
    write_trajectory(traj, tmp_path / "run")
    states = read_trajectory_states(tmp_path / "run")
    last = traj.snapshots[-1].state
    np.testing.assert_array_equal(states[-1].vbar, last.vbar)
    np.testing.assert_allclose(states[-1].ybar, last.ybar, rtol=1e-15)
    assert states[-1].tau == last.tau


def test_grid_snapshot_round_trip(tmp_path):
    p = CylinderParams(3, 2)
    g = make_grid_initial(InitialData(d=(0.9, 1.1), tau_init=-30.0), p, R=8.0, h=0.2)
    write_snapshot(g, tmp_path / "g.csv")
    back = read_snapshot(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.mask, g.mask)
    np.testing.assert_array_equal(back.v[g.mask], g.v[g.mask])
    assert back.h == pytest.approx(g.h)


def test_rk2_and_bdf_agree():
    p = CylinderParams(2, 1)
    s = make_initial(InitialData(d=(1.0,), tau_init=-100.0), p, nv=200, ny=100)
    dt = stable_dt(s)
    n = int(math.ceil(2e-3 / dt))
    e = s
    for _ in range(n):
        e = step_radial(e, 2e-3 / n, scheme="rk2")
    i = step_radial(s, 2e-3, rtol=1e-10, atol=1e-12)
    assert np.max(np.abs(e.vbar - i.vbar)) < 1e-8
    with pytest.raises(InvalidArgument):
        step_radial(s, 10 * dt, scheme="rk2")
    with pytest.raises(InvalidArgument):
        step_radial(s, 0.1, scheme="euler")


def test_flow_config_validation():
    p = CylinderParams(2, 1)
    init = InitialData(d=(1.0,), tau_init=-100.0)
    with pytest.raises(InvalidArgument):
        FlowConfig(params=p, initial=init, tau_end=-120.0)
    with pytest.raises(InvalidArgument):
        FlowConfig(params=p, initial=init, tau_end=-50.0, backend="spectral")
    with pytest.raises(InvalidArgument):
        FlowConfig(params=p, initial=init, tau_end=-50.0, backend="grid2d")


def test_graphical_radius_on_initial_state():
    s = make_initial(InitialData(d=(1.0,), tau_init=-100.0), CylinderParams(2, 1))
    out = graphical_radius_check(s)
    assert out["ok"]
    assert out["radius"] == pytest.approx(2 * 100 ** 0.01)


def test_invert_profile():
    y = np.linspace(0, 1, 101)
    v = 2 - y ** 2
    got = invert_profile(y, v, [1.2, 1.5, 1.9])
    np.testing.assert_allclose(got, np.sqrt(2 - np.array([1.2, 1.5, 1.9])), atol=1e-8)
    with pytest.raises(InvalidArgument):
        invert_profile(y, v, [0.5])
