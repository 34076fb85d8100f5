import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from ovallab.errors import BlowUp, InvalidArgument
from ovallab.gauss_spectral import CylinderParams
from ovallab.selftest import s_equation_residual
from ovallab.spectral_dynamics import (build_b_matrix, integrate_riccati, integrate_xi,
                                       phase_portrait, sigma_of_tau, symmetric_polys, tau_of_sigma,
                                       write_phase_portrait, write_riccati_csv, xi_from_a)

BETA = CylinderParams(3, 2).beta


def riccati_exact(a0, tau0, tau, beta):
    # A(tau) = A0 (I + A0 (tau - tau0) / beta)^{-1} solves A' = -A^2 / beta
    k = a0.shape[0]
    return a0 @ np.linalg.inv(np.eye(k) + a0 * (tau - tau0) / beta)


@pytest.mark.parametrize("k", range(1, 9))
def test_b_spectrum(k):
    b = build_b_matrix(k)
    assert b.dtype.kind == "i"
    ev = np.sort(np.linalg.eigvals(b.astype(float)).real)
    np.testing.assert_allclose(ev, -np.arange(k, 0, -1), atol=1e-9)


def test_b_small_cases():
    np.testing.assert_array_equal(build_b_matrix(1), [[-1]])
    np.testing.assert_array_equal(build_b_matrix(2), [[-3, 1], [-2, 0]])
    with pytest.raises(InvalidArgument):
        build_b_matrix(0)


def test_riccati_isotropic_exact():
    k = 3
    tr = integrate_riccati(BETA / -100 * np.eye(k), -100.0, -20.0, BETA, step=1e-3, record_every=100)
    exact = BETA / tr.tau[:, None, None] * np.eye(k)
    assert np.max(np.abs(tr.a - exact)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_riccati_matches_closed_form(c):
    a0 = np.array([[1.0 + c[0], c[1]], [c[1], 1.0 + c[2]]]) * BETA / -100.0
    # I + a0 (tau - tau0)/beta stays invertible up to -40 only if every eigenvalue of
    # the bracket is below 100/60; beyond that the solution blows up first
    assume(np.max(np.linalg.eigvalsh(a0 * -100.0 / BETA)) < 1.6)
    tr = integrate_riccati(a0, -100.0, -40.0, BETA, step=1e-2)
    np.testing.assert_allclose(tr.final(), riccati_exact(a0, -100.0, -40.0, BETA), atol=1e-10)
    assert np.array_equal(tr.final(), tr.final().T)


def test_riccati_blow_up_where_closed_form_is_singular():
    # eigenvalue 1.8 of the bracket: I + a0 (tau + 100)/beta is singular at tau = -100 + 100/1.8
    a0 = np.diag([1.8, 1.0]) * BETA / -100.0
    with pytest.raises(BlowUp) as info:
        integrate_riccati(a0, -100.0, -40.0, BETA, step=1e-3)
    assert info.value.tau == pytest.approx(-100 + 100 / 1.8, abs=0.5)


def test_riccati_blow_up():
    # a0 = -beta/10 blows up after ten time units
    with pytest.raises(BlowUp) as info:
        integrate_riccati(np.array([[-BETA / 10]]), -100.0, -20.0, BETA, step=1e-3)
    assert -90.5 < info.value.tau < -89.9


def test_riccati_bad_arguments():
    with pytest.raises(InvalidArgument):
        integrate_riccati(np.eye(2), -10.0, -20.0, BETA)
    with pytest.raises(InvalidArgument):
        integrate_riccati(np.eye(2), -20.0, -10.0, -1.0)


def test_s_equation_on_anisotropic_trajectory():
    a0 = np.diag([1.2, 0.9, 1.0]) * BETA / -100.0
    a0[0, 1] = a0[1, 0] = 0.05 * BETA / 100.0
    tr = integrate_riccati(a0, -100.0, -20.0, BETA, step=1e-3)
    assert s_equation_residual(tr, BETA) < 1e-9


def test_symmetric_polys_of_diagonal():
    np.testing.assert_allclose(symmetric_polys(np.diag([1.0, 2.0, 3.0])), [6.0, 11.0, 6.0])


def test_xi_vanishes_on_isotropic_solution():
    for tau in (-100.0, -30.0):
        a = BETA / tau * np.eye(3)
        np.testing.assert_allclose(xi_from_a(a, tau, beta=BETA), 0.0, atol=1e-14)
    with pytest.raises(InvalidArgument):
        xi_from_a(np.eye(2), 1.0, beta=BETA)
    with pytest.raises(InvalidArgument):
        xi_from_a(np.eye(2), -1.0)


def test_sigma_round_trip():
    t = np.array([-100.0, -2.5])
    np.testing.assert_allclose(tau_of_sigma(sigma_of_tau(t)), t)


def test_linear_xi_flow_matches_expm():
    k = 3
    xi0 = np.array([0.3, -0.2, 0.1])
    tr = integrate_xi(xi0, 0.0, 2.0, step=1e-3, quadratic=False)
    want = expm(2.0 * build_b_matrix(k).astype(float)) @ xi0
    np.testing.assert_allclose(tr.xi[-1], want, atol=1e-12)


def test_xi_flow_reproduces_riccati_route():
    # same anisotropic data through the matrix ODE and through the xi ODE
    a0 = np.diag([1.2, 0.9, 1.0]) * BETA / -100.0
    a0[0, 1] = a0[1, 0] = 0.05 * BETA / 100.0
    tr = integrate_riccati(a0, -100.0, -20.0, BETA, step=1e-3)
    x_start = xi_from_a(tr.a[0], -100.0, beta=BETA)
    x_end = xi_from_a(tr.a[-1], -20.0, beta=BETA)
    xt = integrate_xi(x_start, math.log(100.0), math.log(20.0), step=1e-4)
    np.testing.assert_allclose(xt.xi[-1], x_end, atol=1e-9)


def test_phase_portrait_classes(tmp_path):
    rows = phase_portrait(2, [[0.0, 0.0], [0.05, 0.0], [2.0, 1.0]], sigma_span=8.0)
    assert len(rows) == 6
    assert rows[0]["cls"] == "fixed"
    # forward in sigma the linearization is stable (eigenvalues -1, -2)
    fwd = [r for r in rows if r["direction"] == "forward" and r["xi0"] == [0.05, 0.0]][0]
    assert fwd["cls"] == "converge-to-0"
    assert fwd["rate"] == pytest.approx(1.0, abs=0.15)
    assert {r["cls"] for r in rows} <= {"fixed", "converge-to-0", "converge-elsewhere", "blow-up"}
    path = tmp_path / "pp.json"
    write_phase_portrait(rows, path)
    assert json.loads(path.read_text())["schema"] == "ovallab.phase_portrait/1"
    with pytest.raises(InvalidArgument):
        phase_portrait(2, [[0.1]])


def test_riccati_csv(tmp_path):
    tr = integrate_riccati(BETA / -100 * np.eye(2), -100.0, -99.0, BETA, step=0.1)
    path = tmp_path / "r.csv"
    write_riccati_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,a11,a12,a21,a22,norm"
    assert len(lines) == tr.tau.size + 1
