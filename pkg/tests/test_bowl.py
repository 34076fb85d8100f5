import csv
import math

import mpmath as mp
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from ovallab.bowl import (bowl_eval, bowl_fit, rescaled_bowl, series_coefficients, solve_bowl,
                          write_bowl_csv)
from ovallab.errors import InvalidArgument, OutOfDomain


def series_oracle(m, order=8):
    """Even power series of the bowl from the ODE, solved order by order with sympy."""
    r = sp.symbols("r", positive=True)
    cs = sp.symbols(f"c2:{order + 1}:2")
    Z = sum(c * r ** (2 * (i + 1)) for i, c in enumerate(cs))
    Zp, Zpp = sp.diff(Z, r), sp.diff(Z, r, 2)
    expr = sp.expand(sp.series(Zpp + (1 + Zp ** 2) * (m * Zp / r + 1 / sp.sqrt(2)), r, 0, order).removeO())
    sol = {}
    for i in range(0, order, 2):
        eq = expr.coeff(r, i).subs(sol)
        c = cs[i // 2]
        sol[c] = sp.solve(eq, c)[0]
    return [float(sol[c]) for c in cs[: order // 2]]


_CACHE = {}


@pytest.fixture(scope="module")
def bowls():
    return {m: solve_bowl(m, 100.0) for m in (1, 2, 3)}


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_series_coefficients_match_sympy(m):
    c2, c4 = series_coefficients(m)
    want = series_oracle(m, order=4)
    assert c2 == pytest.approx(want[0], rel=1e-14)
    assert c4 == pytest.approx(want[1], rel=1e-14)


def test_solution_matches_mpmath_taylor_integration():
    m = 1
    coeffs = series_oracle(m, order=8)
    mp.mp.dps = 25
    r0 = mp.mpf("0.05")
    z0 = sum(c * r0 ** (2 * (i + 1)) for i, c in enumerate(coeffs))
    zp0 = sum(2 * (i + 1) * c * r0 ** (2 * i + 1) for i, c in enumerate(coeffs))
    f = mp.odefun(lambda r, u: [u[1], -(1 + u[1] ** 2) * (m * u[1] / r + 1 / mp.sqrt(2))], r0, [z0, zp0])
    prof = solve_bowl(m, 5.0)
    for rho in (0.5, 1.0, 2.0):
        z, zp = f(mp.mpf(rho))
        ev = bowl_eval(prof, rho)
        assert ev["z"] == pytest.approx(float(z), abs=1e-9)
        assert ev["zp"] == pytest.approx(float(zp), abs=1e-9)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_near_fit(bowls, m):
    fit = bowl_fit(bowls[m], "near")
    assert fit["coeff"] == pytest.approx(-1 / (2 * math.sqrt(2) * (m + 1)), abs=1e-6)
    assert fit["rho4_coeff"] == pytest.approx(series_coefficients(m)[1], rel=1e-3)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_far_fit(bowls, m):
    fit = bowl_fit(bowls[m], "far")
    assert fit["coeff"] == pytest.approx(-1 / (2 * math.sqrt(2) * m), abs=5e-3)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_residual_small(bowls, m):
    assert np.max(np.abs(bowls[m].residual())) < 1e-7


@pytest.mark.parametrize("m", [1, 3])
def test_profile_is_decreasing_and_concave(bowls, m):
    b = bowls[m]
    assert b.z[0] == 0.0 and b.zp[0] == 0.0
    assert np.all(b.zp[1:] < 0)
    assert np.all(np.diff(b.zp) < 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 99.0), st.sampled_from([1, 2]))
def test_slope_bounds(rho, m):
    # p = -Z' obeys p'/(1+p^2) = 1/sqrt2 - m p/rho, so p cannot cross the line rho/(sqrt2 m)
    if m not in _CACHE:
        _CACHE[m] = solve_bowl(m, 100.0)
    zp = bowl_eval(_CACHE[m], rho)["zp"]
    assert -rho / (math.sqrt(2) * m) <= zp <= 0.0


def test_rescaled_bowl_scaling():
    b = solve_bowl(1, 30.0)
    v = np.linspace(0, 0.2, 11)
    Y, dY = rescaled_bowl(b, v, -100.0)
    ev = bowl_eval(b, 10.0 * v)
    np.testing.assert_allclose(Y, ev["z"] / 10.0)
    np.testing.assert_allclose(dY, ev["zp"])


def test_bad_arguments():
    with pytest.raises(InvalidArgument):
        solve_bowl(0, 10.0)
    with pytest.raises(InvalidArgument):
        solve_bowl(1, 0.5)
    with pytest.raises(InvalidArgument):
        solve_bowl(1, 10.0, tol=1e-3)
    b = solve_bowl(1, 5.0)
    with pytest.raises(OutOfDomain):
        bowl_eval(b, 6.0)
    with pytest.raises(InvalidArgument):
        bowl_fit(b, "middle")


def test_csv_round_trip(tmp_path):
    b = solve_bowl(2, 3.0)
    path = tmp_path / "bowl.csv"
    write_bowl_csv(b, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rho", "z", "zp"]
    data = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(data[:, 1], b.z)
