"""Radial dual-chart solver for the rescaled profile equation.

Chart V holds v on the stretched coordinate z = y / sqrt|tau| (the oval's tip
then stays near z = sqrt(2)). Chart Y holds the inverse profile, also divided
by sqrt|tau|, on a fixed v-grid [0, 2 theta]. The charts overlap on roughly
[theta, 2 theta] and exchange Dirichlet data every right-hand-side evaluation.

In these variables, with T = |tau|,

  vbar_tau = vbar_zz/(T + vbar_z^2) + (k-1) vbar_z/(z T) - z vbar_z (1 + 1/T)/2
             + vbar/2 - m/vbar
  ybar_tau = ybar_vv/(1 + T ybar_v^2) + (m/v - v/2) ybar_v + ybar/2
             - (k-1)/(T ybar) + ybar/(2T)

which are the radial profile and inverse-profile equations rewritten for the
moving coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_simpson, solve_ivp

from .bowl import BowlProfile, bowl_eval, solve_bowl
from .errors import ChartBreakdown, FlowError, InvalidArgument
from .gauss_spectral import (CutoffSpec, CylinderParams, QuadratureRule, cutoff_eval,
                             smooth_step)

# ------------------------------------------------------------ interpolation


def lagrange4(x0: float, h: float, f: np.ndarray, xq, deriv: bool = False):
    """Cubic Lagrange interpolation on a uniform grid (4-point local stencil)."""
    xq = np.asarray(xq, dtype=float)
    n = f.size
    if n < 4:
        raise InvalidArgument("need at least 4 samples to interpolate")
    s = (xq - x0) / h
    i = np.clip(np.floor(s).astype(int), 1, n - 3)
    t = s - i
    fm, f0, f1, f2 = f[i - 1], f[i], f[i + 1], f[i + 2]
    tm1, tp1, tm2 = t - 1.0, t + 1.0, t - 2.0
    val = (-t * tm1 * tm2 / 6.0 * fm + tp1 * tm1 * tm2 / 2.0 * f0
           - tp1 * t * tm2 / 2.0 * f1 + tp1 * t * tm1 / 6.0 * f2)
    if not deriv:
        return val
    dm = -(3 * t * t - 6 * t + 2) / 6.0
    d0 = (3 * t * t - 4 * t - 1) / 2.0
    d1 = -(3 * t * t - 2 * t - 2) / 2.0
    d2 = (3 * t * t - 1) / 6.0
    return val, (dm * fm + d0 * f0 + d1 * f1 + d2 * f2) / h


def invert_decreasing(x: np.ndarray, f: np.ndarray, target, start: int = 0, iters: int = 6):
    """Solve f(x) = target where f is decreasing on x[start:], cubic accuracy.

    Targets above f[start] map to x[start]; below f[-1] map to x[-1].
    """
    target = np.asarray(target, dtype=float)
    xs, fs = x[start:], f[start:]
    guess = np.interp(target, fs[::-1], xs[::-1])
    h = x[1] - x[0]
    lo, hi = xs[0], xs[-1]
    xq = guess
    for _ in range(iters):
        p, dp = lagrange4(x[0], h, f, xq, deriv=True)
        dp = np.where(np.abs(dp) > 1e-300, dp, -1e-300)
        xq = np.clip(xq - (p - target) / dp, lo, hi)
    xq = np.where(target >= fs[0], lo, xq)
    xq = np.where(target <= fs[-1], hi, xq)
    return xq


def _decreasing_start(f: np.ndarray) -> int:
    """First index after which f is strictly decreasing."""
    inc = np.nonzero(np.diff(f) >= 0)[0]
    return int(inc[-1] + 1) if inc.size else 0


# ------------------------------------------------------------ state


@dataclass(frozen=True, eq=False)
class ProfileState:
    """Dual-chart radial profile at rescaled time tau.

    ``z``/``vbar``: chart V on z = y/sqrt|tau|, boundary node included.
    ``vgrid``/``ybar``: chart Y (Y/sqrt|tau|) on [0, 2 theta], boundary included;
    both are None when the tip chart is disabled (then chart V's outer value is
    held fixed).
    """

    params: CylinderParams
    tau: float
    z: np.ndarray
    vbar: np.ndarray
    vgrid: np.ndarray | None = None
    ybar: np.ndarray | None = None

    def __post_init__(self):
        for name in ("z", "vbar", "vgrid", "ybar"):
            arr = getattr(self, name)
            if arr is not None:
                bad = np.nonzero(~np.isfinite(arr))[0]
                if bad.size:
                    raise ChartBreakdown(f"non-finite {name} at index {int(bad[0])}",
                                         {"index": int(bad[0]), "field": name, "tau": self.tau})
        if not self.tau < 0:
            raise InvalidArgument("tau must be negative")

    # unscaled views -------------------------------------------------
    @property
    def scale(self) -> float:
        return math.sqrt(abs(self.tau))

    @property
    def y(self) -> np.ndarray:
        return self.z * self.scale

    @property
    def v(self) -> np.ndarray:
        return self.vbar

    @property
    def Y(self) -> np.ndarray | None:
        return None if self.ybar is None else self.ybar * self.scale

    @property
    def has_tip(self) -> bool:
        return self.vgrid is not None

    @property
    def overlap(self) -> tuple[float, float]:
        return (self.params.theta, 2.0 * self.params.theta)

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def dv(self) -> float:
        return float(self.vgrid[1] - self.vgrid[0])

    # global evaluation ----------------------------------------------
    def z_tip(self) -> float:
        if self.has_tip:
            return float(self.ybar[0])
        return float(self.z[-1])

    def vbar_at(self, zq) -> np.ndarray:
        """Profile in z-units; beyond chart V the tip chart is inverted; 0 past the tip."""
        zq = np.asarray(zq, dtype=float)
        out = np.empty_like(zq)
        inside = zq <= self.z[-1]
        out[inside] = lagrange4(0.0, self.dz, self.vbar, np.abs(zq[inside]))
        outside = ~inside
        if np.any(outside):
            if not self.has_tip:
                raise InvalidArgument("point beyond chart V and no tip chart")
            zo = zq[outside]
            vq = invert_decreasing(self.vgrid, self.ybar, zo)
            out[outside] = np.where(zo >= self.ybar[0], 0.0, vq)
        return out

    def v_at_y(self, yq) -> np.ndarray:
        return self.vbar_at(np.asarray(yq, dtype=float) / self.scale)

    def ybar_at(self, vq) -> np.ndarray:
        """Inverse profile in z-units; above chart Y chart V is inverted."""
        vq = np.asarray(vq, dtype=float)
        out = np.empty_like(vq)
        top = self.vgrid[-1] if self.has_tip else -1.0
        inside = vq <= top
        if np.any(inside):
            out[inside] = lagrange4(0.0, self.dv, self.ybar, vq[inside])
        if np.any(~inside):
            start = _decreasing_start(self.vbar)
            out[~inside] = invert_decreasing(self.z, self.vbar, vq[~inside], start=start)
        return out

    def Y_at(self, vq) -> np.ndarray:
        return self.ybar_at(vq) * self.scale

    def truncated(self, y_points: np.ndarray) -> np.ndarray:
        """v * chi_cyl(v) at points of R^k (array of shape (N, k))."""
        r = np.sqrt(np.sum(np.atleast_2d(y_points) ** 2, axis=1))
        vals = self.v_at_y(r)
        if not self.has_tip:
            vals = np.where(r / self.scale <= self.z[-1], vals, 0.0)
        vals = np.maximum(vals, 0.0)
        return vals * cutoff_eval(CutoffSpec("cyl", self.params.theta), vals)


# ------------------------------------------------------------ initial data


@dataclass(frozen=True)
class InitialData:
    """Ellipsoidal start v^2 = m (2 - sum d_i (y_i^2 - 2 c) / |tau|), c = 1 if centered.

    ``d`` is normalized to mean 1. With ``center_shift`` False the shift is
    dropped and v = sqrt(m (2 - z^2)) exactly in the isotropic case.
    """

    kind: str = "ellipsoidal"
    d: tuple = (1.0,)
    tau_init: float = -100.0
    center_shift: bool = True

    def __post_init__(self):
        if self.kind != "ellipsoidal":
            raise InvalidArgument(f"unknown initial kind {self.kind!r}")
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 1 or d.size < 1 or np.any(d <= 0):
            raise InvalidArgument("anisotropy d must be a nonempty vector of positive reals")
        object.__setattr__(self, "d", tuple(float(x) for x in d / d.mean()))
        if not self.tau_init <= -20:
            raise InvalidArgument("|tau_init| must be >= 20")


def ansatz_v(y: np.ndarray, data: InitialData, params: CylinderParams) -> np.ndarray:
    """Positive part of the ellipsoidal ansatz at points y of shape (N, k); NaN where not real."""
    y = np.atleast_2d(y)
    d = np.asarray(data.d)
    shift = 2.0 if data.center_shift else 0.0
    q = np.sum(d * (y ** 2 - shift), axis=1) / abs(data.tau_init)
    inner = params.m * (2.0 - q)
    return np.where(inner >= 0, np.sqrt(np.maximum(inner, 0.0)), np.nan)


EDGE = 0.9  # chart V ends where v = EDGE * theta


def make_initial(data: InitialData, params: CylinderParams, nv: int = 1400, ny: int = 400,
                 bowl: BowlProfile | None = None, tip: bool = True) -> ProfileState:
    """Radial initial state.

    The body is the ellipsoidal ansatz. The tip chart integrates a slope that
    blends the rescaled bowl (near v = 0) into the ansatz (v >= 1.5 theta), so
    the cap is bowl-shaped where the flow expects a bowl. Chart V ends where
    v = 0.9 theta; its outer part is read off the tip chart.
    """
    if len(data.d) != params.k:
        raise InvalidArgument("anisotropy vector length must equal k")
    if max(data.d) - min(data.d) > 1e-12:
        raise InvalidArgument("the radial backend needs isotropic d; use the grid backend")
    tau = data.tau_init
    T = abs(tau)
    m, k, th = params.m, params.k, params.theta
    c = (2.0 * k / T) if data.center_shift else 0.0
    vbar_of = lambda zz: np.sqrt(np.maximum(m * (2.0 + c - zz ** 2), 0.0))
    ybar_of = lambda vv: np.sqrt(np.maximum(2.0 + c - vv ** 2 / m, 0.0))
    if not tip:
        z = np.linspace(0.0, float(ybar_of(EDGE * th)), nv + 1)
        return ProfileState(params, tau, z, vbar_of(z))
    s = math.sqrt(T)
    if bowl is None:
        bowl = solve_bowl(m, max(2.0, 1.1 * s * 2.0 * th))
    fine = np.linspace(0.0, 2.0 * th, 16 * ny + 1)
    yb_a = ybar_of(fine)
    slope_a = -fine / (m * np.maximum(yb_a, 1e-300))
    slope_b = bowl_eval(bowl, s * fine)["zp"] / s
    w = smooth_step(fine / (1.5 * th))
    slope = w * slope_a + (1.0 - w) * slope_b
    prim = cumulative_simpson(slope, x=fine, initial=0.0)
    ybar_fine = yb_a[-1] + prim - prim[-1]
    vgrid = fine[::16].copy()
    ybar = ybar_fine[::16].copy()
    z_join = float(ybar_of(1.5 * th))
    z_hi = float(lagrange4(0.0, vgrid[1], ybar, EDGE * th))
    z = np.linspace(0.0, z_hi, nv + 1)
    vbar = vbar_of(z)
    outer = z > z_join
    vbar[outer] = invert_decreasing(vgrid, ybar, z[outer])
    vbar[-1] = EDGE * th
    return ProfileState(params, tau, z, vbar, vgrid, ybar)


# ------------------------------------------------------------ right-hand side
#
# Chart V lives on zeta in [0, 1] with z = zhat * zeta, where zhat(tau) is the
# tip chart's value at v = EDGE * theta. Its outer Dirichlet value is therefore
# the constant EDGE * theta, and the frame velocity zhat' is read from the tip
# chart's own time derivative.


@dataclass
class _Geometry:
    k: int
    m: int
    zeta: np.ndarray
    dzeta: float
    vgrid: np.ndarray | None
    dv: float
    nv: int  # chart V unknowns (nodes 0..nv-1); node nv is the boundary
    ny: int
    v_edge: float
    v_top: float
    zhat_fixed: float = 0.0
    fixed_vn: float = 0.0


def _chart_y_rhs(T, yfull, g: _Geometry):
    d = g.dv
    yb = yfull[:-1]
    yv = np.empty(g.ny)
    yvv = np.empty(g.ny)
    yv[0] = 0.0
    yvv[0] = 2.0 * (yfull[1] - yfull[0]) / (d * d)
    yv[1:] = (yfull[2:] - yfull[:-2]) / (2.0 * d)
    yvv[1:] = (yfull[2:] - 2.0 * yfull[1:-1] + yfull[:-2]) / (d * d)
    vv = g.vgrid[:g.ny]
    adv = np.empty(g.ny)
    adv[0] = g.m * yvv[0]
    adv[1:] = (g.m / vv[1:] - 0.5 * vv[1:]) * yv[1:]
    return (yvv / (1.0 + T * yv * yv) + adv + 0.5 * yb - (g.k - 1) / (T * yb)
            + yb / (2.0 * T))


def _chart_v_rhs(T, vfull, zhat, zhat_dot, g: _Geometry):
    h = g.dzeta
    n = g.nv
    vb = vfull[:-1]
    vs = np.empty(n)
    vss = np.empty(n)
    vs[0] = 0.0
    vss[0] = 2.0 * (vfull[1] - vfull[0]) / (h * h)
    vs[1:] = (vfull[2:] - vfull[:-2]) / (2.0 * h)
    vss[1:] = (vfull[2:] - 2.0 * vfull[1:-1] + vfull[:-2]) / (h * h)
    vz = vs / zhat
    vzz = vss / (zhat * zhat)
    zz = zhat * g.zeta[:n]
    axis = np.empty(n)
    axis[0] = vzz[0] / T
    axis[1:] = vz[1:] / (zz[1:] * T)
    return (vzz / (T + vz * vz) + (g.k - 1) * axis - 0.5 * zz * vz * (1.0 + 1.0 / T)
            + 0.5 * vb - g.m / vb + vz * g.zeta[:n] * zhat_dot)


def _frame(g: _Geometry, vb, yb):
    """zhat and the tip chart's top value (from inverting chart V)."""
    zhat = float(lagrange4(0.0, g.dv, yb, g.v_edge))
    start = _decreasing_start(vb)
    zs = float(invert_decreasing(g.zeta[:g.nv], vb, g.v_top, start=start))
    return zhat, zhat * zs


def _rhs(tau: float, u: np.ndarray, g: _Geometry) -> np.ndarray:
    T = -tau
    vb = u[:g.nv]
    if g.vgrid is None:
        vfull = np.append(vb, g.fixed_vn)
        return _chart_v_rhs(T, vfull, g.zhat_fixed, 0.0, g)
    yb = u[g.nv:]
    zhat, ym = _frame(g, vb, yb)
    yfull = np.append(yb, ym)
    dy_dt = _chart_y_rhs(T, yfull, g)
    zhat_dot = float(lagrange4(0.0, g.dv, dy_dt, g.v_edge))
    dv_dt = _chart_v_rhs(T, np.append(vb, g.v_edge), zhat, zhat_dot, g)
    return np.concatenate([dv_dt, dy_dt])


def _geometry(state: ProfileState) -> _Geometry:
    nv = state.z.size - 1
    zeta = state.z / state.z[-1]
    th = state.params.theta
    if state.has_tip:
        return _Geometry(state.params.k, state.params.m, zeta, float(zeta[1]), state.vgrid,
                         state.dv, nv, state.vgrid.size - 1, EDGE * th, float(state.vgrid[-1]))
    return _Geometry(state.params.k, state.params.m, zeta, float(zeta[1]), None, 0.0, nv, 0,
                     EDGE * th, 0.0, zhat_fixed=float(state.z[-1]),
                     fixed_vn=float(state.vbar[-1]))


def _sparsity(state: ProfileState, g: _Geometry, margin: int = 16):
    n = g.nv + g.ny
    rows, cols = [], []
    for off in (-1, 0, 1):
        i = np.arange(max(0, -off), g.nv - max(0, off))
        rows.append(i), cols.append(i + off)
        if g.ny:
            j = np.arange(max(0, -off), g.ny - max(0, off))
            rows.append(j + g.nv), cols.append(j + g.nv + off)
    if g.ny:
        je = int(round(g.v_edge / g.dv))
        edge_cols = np.arange(max(0, je - 5), min(g.ny, je + 6)) + g.nv
        # every chart V row sees the frame (zhat, zhat')
        rr, cc = np.meshgrid(np.arange(g.nv), edge_cols, indexing="ij")
        rows.append(rr.ravel()), cols.append(cc.ravel())
        zs = float(invert_decreasing(g.zeta, state.vbar, g.v_top,
                                     start=_decreasing_start(state.vbar)))
        i0 = int(round(zs / g.dzeta))
        iis = np.arange(max(0, i0 - margin), min(g.nv, i0 + margin + 1))
        last = g.nv + g.ny - 1
        rows.append(np.full(iis.size, last)), cols.append(iis)
        rows.append(np.full(edge_cols.size, last)), cols.append(edge_cols)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))


def _pack(state: ProfileState) -> np.ndarray:
    if state.has_tip:
        return np.concatenate([state.vbar[:-1], state.ybar[:-1]])
    return state.vbar[:-1].copy()


def _unpack(state: ProfileState, g: _Geometry, u: np.ndarray, tau: float) -> ProfileState:
    vb = u[:g.nv]
    if not g.ny:
        return replace(state, tau=float(tau), vbar=np.append(vb, g.fixed_vn))
    yb = u[g.nv:]
    zhat, ym = _frame(g, vb, yb)
    return replace(state, tau=float(tau), z=zhat * g.zeta, vbar=np.append(vb, g.v_edge),
                   ybar=np.append(yb, ym))


def stable_dt(state: ProfileState) -> float:
    """Explicit (Heun) step bound from the largest diffusion/advection rates."""
    T = abs(state.tau)
    dz = state.dz
    vz = np.gradient(state.vbar, dz)
    rate = np.max(4.0 / ((T + vz * vz) * dz ** 2) + 0.5 * state.z / dz)
    rate += 4.0 * (state.params.k - 1) / (T * dz ** 2)
    if state.has_tip:
        yv = np.gradient(state.ybar, state.dv)
        m = state.params.m
        vv = np.maximum(state.vgrid, state.dv)
        ry = np.max(4.0 / ((1.0 + T * yv * yv) * state.dv ** 2) + m / (vv * state.dv))
        ry = max(ry, 4.0 * (1.0 + m) / state.dv ** 2)
        rate = max(rate, ry)
    return 0.9 * 2.0 / rate


def chart_mismatch(state: ProfileState) -> float:
    """Max |Y - inverse of chart V| over tip-chart nodes in [theta, 2 theta], y-units."""
    if not state.has_tip:
        return 0.0
    th = state.params.theta
    sel = (state.vgrid >= th) & (state.vgrid <= 2.0 * th)
    vt = state.vgrid[sel]
    inv = invert_decreasing(state.z, state.vbar, vt, start=_decreasing_start(state.vbar))
    return float(np.max(np.abs(inv - state.ybar[sel])) * state.scale)


def _check_state(state: ProfileState, tol_factor: float):
    if np.any(state.vbar <= 0):
        i = int(np.argmin(state.vbar))
        raise ChartBreakdown("v <= 0 on chart V", {"index": i, "tau": state.tau})
    if state.has_tip:
        if np.any(state.ybar[:-1] <= 0):
            i = int(np.argmin(state.ybar))
            raise ChartBreakdown("Y <= 0 on chart Y", {"index": i, "tau": state.tau})
        mis = chart_mismatch(state)
        tol = tol_factor * state.scale
        if mis > 10.0 * tol:
            raise ChartBreakdown("chart overlap mismatch", {"mismatch": mis, "tol": tol,
                                                            "tau": state.tau})


def step_radial(state: ProfileState, dtau: float, scheme: str = "bdf", rtol: float = 1e-7,
                atol: float = 1e-9, consistency_tol: float = 1e-4) -> ProfileState:
    """Advance both charts by dtau (forward in tau).

    ``rk2`` is explicit Heun (dtau must respect ``stable_dt``); ``bdf`` is the
    implicit escape hatch for long runs.
    """
    if not dtau > 0:
        raise InvalidArgument("dtau must be positive")
    if state.tau + dtau >= 0:
        raise InvalidArgument("step would reach tau >= 0")
    g = _geometry(state)
    u0 = _pack(state)
    t0 = state.tau
    if scheme == "rk2":
        bound = stable_dt(state)
        if dtau > bound * (1 + 1e-12):
            raise InvalidArgument(f"dtau={dtau:g} exceeds the explicit bound {bound:g}")
        k1 = _rhs(t0, u0, g)
        k2 = _rhs(t0 + dtau, u0 + dtau * k1, g)
        u1 = u0 + 0.5 * dtau * (k1 + k2)
    elif scheme == "bdf":
        sol = solve_ivp(_rhs, (t0, t0 + dtau), u0, method="BDF", args=(g,), rtol=rtol,
                        atol=atol, jac_sparsity=_sparsity(state, g), t_eval=[t0 + dtau])
        if sol.status != 0 or sol.y.shape[1] == 0:
            raise FlowError(f"implicit step failed: {sol.message}", tau=t0)
        u1 = sol.y[:, -1]
    else:
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(u1)):
        bad = int(np.nonzero(~np.isfinite(u1))[0][0])
        raise ChartBreakdown(f"non-finite value at packed index {bad}", {"index": bad, "tau": t0})
    if np.any(u1[:g.nv] <= 0):
        raise ChartBreakdown("v <= 0 on chart V", {"tau": t0 + dtau})
    new = _unpack(state, g, u1, t0 + dtau)
    _check_state(new, consistency_tol)
    return new


# ------------------------------------------------------------ symmetries


def scale_transform(state: ProfileState, b: float) -> ProfileState:
    """Exact symmetry (shift of the extinction time):
    v -> (1+b) v(y/(1+b)), tau -> tau + 2 log(1+b)."""
    if not -0.5 < b < 0.5:
        raise InvalidArgument("scale parameter out of range")
    tau_new = state.tau + 2.0 * math.log1p(b)
    if tau_new >= 0:
        raise InvalidArgument("transform would reach tau >= 0")
    s_old, s_new = state.scale, math.sqrt(-tau_new)
    r = s_new / ((1.0 + b) * s_old)
    if not state.has_tip:
        return replace(state, tau=tau_new, vbar=(1.0 + b) * state.vbar_at(state.z * r))
    ybar = (1.0 + b) * s_old * state.ybar_at(state.vgrid / (1.0 + b)) / s_new
    edge = state.vbar[-1]
    zhat = float(lagrange4(0.0, state.dv, ybar, edge))
    z = zhat * (state.z / state.z[-1])
    vbar = (1.0 + b) * state.vbar_at(z * r)
    vbar[-1] = edge
    return replace(state, tau=tau_new, z=z, vbar=vbar, ybar=ybar)


def constant_mode(state: ProfileState, rule: QuadratureRule) -> float:
    """Coefficient of the constant eigenfunction in v_C - sqrt(2(n-k))."""
    vals = state.truncated(rule.nodes) - state.params.radius
    return float(np.dot(rule.weights, vals) / np.sum(rule.weights))


def recenter(state: ProfileState, rule: QuadratureRule, iters: int = 4):
    """Remove the unstable constant mode with the extinction-time symmetry."""
    c0 = constant_mode(state, rule)
    b = -c0 / state.params.radius
    b_prev, c_prev = 0.0, c0
    cur = state
    for _ in range(iters):
        cur = scale_transform(state, b)
        c = constant_mode(cur, rule)
        if abs(c) < 1e-14 or c == c_prev:
            break
        b, b_prev, c_prev = b - c * (b - b_prev) / (c - c_prev), b, c
    return cur, b


def invert_profile(y: np.ndarray, v: np.ndarray, v_targets) -> np.ndarray:
    """Y(v) for a chart-V profile that is strictly decreasing on the samples used.

    ``y`` must be uniform. The window is the part of the profile spanned by the
    targets.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    vt = np.asarray(v_targets, dtype=float)
    if vt.size > 1 and np.any(np.diff(vt) <= 0):
        raise InvalidArgument("targets must be increasing")
    if vt.min() < v.min() - 1e-14 or vt.max() > v.max() + 1e-14:
        raise InvalidArgument("targets outside the profile range")
    # the window: from the first sample at or below max target to the end
    start = int(np.nonzero(v <= vt.max() + 1e-14)[0][0])
    start = max(start - 1, 0) if v[max(start - 1, 0)] >= vt.max() else start
    if np.any(np.diff(v[start:]) >= 0):
        raise InvalidArgument("profile is not strictly decreasing on the inversion window")
    return invert_decreasing(y, v, vt, start=start)


def graphical_radius_check(state, tau: float | None = None, spacing: float = 0.1) -> dict:
    """|tau|^(1/50) times the C^4 norm of v - sqrt(2(n-k)) on B(0, 2|tau|^(1/100)).

    Radial states: radial derivatives up to order 4 by central differences
    with the given spacing. Grid states: all partial derivatives up to order 4.
    """
    tau = state.tau if tau is None else tau
    R = 2.0 * abs(tau) ** 0.01
    c = state.params.radius
    if isinstance(state, ProfileState):
        if R + 2 * spacing > state.y[-1]:
            raise InvalidArgument("ball exceeds the chart V domain")
        hh = min(spacing, R / 4)
        y = np.arange(-R - 2 * hh, R + 2 * hh + 0.5 * hh, hh)
        u = state.v_at_y(np.abs(y)) - c
        best = float(np.max(np.abs(u[2:-2])))
        d = u
        for order in range(1, 5):
            d = np.gradient(d, hh)
            inner = np.abs(y) <= R
            best = max(best, float(np.max(np.abs(d[inner]))))
    else:
        from .grid2d import GridProfileState
        if not isinstance(state, GridProfileState):
            raise InvalidArgument("unsupported state type")
        x = state.x
        if R + 3 * state.h > x[-1]:
            raise InvalidArgument("ball exceeds the grid domain")
        u = state.v - c
        X, Yg = np.meshgrid(x, x, indexing="ij")
        inner = X ** 2 + Yg ** 2 <= R * R
        best = float(np.max(np.abs(u[inner])))
        layer = [u]
        for order in range(1, 5):
            nxt = []
            for f in layer:
                nxt.append(np.gradient(f, state.h, axis=0))
            nxt.append(np.gradient(layer[-1], state.h, axis=1))
            layer = nxt
            for f in layer:
                best = max(best, float(np.max(np.abs(f[inner]))))
    value = abs(tau) ** 0.02 * best
    return {"ok": bool(value <= 1.0), "value": value, "radius": R}


# ------------------------------------------------------------ driver


@dataclass(frozen=True)
class FlowConfig:
    """Run description. The flow runs forward: tau0 < tau_end < 0."""

    params: CylinderParams
    initial: InitialData
    tau_end: float
    backend: str = "radial"
    dtau: float = 0.05  # first macro step (radial) or requested step (grid, capped)
    dtau_max: float = 0.5
    dtau_min: float = 1e-5
    cadence: float = 1.0
    scheme: str = "bdf"
    rtol: float = 1e-7
    atol: float = 1e-9
    consistency_tol: float = 1e-4
    nv: int = 1400
    ny: int = 400
    recenter: bool = True
    quad_order: int = 48
    grid_R: float = 8.0
    grid_h: float = 0.1
    v_floor: float | None = None
    min_radius: int = 4

    @property
    def tau0(self) -> float:
        return self.initial.tau_init

    def __post_init__(self):
        if self.backend not in ("radial", "grid2d"):
            raise InvalidArgument(f"unknown backend {self.backend!r}")
        if not self.tau0 <= self.tau_end < 0:
            raise InvalidArgument("need tau0 <= tau_end < 0")
        if self.cadence <= 0 or self.dtau <= 0 or self.dtau_max < self.dtau:
            raise InvalidArgument("cadence and steps must be positive, dtau <= dtau_max")
        if self.backend == "grid2d" and self.params.k != 2:
            raise InvalidArgument("grid backend needs k = 2")


@dataclass(frozen=True, eq=False)
class Snapshot:
    tau: float
    state: object  # ProfileState or GridProfileState


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    config: FlowConfig
    snapshots: tuple
    steps: tuple  # per-step scalars (dicts)

    @property
    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.snapshots])

    def nearest(self, tau: float) -> Snapshot:
        return self.snapshots[int(np.argmin(np.abs(self.taus - tau)))]


def step_scalars(state) -> dict:
    """Cheap per-step numbers: v(0), tip position (radial) or min v on the mask (grid)."""
    if isinstance(state, ProfileState):
        return {"tau": state.tau, "v0": float(state.vbar[0]), "y_tip": state.z_tip() * state.scale,
                "v_min": float(state.vbar.min())}
    c = state.half
    return {"tau": state.tau, "v0": float(state.v[c, c]),
            "y_tip": float(state.axis_section(0)[0][-1]),
            "v_min": float(state.v[state.mask].min())}


def _targets(config: FlowConfig) -> list[float]:
    out = []
    j = 1
    while True:
        t = config.tau0 + j * config.cadence
        if t >= config.tau_end - 1e-9:
            break
        out.append(t)
        j += 1
    out.append(config.tau_end)
    return out


def initial_state(config: FlowConfig):
    if config.backend == "radial":
        return make_initial(config.initial, config.params, nv=config.nv, ny=config.ny)
    from .grid2d import make_grid_initial
    return make_grid_initial(config.initial, config.params, R=config.grid_R, h=config.grid_h,
                             v_floor=config.v_floor, min_radius=config.min_radius)


def run_flow(config: FlowConfig, state=None) -> FlowTrajectory:
    """Evolve from the configured initial data, snapshotting at tau0 + j*cadence and tau_end.

    Radial runs take adaptive macro steps (grown by 1.5, halved on a chart
    breakdown) and remove the unstable constant mode before every step when
    ``recenter`` is set. Snapshots are taken before that correction.
    """
    if state is None:
        state = initial_state(config)
    snaps = [Snapshot(state.tau, state)]
    steps = [step_scalars(state) | {"dtau": 0.0, "recenter_b": 0.0}]
    if config.tau_end == config.tau0:
        return FlowTrajectory(config, tuple(snaps), tuple(steps))
    if config.backend == "radial":
        from .gauss_spectral import build_quadrature
        rule = build_quadrature(config.params.k, config.quad_order) if config.recenter else None
        dt = config.dtau
        for target in _targets(config):
            while state.tau < target - 1e-12:
                b = 0.0
                if rule is not None:
                    state, b = recenter(state, rule)
                h = min(dt, target - state.tau)
                try:
                    new = step_radial(state, h, scheme=config.scheme, rtol=config.rtol,
                                      atol=config.atol, consistency_tol=config.consistency_tol)
                except (ChartBreakdown, FlowError) as exc:
                    dt = h / 2
                    if dt < config.dtau_min:
                        raise FlowError(f"step size underflow: {exc}", tau=state.tau) from exc
                    continue
                state = new
                steps.append(step_scalars(state) | {"dtau": h, "recenter_b": b})
                dt = min(1.5 * dt, config.dtau_max)
            snaps.append(Snapshot(state.tau, state))
    else:
        from .grid2d import grid_stable_dt, step_grid2d
        for target in _targets(config):
            while state.tau < target - 1e-12:
                h = min(config.dtau, grid_stable_dt(state), target - state.tau)
                state = step_grid2d(state, h)
                steps.append(step_scalars(state) | {"dtau": h, "recenter_b": 0.0})
            snaps.append(Snapshot(state.tau, state))
    return FlowTrajectory(config, tuple(snaps), tuple(steps))


# ------------------------------------------------------------ persistence

SNAPSHOT_SCHEMA = "ovallab.radial_snapshot/1"
GRID_SCHEMA = "ovallab.grid_snapshot/1"
MANIFEST_SCHEMA = "ovallab.flow_manifest/1"


def _f(x) -> str:
    return repr(float(x))


def write_snapshot(state, path) -> None:
    from .grid2d import GridProfileState
    with open(path, "w", newline="") as fh:
        if isinstance(state, GridProfileState):
            fh.write(f"# schema={GRID_SCHEMA}\n")
            fh.write(f"# R={_f(state.R)} h={_f(state.h)} tau={_f(state.tau)} "
                     f"v_floor={_f(state.v_floor)} n={state.params.n} k={state.params.k}\n")
            for row, mrow in zip(state.v, state.mask):
                fh.write(",".join(_f(x) if m else "nan" for x, m in zip(row, mrow)) + "\n")
            return
        p = state.params
        fh.write(f"# schema={SNAPSHOT_SCHEMA}\n")
        fh.write(f"# tau={_f(state.tau)} n={p.n} k={p.k} theta={_f(p.theta)} big_l={_f(p.big_l)}\n")
        fh.write("# block=chartV\ny,v\n")
        for y, v in zip(state.y, state.vbar):
            fh.write(f"{_f(y)},{_f(v)}\n")
        if state.has_tip:
            fh.write("# block=chartY\nv,Y\n")
            for v, Y in zip(state.vgrid, state.Y):
                fh.write(f"{_f(v)},{_f(Y)}\n")


def _header(line: str) -> dict:
    out = {}
    for tok in line.lstrip("#").split():
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def read_snapshot(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    schema = _header(lines[0]).get("schema")
    meta = _header(lines[1])
    if schema == GRID_SCHEMA:
        from .grid2d import GridProfileState
        params = CylinderParams(int(meta["n"]), int(meta["k"]))
        rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]])
        h, R = float(meta["h"]), float(meta["R"])
        half = (rows.shape[0] - 1) // 2
        x = h * np.arange(-half, half + 1, dtype=float)
        mask = np.isfinite(rows)
        return GridProfileState(params, float(meta["tau"]), x, np.where(mask, rows, 0.0), mask,
                                float(meta["v_floor"]))
    if schema != SNAPSHOT_SCHEMA:
        raise InvalidArgument(f"unknown snapshot schema {schema!r}")
    params = CylinderParams(int(meta["n"]), int(meta["k"]), theta=float(meta["theta"]),
                            big_l=float(meta["big_l"]))
    tau = float(meta["tau"])
    blocks, cur = {}, None
    for ln in lines[2:]:
        if ln.startswith("# block="):
            cur = ln.split("=", 1)[1]
            blocks[cur] = []
        elif ln and not ln[0].isalpha():
            blocks[cur].append([float(x) for x in ln.split(",")])
    s = math.sqrt(-tau)
    cv = np.array(blocks["chartV"])
    vgrid = ybar = None
    if "chartY" in blocks:
        cy = np.array(blocks["chartY"])
        vgrid, ybar = cy[:, 0], cy[:, 1] / s
    return ProfileState(params, tau, cv[:, 0] / s, cv[:, 1], vgrid, ybar)


def config_echo(config: FlowConfig) -> dict:
    p = config.params
    out = {"n": p.n, "k": p.k, "theta": p.theta, "big_l": p.big_l,
           "initial": {"kind": config.initial.kind, "d": list(config.initial.d),
                       "tau_init": config.initial.tau_init,
                       "center_shift": config.initial.center_shift}}
    for f in ("tau_end", "backend", "dtau", "dtau_max", "dtau_min", "cadence", "scheme", "rtol",
              "atol", "consistency_tol", "nv", "ny", "recenter", "quad_order", "grid_R", "grid_h",
              "v_floor", "min_radius"):
        out[f] = getattr(config, f)
    return out


def write_trajectory(traj: FlowTrajectory, outdir) -> dict:
    """One CSV per snapshot plus manifest.json; returns the manifest."""
    import json
    import os
    os.makedirs(outdir, exist_ok=True)
    files = []
    for i, snap in enumerate(traj.snapshots):
        name = f"snapshot_{i:04d}.csv"
        write_snapshot(snap.state, os.path.join(outdir, name))
        files.append({"tau": snap.tau, "file": name})
    manifest = {"schema": MANIFEST_SCHEMA, "config": config_echo(traj.config),
                "snapshots": files, "steps": list(traj.steps)}
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_trajectory_states(outdir) -> list:
    """States from a written run directory, in snapshot order."""
    import json
    import os
    with open(os.path.join(outdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise InvalidArgument("not a flow manifest")
    return [read_snapshot(os.path.join(outdir, e["file"])) for e in manifest["snapshots"]]
