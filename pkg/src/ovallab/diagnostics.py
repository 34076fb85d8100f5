"""Region-by-region checks on simulated states.

Radial states are sampled on uniform grids whose spacing matches the state's
own chart; grid states are read along the coordinate axes. All sup-norms are
grid maxima.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bowl import BowlProfile, bowl_eval
from .errors import GaugeFailure, InvalidArgument
from .flow import ProfileState, lagrange4
from .gauss_spectral import (CutoffSpec, CylinderParams, QuadratureRule, build_quadrature,
                             cutoff_eval, kappa_of, neutral_basis, neutral_index_pairs, norm_d,
                             norm_h, smooth_step)

REPORT_SCHEMA = "ovallab.region_report/1"


def _is_grid(state) -> bool:
    from .grid2d import GridProfileState
    return isinstance(state, GridProfileState)


def _radial_sections(state):
    """[(y >= 0 samples, v samples, spacing)] along the available radial directions."""
    if isinstance(state, ProfileState):
        return None
    out = []
    for axis in (0, 1):
        y, v = state.axis_section(axis)
        out.append((y, v, state.h))
    return out


# ------------------------------------------------------------ asymptotic regions


def parabolic_report(state, eps_window: float = 0.25) -> float:
    """|tau| sup_{|y| <= 1/eps} |v - sqrt(2m) + sqrt(2m)(|y|^2 - 2k)/(4|tau|)|."""
    if eps_window <= 0:
        raise InvalidArgument("eps_window must be positive")
    p = state.params
    T = abs(state.tau)
    R = 1.0 / eps_window
    c = p.radius
    if isinstance(state, ProfileState):
        if R > state.z_tip() * state.scale:
            raise InvalidArgument("window extends past the tip")
        h = state.dz * state.scale
        y = np.linspace(0.0, R, int(math.ceil(R / h)) + 1)
        v = state.v_at_y(y)
        r2 = y * y
    elif isinstance(state, FunctionState):
        n_side = 41 if p.k <= 2 else 17
        axes = [np.linspace(-R, R, n_side)] * p.k
        pts = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
        r2 = np.sum(pts ** 2, axis=1)
        pts = pts[r2 <= R * R]
        r2 = r2[r2 <= R * R]
        v = state.raw(pts)
    else:
        if R > state.mask_radius() * state.h:
            raise InvalidArgument("window exceeds the active grid")
        X, Y = np.meshgrid(state.x, state.x, indexing="ij")
        sel = X * X + Y * Y <= R * R
        v = state.v[sel]
        r2 = (X * X + Y * Y)[sel]
    dev = v - c + c * (r2 - 2 * p.k) / (4.0 * T)
    return T * float(np.max(np.abs(dev)))


INTERMEDIATE_WINDOW = (0.05, math.sqrt(2.0) - 0.2)


def intermediate_report(state) -> float:
    """sup over z in [0.05, sqrt2 - 0.2] of |v(z sqrt|tau|) - sqrt(m(2 - z^2))|."""
    p = state.params
    lo, hi = INTERMEDIATE_WINDOW
    T = abs(state.tau)
    if isinstance(state, ProfileState):
        z = np.arange(lo, hi + 1e-12, state.dz)
        v = state.vbar_at(z)
        return float(np.max(np.abs(v - np.sqrt(p.m * (2.0 - z * z)))))
    best = 0.0
    for y, v, _ in _radial_sections(state):
        z = y / math.sqrt(T)
        sel = (z >= lo) & (z <= hi)
        if z[-1] < hi:
            raise InvalidArgument("grid section does not cover the intermediate window")
        best = max(best, float(np.max(np.abs(v[sel] - np.sqrt(p.m * (2.0 - z[sel] ** 2))))))
    return best


def collar_window(state) -> tuple[float, float]:
    p = state.params
    return (p.big_l / math.sqrt(abs(state.tau)), 2.0 * p.theta)


def collar_report(state, form: str = "primal") -> float:
    """sup over the collar {L/sqrt|tau| <= v <= 2 theta} of |y (v^2)_y + 4m|.

    ``form="inverse"`` evaluates 4m |1 + v Y/(2m Y_v)| on the tip chart instead
    (the same quantity written through the inverse profile).
    """
    lo, hi = collar_window(state)
    if lo > hi:
        raise InvalidArgument(f"empty collar: L/sqrt|tau| = {lo:.4g} > 2 theta = {hi:.4g}")
    m = state.params.m
    if not isinstance(state, ProfileState):
        if form != "primal":
            raise InvalidArgument("grid states support the primal form only")
        best = None
        for y, v, h in _radial_sections(state):
            v2y = np.gradient(v * v, h)
            sel = (v >= lo) & (v <= hi)
            sel[0] = sel[-1] = False
            if np.any(sel):
                val = float(np.max(np.abs(y[sel] * v2y[sel] + 4 * m)))
                best = val if best is None else max(best, val)
        if best is None:
            raise InvalidArgument("collar not resolved on the grid sections")
        return best
    if form == "primal":
        h = state.dz * state.scale
        y_lo = float(state.Y_at(np.array([hi]))[0]) if state.has_tip else 0.0
        y_hi = float(state.Y_at(np.array([lo]))[0]) if state.has_tip else state.y[-1]
        y = np.arange(y_lo - h, y_hi + 2 * h, h)
        v = state.v_at_y(y)
        v2y = (v[2:] ** 2 - v[:-2] ** 2) / (2 * h)
        yi, vi = y[1:-1], v[1:-1]
        sel = (vi >= lo) & (vi <= hi)
        if not np.any(sel):
            raise InvalidArgument("collar not resolved at this spacing")
        return float(np.max(np.abs(yi[sel] * v2y[sel] + 4 * m)))
    if form == "inverse":
        if not state.has_tip:
            raise InvalidArgument("inverse form needs the tip chart")
        dv = state.dv
        v = np.arange(lo - dv, hi + 2 * dv, dv)
        v = v[v >= 0]
        Y = state.Y_at(v)
        Yv = (Y[2:] - Y[:-2]) / (2 * dv)
        vi, Yi = v[1:-1], Y[1:-1]
        sel = (vi >= lo) & (vi <= hi)
        return float(np.max(4 * m * np.abs(1.0 + vi[sel] * Yi[sel] / (2 * m * Yv[sel]))))
    raise InvalidArgument(f"unknown form {form!r}")


TIP_RHO = 5.0


def tip_report(state, bowl: BowlProfile, rho_max: float = TIP_RHO) -> float:
    """C^0 distance on rho <= rho_max between the tip and the bowl.

    The tip is recentered at its end point and stretched by sqrt|tau| (the tip
    scale lambda(s) = sqrt(log|s|/|s|) with s = -e^{-tau}, written in rescaled
    variables), so it is compared with Z_B(rho) at rho = sqrt|tau| v.
    """
    if not isinstance(state, ProfileState) or not state.has_tip:
        raise InvalidArgument("tip_report needs a radial state with a tip chart")
    if bowl.rho_max < rho_max:
        raise InvalidArgument("bowl profile too short")
    s = state.scale
    v_hi = rho_max / s
    if v_hi > float(np.max(state.vbar)):
        raise InvalidArgument("chart too short for the tip window")
    v = np.arange(0.0, v_hi + 1e-15, state.dv)
    Y = state.Y_at(v)
    model = bowl_eval(bowl, s * v)["z"]
    return float(np.max(np.abs(s * (Y - Y[0]) - model)))


def concavity_region(state) -> float:
    return state.params.big_l / math.sqrt(abs(state.tau))


def concavity_report(state, with_slack: bool = False):
    """max over {v >= L/sqrt|tau|} of (v v_y)_y - 20 |tau|^(-3/2) v^(-3).

    With ``with_slack`` returns (margin, slack), slack = h^2/24 max|(v^2)_yyyy|,
    the leading truncation error of the centered difference.
    """
    T = abs(state.tau)
    v_lo = concavity_region(state)
    if isinstance(state, ProfileState):
        h = state.dz * state.scale
        if state.vbar[0] < v_lo:
            raise InvalidArgument("concavity region is empty")
        y_end = (float(state.Y_at(np.array([v_lo]))[0]) if state.has_tip and v_lo <= 2 * state.params.theta
                 else float(np.interp(v_lo, state.vbar[::-1], state.y[::-1])))
        n = int(math.floor(y_end / h))
        y = h * np.arange(-3, n + 4)
        v = state.v_at_y(np.abs(y))
        sections = [(y, v, h, slice(3, n + 4))]
    else:
        sections = []
        for y, v, h in _radial_sections(state):
            yy = np.concatenate([-y[3:0:-1], y])
            vv = np.concatenate([v[3:0:-1], v])
            sections.append((yy, vv, h, slice(3, yy.size - 3)))
    margin, slack, found = -np.inf, 0.0, False
    for y, v, h, core in sections:
        w = v * v
        q = np.full_like(w, np.nan)
        q[1:-1] = 0.5 * ((w[2:] + w[:-2]) - 2 * w[1:-1]) / (h * h)
        d4 = np.full_like(w, np.nan)
        d4[2:-2] = (w[4:] - 4 * w[3:-1] + 6 * w[2:-2] - 4 * w[1:-3] + w[:-4]) / h ** 4
        idx = np.arange(w.size)[core]
        idx = idx[(v[idx] >= v_lo) & (idx >= 2) & (idx < w.size - 2)]
        if idx.size == 0:
            continue
        found = True
        vals = q[idx] - 20.0 * T ** -1.5 * v[idx] ** -3
        margin = max(margin, float(np.max(vals)))
        slack = max(slack, h * h / 24.0 * float(np.max(np.abs(d4[idx]))))
    if not found:
        raise InvalidArgument("concavity region is empty")
    return (margin, slack) if with_slack else margin


# ------------------------------------------------------------ tip weight and norm

_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


def sphere_area(k: int) -> float:
    """|S^{k-1}|; equals 2 for k = 1."""
    return 2.0 * math.pi ** (k / 2.0) / math.gamma(k / 2.0)


@dataclass(frozen=True, eq=False)
class TipWeight:
    theta: float
    tau: float
    m: int
    v: np.ndarray
    mu: np.ndarray  # mu[0] = -inf at v = 0
    components: dict = field(default_factory=dict)
    _Y: np.ndarray | None = field(default=None, repr=False)
    _yb_slope: object = field(default=None, repr=False)
    _G: np.ndarray | None = field(default=None, repr=False)  # int_{v_i}^theta g
    _Yth: float = 0.0

    def integrand(self, vq):
        """d mu/dv at vq > 0 (the defining integrand, sign flipped)."""
        vq = np.asarray(vq, dtype=float)
        g, _, _ = _weight_pieces(self, vq)
        return -(g - self.m / vq)

    def Yv(self, vq):
        return lagrange4(0.0, self.v[1], self._Y, vq, deriv=True)[1]


def _weight_pieces(w: TipWeight, vq):
    """Smooth integrand g with mu(v) = -Y(theta)^2/4 + int_v^theta g - m log(theta/v)."""
    th = w.theta
    zeta = cutoff_eval(CutoffSpec("zeta", th), vq)
    Y, Yv = lagrange4(0.0, w.v[1], w._Y, vq, deriv=True)
    ybv = w._yb_slope(vq)
    zeta_piece = zeta * 0.5 * Y * Yv
    bowl_tail = (1.0 - zeta) * w.m * ybv * ybv / vq
    g = zeta_piece - bowl_tail + w.m * zeta / vq
    return g, zeta_piece, bowl_tail


def tip_weight(chart, bowl: BowlProfile, theta: float, tau: float) -> TipWeight:
    """mu(v) = -Y(theta)^2/4 + int_v^theta [zeta (Y^2/4)' - (1 - zeta) m (1 + Y_B'^2)/v'] dv'.

    ``chart`` is a radial state with a tip chart or a pair (uniform v-grid from
    0, unscaled Y). The 1/v part of the bowl term is integrated in closed form
    (a log), the rest by 8-point Gauss-Legendre on each grid cell.
    """
    if isinstance(chart, ProfileState):
        if not chart.has_tip:
            raise InvalidArgument("state has no tip chart")
        v, Y = chart.vgrid, chart.Y
        m = chart.params.m
    else:
        v, Y = (np.asarray(a, dtype=float) for a in chart)
        m = bowl.m
    if bowl.m != m and isinstance(chart, ProfileState):
        raise InvalidArgument("bowl dimension does not match the state")
    if v[0] != 0.0 or v[-1] < 2 * theta * (1 - 1e-12):
        raise InvalidArgument("chart must cover [0, 2 theta]")
    if not tau < 0:
        raise InvalidArgument("tau must be negative")
    dv = v[1] - v[0]
    if theta < 8 * dv:
        raise InvalidArgument("theta too small for the grid; the cutoff is not resolved")
    s = math.sqrt(abs(tau))
    if s * v[-1] > bowl.rho_max:
        raise InvalidArgument("bowl profile too short")
    slope = lambda vq: bowl_eval(bowl, s * np.asarray(vq))["zp"]
    w = TipWeight(theta, tau, m, v, np.empty(0), {}, Y, slope)
    # cell integrals of g, then cumulative from theta
    a, b = v[:-1], v[1:]
    nodes = 0.5 * (a[:, None] + b[:, None]) + 0.5 * dv * _GL8_X[None, :]
    g, zp, bt = _weight_pieces(w, nodes.ravel())
    cell = 0.5 * dv * (g.reshape(nodes.shape) @ _GL8_W)
    cell_z = 0.5 * dv * (zp.reshape(nodes.shape) @ _GL8_W)
    cell_b = 0.5 * dv * (bt.reshape(nodes.shape) @ _GL8_W)
    cum = np.concatenate([[0.0], np.cumsum(cell)])
    cum_z = np.concatenate([[0.0], np.cumsum(cell_z)])
    cum_b = np.concatenate([[0.0], np.cumsum(cell_b)])
    # value at theta (theta need not be a node)
    it = int(math.floor(theta / dv))
    def partial(fn_cum, piece_index):
        if abs(it * dv - theta) < 1e-14 * theta:
            return fn_cum[it]
        seg = 0.5 * (it * dv + theta) + 0.5 * (theta - it * dv) * _GL8_X
        vals = _weight_pieces(w, seg)[piece_index]
        return fn_cum[it] + 0.5 * (theta - it * dv) * float(vals @ _GL8_W)
    cth, cth_z, cth_b = partial(cum, 0), partial(cum_z, 1), partial(cum_b, 2)
    Yth = float(lagrange4(0.0, dv, Y, theta))
    with np.errstate(divide="ignore"):
        logterm = m * np.log(v / theta)
    G = cth - cum
    mu = -0.25 * Yth * Yth + G + logterm
    mu[0] = -np.inf
    zeta_piece = cth_z - cum_z
    comps = {"zeta_piece": zeta_piece, "bowl_piece": mu + 0.25 * Yth * Yth - zeta_piece}
    return TipWeight(theta, tau, m, v, mu, comps, Y, slope, G, Yth)


def tip_norm(F, weight: TipWeight, taus, k: int = 1) -> float:
    """sup over tau of |tau|^(-1/4) (int_{tau-1}^tau int F^2 e^mu dv dtau')^(1/2), times |S^{k-1}|.

    ``F`` has shape (len(taus), len(weight.v)). A single time slice counts as a
    window of length one.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if F.shape != (taus.size, weight.v.size):
        raise InvalidArgument("F must have shape (len(taus), len(v))")
    ew = np.exp(weight.mu)
    ew[~np.isfinite(weight.mu)] = 0.0
    dv = weight.v[1] - weight.v[0]
    spatial = np.array([np.trapezoid(f * f * ew, dx=dv) for f in F]) * sphere_area(k)
    if taus.size == 1:
        return abs(taus[0]) ** -0.25 * math.sqrt(spatial[0])
    best = 0.0
    for j in range(taus.size):
        lo = taus[j] - 1.0
        sel = (taus >= lo - 1e-12) & (taus <= taus[j])
        if taus[0] > lo + 1e-12 or np.count_nonzero(sel) < 2:
            continue
        val = np.trapezoid(spatial[sel], taus[sel])
        best = max(best, abs(taus[j]) ** -0.25 * math.sqrt(max(val, 0.0)))
    if best == 0.0 and taus[-1] - taus[0] < 1.0:
        val = np.trapezoid(spatial, taus) / (taus[-1] - taus[0])
        best = abs(taus[-1]) ** -0.25 * math.sqrt(val)
    return best


def tip_poincare_check(F, weight: TipWeight, tau: float | None = None) -> float:
    """|tau| int F^2 e^mu / int F_v^2/(1 + Y_v^2) e^mu for F'(0) = 0, F = 0 near 2 theta.

    ``F`` is a callable returning (F, F_v) at an array of v.
    """
    tau = weight.tau if tau is None else tau
    v = weight.v
    th = weight.theta
    f0, fv0 = (np.asarray(x, dtype=float) for x in F(np.array([0.0])))
    if abs(float(fv0[0])) > 1e-10:
        raise InvalidArgument("test function must satisfy F'(0) = 0")
    fe, _ = F(np.array([2 * th]))
    if abs(float(fe[0])) > 1e-10:
        raise InvalidArgument("test function must vanish at 2 theta")
    dv = v[1] - v[0]
    nodes = 0.5 * (v[:-1, None] + v[1:, None]) + 0.5 * dv * _GL8_X[None, :]
    q = nodes.ravel()
    qw = np.tile(0.5 * dv * _GL8_W, v.size - 1)
    sel = q <= 2 * th
    q, qw = q[sel], qw[sel]
    # mu between nodes: mu(v_i) + int_{v_i}^{q} dmu/dv
    mu_q = _mu_at(weight, q)
    ew = np.exp(mu_q)
    fv, fvv = (np.asarray(x, dtype=float) for x in F(q))
    Yv = weight.Yv(q)
    left = float(np.sum(qw * fv * fv * ew))
    right = float(np.sum(qw * fvv * fvv / (1.0 + Yv * Yv) * ew))
    if right <= 0.0:
        raise InvalidArgument("zero right-hand side")
    return abs(tau) * left / right


def _mu_at(weight: TipWeight, q: np.ndarray) -> np.ndarray:
    """mu at arbitrary points in (0, v_max]: node value of the smooth part plus a
    Gauss-Legendre piece, with the log term exact."""
    v = weight.v
    dv = v[1] - v[0]
    i = np.clip(np.floor(q / dv).astype(int), 0, v.size - 2)
    a = v[i]
    seg = 0.5 * (a[:, None] + q[:, None]) + 0.5 * (q - a)[:, None] * _GL8_X[None, :]
    g = _weight_pieces(weight, seg.ravel())[0].reshape(seg.shape)
    G = weight._G[i] - 0.5 * (q - a) * (g @ _GL8_W)
    with np.errstate(divide="ignore"):
        return -0.25 * weight._Yth ** 2 + G + weight.m * np.log(q / weight.theta)


def bowl_tip_chart(bowl: BowlProfile, tau: float, theta: float, ny: int = 400):
    """(v-grid, Y) of the rescaled bowl cap placed at y_tip = sqrt(2|tau|)."""
    s = math.sqrt(abs(tau))
    v = np.linspace(0.0, 2 * theta, ny + 1)
    Y = math.sqrt(2 * abs(tau)) + bowl_eval(bowl, s * v)["z"] / s
    return v, Y


def random_admissible(rng: np.random.Generator, theta: float, modes: int = 5):
    """Random even-at-0 test function with support in [0, 1.8 theta]."""
    return admissible_function(rng.normal(size=modes), theta)


def admissible_function(c, theta: float):
    """sum_j c_j cos(j pi v / (1.8 theta)) times a cutoff from 1 (v <= theta) to 0 (v >= 1.8 theta).

    Returns a callable giving (F, F_v).
    """
    c = np.asarray(c, dtype=float)
    modes = c.size
    L = 1.8 * theta

    def F(v):
        v = np.asarray(v, dtype=float)
        j = np.arange(modes)[:, None]
        arg = j * np.pi * v[None, :] / L
        base = c @ np.cos(arg)
        dbase = c @ (-(j * np.pi / L) * np.sin(arg))
        t = (v - theta) / (0.8 * theta)
        cut = 1.0 - smooth_step(t)
        # derivative of the cutoff by a narrow centered difference
        eps = 1e-6 * theta
        dcut = -(smooth_step(t + eps / (0.8 * theta)) - smooth_step(t - eps / (0.8 * theta))) / (2 * eps)
        return base * cut, dbase * cut + base * dcut

    return F


# ------------------------------------------------------------ gauge fixing


@dataclass(frozen=True, eq=False)
class FunctionState:
    """A profile given by a callable v(points) at time tau (for synthetic data)."""

    params: CylinderParams
    tau: float
    fn: object

    def raw(self, pts):
        return np.asarray(self.fn(np.atleast_2d(pts)), dtype=float)


def raw_values(state, pts: np.ndarray) -> np.ndarray:
    """Untruncated v at points of R^k; 0 beyond the tip."""
    pts = np.atleast_2d(pts)
    if isinstance(state, FunctionState):
        return state.raw(pts)
    if isinstance(state, ProfileState):
        r = np.sqrt(np.sum(pts ** 2, axis=1))
        out = np.zeros(r.size)
        inside = r < state.z_tip() * state.scale
        out[inside] = state.v_at_y(r[inside])
        return np.maximum(out, 0.0)
    return state.values_at(pts)


def _interp_in_tau(states, tau: float, pts: np.ndarray) -> np.ndarray:
    taus = np.array([s.tau for s in states])
    if tau < taus.min() - 1e-12 or tau > taus.max() + 1e-12:
        raise InvalidArgument(f"trajectory does not cover tau = {tau:g}")
    j = int(np.clip(np.searchsorted(taus, tau) - 2, 0, max(taus.size - 4, 0)))
    idx = range(j, min(j + 4, taus.size))
    vals = [raw_values(states[i], pts) for i in idx]
    ts = [taus[i] for i in idx]
    out = np.zeros(pts.shape[0])
    for a, (ta, va) in enumerate(zip(ts, vals)):
        wgt = 1.0
        for b, tb in enumerate(ts):
            if b != a:
                wgt *= (tau - tb) / (ta - tb)
        out += wgt * va
    return out


def transformed_truncated(states, params: CylinderParams, tau0: float, a, b: float, gamma: float,
                          R: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Truncated (1+b) v((R^{-1} y - a)/(1+b), (1+Gamma) tau0) at pts."""
    pre = (pts @ R) - np.asarray(a)[None, :]  # rows: R^{-1} y = R^T y
    vals = (1.0 + b) * _interp_in_tau(states, (1.0 + gamma) * tau0, pre / (1.0 + b))
    vals = np.maximum(vals, 0.0)
    return vals * cutoff_eval(CutoffSpec("cyl", params.theta), vals)


def _orthogonality_residual(vals, rule: QuadratureRule, params: CylinderParams, tau0: float,
                            eta_kappa: float = 0.0) -> np.ndarray:
    y = rule.nodes
    w = rule.weights
    c = params.radius
    T = abs(tau0)
    q = np.sum(y * y, axis=1) - 2 * params.k
    out = [float(np.dot(w, y[:, i] * (vals - c))) for i in range(params.k)]
    out.append(float(np.dot(w, vals - c)))
    out.append(float(np.dot(w, q * (vals + c * q / (4 * T)))) - eta_kappa / T)
    return np.array(out)


def _neutral_matrix(vals, rule: QuadratureRule, k: int) -> np.ndarray:
    a = np.zeros((k, k))
    for i, j in neutral_index_pairs(k):
        psi = neutral_basis(i, j, rule.nodes)
        a[i, j] = a[j, i] = np.dot(rule.weights, psi * vals) / np.dot(rule.weights, psi * psi)
    return a


def gauge_fix(states, tau0: float, rule: QuadratureRule | None = None, eta_kappa: float = 0.0,
              tol: float = 1e-8, max_iter: int = 50) -> dict:
    """Translation a, scale b and time dilation Gamma zeroing the positive modes and
    centering the quadratic mode at tau0, then the rotation R removing cross terms.

    ``states`` is a tau-ordered sequence of snapshots; values at (1+Gamma) tau0
    are interpolated (cubic in tau). Damped Newton with a finite-difference Jacobian.
    """
    states = list(states)
    params = states[0].params
    k = params.k
    rule = build_quadrature(k, 40 if k == 2 else 48) if rule is None else rule
    eye = np.eye(k)

    def resid(x):
        vals = transformed_truncated(states, params, tau0, x[:k], x[k], x[k + 1], eye, rule.nodes)
        return _orthogonality_residual(vals, rule, params, tau0, eta_kappa)

    x = np.zeros(k + 2)
    r = resid(x)
    for it in range(max_iter + 1):
        nr = float(np.max(np.abs(r)))
        if nr <= tol:
            break
        if it == max_iter:
            raise GaugeFailure("Newton did not converge", residual=nr)
        J = np.empty((k + 2, k + 2))
        for j in range(k + 2):
            e = np.zeros(k + 2)
            e[j] = 1e-6
            J[:, j] = (resid(x + e) - resid(x - e)) / 2e-6
        dx = np.linalg.solve(J, -r)
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * dx
            if abs(xn[k]) < 0.5 and abs(xn[k + 1]) <= 0.1:
                try:
                    rn = resid(xn)
                except InvalidArgument:
                    rn = None
                if rn is not None and np.max(np.abs(rn)) < (1 - 0.25 * lam) * nr:
                    break
            lam *= 0.5
        else:
            raise GaugeFailure("line search failed", residual=nr)
        x, r = xn, rn
    vals = transformed_truncated(states, params, tau0, x[:k], x[k], x[k + 1], eye, rule.nodes)
    A = _neutral_matrix(vals, rule, k)
    evals, Q = np.linalg.eigh(A)
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    Rm = Q.T if k > 1 else eye
    # the transformed profile is v(R^{-1} y); its neutral matrix is R A R^T
    vals_r = transformed_truncated(states, params, tau0, x[:k], x[k], x[k + 1], Rm, rule.nodes)
    cross = _neutral_matrix(vals_r, rule, k)
    cross_res = float(np.max(np.abs(cross - np.diag(np.diag(cross))))) if k > 1 else 0.0
    return {"a": x[:k].copy(), "b": float(x[k]), "Gamma": float(x[k + 1]), "R": Rm,
            "residual": float(np.max(np.abs(r))), "cross_residual": cross_res}


# ------------------------------------------------------------ pairs


@dataclass(frozen=True, eq=False)
class PairDiagnostics:
    taus: np.ndarray
    w_c_norm: np.ndarray
    w_c_dnorm: np.ndarray
    p0_norm: np.ndarray
    rest_dnorm: np.ndarray
    W_t_norm: float
    coercivity_ratio: float | None

    def to_json(self) -> dict:
        return {"taus": self.taus.tolist(), "w_c_H": self.w_c_norm.tolist(),
                "w_c_D": self.w_c_dnorm.tolist(), "p0_w_c_H": self.p0_norm.tolist(),
                "rest_D": self.rest_dnorm.tolist(), "W_t_tip": self.W_t_norm,
                "coercivity_ratio": self.coercivity_ratio}


def truncated_values(state, pts):
    vals = np.maximum(raw_values(state, pts), 0.0)
    return vals * cutoff_eval(CutoffSpec("cyl", state.params.theta), vals)


def pair_diagnostics(traj1, traj2, tau_window, params: CylinderParams, bowl: BowlProfile | None = None,
                     rule: QuadratureRule | None = None) -> PairDiagnostics:
    """Norms of the difference of two runs on a shared tau window.

    traj2 snapshots are matched to traj1 by nearest tau. The tip part uses the
    inverse profiles on traj1's v-grid weighted with traj1's tip weight.
    """
    lo, hi = tau_window
    s1 = [s for s in traj1 if lo - 1e-9 <= s.tau <= hi + 1e-9]
    if not s1:
        raise InvalidArgument("window holds no snapshots")
    t2 = np.array([s.tau for s in traj2])
    s2 = [traj2[int(np.argmin(np.abs(t2 - s.tau)))] for s in s1]
    k = params.k
    rule = build_quadrature(k, 40 if k == 2 else 48) if rule is None else rule
    taus, wh, wd, p0, rest = [], [], [], [], []
    Wt_rows, weights = [], []
    for a, b in zip(s1, s2):
        wfun = lambda pts, a=a, b=b: truncated_values(a, pts) - truncated_values(b, pts)
        vals = wfun(rule.nodes)
        A = _neutral_matrix(vals, rule, k)
        proj = lambda pts, A=A: sum(A[i, j] * neutral_basis(i, j, np.atleast_2d(pts))
                                    for i, j in neutral_index_pairs(k))
        p0_vals = proj(rule.nodes)
        taus.append(a.tau)
        wh.append(norm_h(vals, rule))
        wd.append(norm_d(wfun, rule))
        p0.append(norm_h(p0_vals, rule))
        rest.append(norm_d(lambda pts: wfun(pts) - proj(pts), rule))
        if (bowl is not None and isinstance(a, ProfileState) and isinstance(b, ProfileState)
                and a.has_tip and b.has_tip):
            th = params.theta
            chi_t = cutoff_eval(CutoffSpec("tip", th), a.vgrid)
            Wt_rows.append(chi_t * (a.Y - b.Y_at(a.vgrid)))
            weights.append(tip_weight(a, bowl, th, a.tau))
    Wt = 0.0
    if Wt_rows:
        F = np.array(Wt_rows)
        ew = weights[len(weights) // 2]
        Wt = tip_norm(F, ew, np.array(taus), k)
    den = max(p0)
    ratio = None if den == 0.0 else (max(rest) + Wt) / den
    return PairDiagnostics(np.array(taus), np.array(wh), np.array(wd), np.array(p0),
                           np.array(rest), float(Wt), ratio)


# ------------------------------------------------------------ region report


@dataclass(frozen=True)
class RegionReport:
    tau: float
    parabolic_dev: float | None
    intermediate_dev: float | None
    collar_dev: float | None
    tip_dev: float | None
    concavity_margin: float | None
    concavity_slack: float | None
    kappa: float | None
    windows: dict
    notes: dict

    def to_json(self) -> dict:
        return {"schema": REPORT_SCHEMA} | asdict(self)


def _try(fn, notes, key):
    try:
        return fn()
    except InvalidArgument as exc:
        notes[key] = str(exc)
        return None


def region_report(state, bowl: BowlProfile | None = None, eps_window: float = 0.25,
                  rule: QuadratureRule | None = None) -> RegionReport:
    """All region measures at one snapshot; inapplicable ones are None with a note."""
    notes: dict = {}
    p = state.params
    rule = build_quadrature(p.k, 40 if p.k == 2 else 48) if rule is None else rule
    par = _try(lambda: parabolic_report(state, eps_window), notes, "parabolic")
    if isinstance(state, FunctionState):
        # synthetic profiles carry no tip: only the Gaussian-scale measures apply
        kap = _try(lambda: kappa_of(lambda pts: truncated_values(state, pts), p, state.tau, rule), notes,
                   "kappa")
        for key in ("intermediate", "collar", "tip", "concavity"):
            notes[key] = "not defined for a synthetic profile"
        return RegionReport(state.tau, par, None, None, None, None, None, kap,
                            {"parabolic_radius": 1.0 / eps_window}, notes)
    inter = _try(lambda: intermediate_report(state), notes, "intermediate")
    col = _try(lambda: collar_report(state), notes, "collar")
    tip = None
    if bowl is not None:
        tip = _try(lambda: tip_report(state, bowl), notes, "tip")
    conc = _try(lambda: concavity_report(state, with_slack=True), notes, "concavity")
    kap = _try(lambda: kappa_of(lambda pts: truncated_values(state, pts), p, state.tau, rule), notes,
               "kappa")
    windows = {"parabolic_radius": 1.0 / eps_window, "intermediate_z": list(INTERMEDIATE_WINDOW),
               "collar_v": list(collar_window(state)), "tip_rho": TIP_RHO,
               "concavity_v_min": concavity_region(state)}
    return RegionReport(state.tau, par, inter, col, tip, None if conc is None else conc[0],
                        None if conc is None else conc[1], kap, windows, notes)


def write_reports(reports, json_path, csv_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump({"schema": REPORT_SCHEMA, "reports": [r.to_json() for r in reports]}, fh,
                  indent=1, sort_keys=True)
    if csv_path is not None:
        cols = ["tau", "parabolic_dev", "intermediate_dev", "collar_dev", "tip_dev",
                "concavity_margin", "concavity_slack", "kappa"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in reports:
                w.writerow(["" if getattr(r, c) is None else repr(float(getattr(r, c))) for c in cols])
