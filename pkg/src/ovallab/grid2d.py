"""Two-dimensional grid backend (k = 2) for the full quasilinear profile equation

  v_tau = (delta_ij - v_i v_j / (1 + |Dv|^2)) v_ij - y.Dv/2 + v/2 - m/v

on a uniform square grid. Cells where v drops below ``v_floor`` leave the active
mask for good; the tip itself is never resolved. Near the mask boundary the
derivatives fall back to one-sided three/four-point formulas applied to v^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ChartBreakdown, DomainCollapse, InvalidArgument
from .flow import InitialData, ProfileState, make_initial
from .gauss_spectral import CylinderParams


@dataclass(frozen=True, eq=False)
class GridProfileState:
    params: CylinderParams
    tau: float
    x: np.ndarray  # symmetric 1-D coordinates, x[i] = (i - N) h
    v: np.ndarray  # shape (2N+1, 2N+1), frozen values outside the mask
    mask: np.ndarray
    v_floor: float
    min_radius: int = 4

    def __post_init__(self):
        if self.params.k != 2:
            raise InvalidArgument("grid backend needs k = 2")
        if not self.tau < 0:
            raise InvalidArgument("tau must be negative")
        bad = np.argwhere(~np.isfinite(self.v) & self.mask)
        if bad.size:
            raise ChartBreakdown(f"non-finite v at {tuple(int(i) for i in bad[0])}",
                                 {"index": tuple(int(i) for i in bad[0]), "tau": self.tau})

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def half(self) -> int:
        return (self.x.size - 1) // 2

    @property
    def R(self) -> float:
        return float(self.x[-1])

    def axis_section(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """(y >= 0, v) along one coordinate axis inside the mask."""
        c = self.half
        line = self.v[c:, c] if axis == 0 else self.v[c, c:]
        ok = self.mask[c:, c] if axis == 0 else self.mask[c, c:]
        stop = int(np.argmin(ok)) if not ok.all() else ok.size
        return self.x[c:c + stop], line[:stop]

    def mask_radius(self) -> int:
        """Cells from the center to the first inactive cell along the axes."""
        c = self.half
        out = []
        for line in (self.mask[c:, c], self.mask[c::-1, c], self.mask[c, c:], self.mask[c, c::-1]):
            out.append(int(np.argmin(line)) if not line.all() else line.size)
        return min(out) - 1

    def values_at(self, pts: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at points (N, 2); 0 outside the mask."""
        pts = np.atleast_2d(pts)
        h, x0 = self.h, self.x[0]
        s = (pts - x0) / h
        i = np.clip(np.floor(s).astype(int), 0, self.x.size - 2)
        t = s - i
        out = np.zeros(pts.shape[0])
        inside = np.all((pts >= x0) & (pts <= -x0), axis=1)
        i0, i1 = i[:, 0], i[:, 1]
        tx, ty = t[:, 0], t[:, 1]
        vm = np.where(self.mask, self.v, 0.0)
        corners_ok = (self.mask[i0, i1] & self.mask[i0 + 1, i1] & self.mask[i0, i1 + 1]
                      & self.mask[i0 + 1, i1 + 1])
        val = ((1 - tx) * (1 - ty) * vm[i0, i1] + tx * (1 - ty) * vm[i0 + 1, i1]
               + (1 - tx) * ty * vm[i0, i1 + 1] + tx * ty * vm[i0 + 1, i1 + 1])
        out[inside & corners_ok] = val[inside & corners_ok]
        return out

    def truncated(self, y_points: np.ndarray) -> np.ndarray:
        from .gauss_spectral import CutoffSpec, cutoff_eval
        vals = self.values_at(y_points)
        return vals * cutoff_eval(CutoffSpec("cyl", self.params.theta), vals)


def make_grid_initial(data: InitialData, params: CylinderParams, R: float, h: float,
                      v_floor: float | None = None, min_radius: int = 4,
                      profile: ProfileState | None = None) -> GridProfileState:
    """Ellipsoidal data on the grid.

    With mean(d) = 1 the ansatz depends on y only through rho = sqrt(sum d_i y_i^2),
    so the isotropic radial profile (bowl-capped) is evaluated at rho.
    """
    if params.k != 2:
        raise InvalidArgument("grid backend needs k = 2")
    if not (R > 0 and h > 0):
        raise InvalidArgument("R and h must be positive")
    v_floor = params.theta / 2 if v_floor is None else float(v_floor)
    if profile is None:
        iso = InitialData(kind=data.kind, d=(1.0, 1.0), tau_init=data.tau_init,
                          center_shift=data.center_shift)
        profile = make_initial(iso, params)
    half = int(round(R / h))
    x = h * np.arange(-half, half + 1, dtype=float)
    X, Y = np.meshgrid(x, x, indexing="ij")
    d = np.asarray(data.d)
    rho = np.sqrt(d[0] * X * X + d[1] * Y * Y)
    v = np.zeros_like(rho)
    reach = profile.z_tip() * profile.scale
    inside = rho < reach
    v[inside] = profile.v_at_y(rho[inside])
    mask = _clean_mask(v >= v_floor)
    state = GridProfileState(params, float(data.tau_init), x, v, mask, v_floor, min_radius)
    if state.mask_radius() < min_radius:
        raise DomainCollapse(f"initial mask radius below {min_radius} cells")
    return state


def _clean_mask(mask: np.ndarray) -> np.ndarray:
    """Drop cells that cannot carry a centered or one-sided stencil in each direction."""
    m = mask.copy()
    m[:2, :] = False
    m[-2:, :] = False
    m[:, :2] = False
    m[:, -2:] = False
    while True:
        ok = m.copy()
        for t in (False, True):
            a = m.T if t else m
            good = (_shift_ok(a, (-1, 1)) | _shift_ok(a, (1, 2, 3)) | _shift_ok(a, (-1, -2, -3)))
            ok &= good.T if t else good
        if np.array_equal(ok, m):
            return m
        m = ok


def _shift_ok(act: np.ndarray, offsets) -> np.ndarray:
    """act[i + o] for all o in offsets, False where the index leaves the array."""
    n = act.shape[0]
    ok = act.copy()
    for o in offsets:
        sh = np.zeros_like(act)
        if o > 0:
            sh[:n - o] = act[o:]
        else:
            sh[-o:] = act[:n + o]
        ok &= sh
    return ok


def _d1_line(f: np.ndarray, act: np.ndarray, h: float) -> np.ndarray:
    """First derivative along axis 0: centered, else one-sided three-point.

    The backward formula is the exact mirror of the forward one, so reflected
    data give exactly negated derivatives.
    """
    cen = _shift_ok(act, (-1, 1))
    fw = _shift_ok(act, (1, 2)) & ~cen
    bw = _shift_ok(act, (-1, -2)) & ~cen
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    val_f = np.zeros_like(f)
    val_f[:-2] = (-3.0 * f[:-2] + 4.0 * f[1:-1] - f[2:]) / (2 * h)
    val_b = np.zeros_like(f)
    val_b[2:] = -((-3.0 * f[2:] + 4.0 * f[1:-1] - f[:-2]) / (2 * h))
    return np.where(cen, out, np.where(fw, val_f, np.where(bw, val_b, 0.0)))


def _d2_line(f: np.ndarray, act: np.ndarray, h: float) -> np.ndarray:
    """Second derivative along axis 0: centered, else one-sided four-point."""
    cen = _shift_ok(act, (-1, 1))
    fw = _shift_ok(act, (1, 2, 3)) & ~cen
    bw = _shift_ok(act, (-1, -2, -3)) & ~cen
    out = np.zeros_like(f)
    out[1:-1] = ((f[2:] + f[:-2]) - 2.0 * f[1:-1]) / (h * h)
    val_f = np.zeros_like(f)
    val_f[:-3] = (2.0 * f[:-3] - 5.0 * f[1:-2] + 4.0 * f[2:-1] - f[3:]) / (h * h)
    val_b = np.zeros_like(f)
    val_b[3:] = (2.0 * f[3:] - 5.0 * f[2:-1] + 4.0 * f[1:-2] - f[:-3]) / (h * h)
    return np.where(cen, out, np.where(fw, val_f, np.where(bw, val_b, 0.0)))


def _derivs(v: np.ndarray, mask: np.ndarray, h: float):
    """Derivatives of v taken through w = v^2, which stays smooth into the cap
    (there v^2 is close to linear in the distance to the tip) so the one-sided
    boundary stencils remain accurate."""
    w = v * v
    wx = _d1_line(w, mask, h)
    wy = _d1_line(w.T, mask.T, h).T
    wxx = _d2_line(w, mask, h)
    wyy = _d2_line(w.T, mask.T, h).T
    # mixed derivative as the y-derivative of w_x, symmetrized with the other order
    wxy = 0.5 * (_d1_line(wx.T, mask.T, h).T + _d1_line(wy, mask, h))
    safe = np.where(mask, v, 1.0)
    inv2 = 0.5 / safe
    vx, vy = wx * inv2, wy * inv2
    vxx = wxx * inv2 - vx * vx / safe
    vyy = wyy * inv2 - vy * vy / safe
    vxy = wxy * inv2 - vx * vy / safe
    return vx, vy, vxx, vyy, vxy


def grid_rhs(state: GridProfileState, v: np.ndarray | None = None) -> np.ndarray:
    v = state.v if v is None else v
    mask = state.mask
    h = state.h
    vx, vy, vxx, vyy, vxy = _derivs(v, mask, h)
    g = 1.0 + vx * vx + vy * vy
    X = state.x[:, None]
    Y = state.x[None, :]
    m = state.params.m
    safe = np.where(mask, v, 1.0)
    rhs = (vxx * (1.0 - vx * vx / g) + vyy * (1.0 - vy * vy / g) - 2.0 * vx * vy * vxy / g
           - 0.5 * (X * vx + Y * vy) + 0.5 * safe - m / safe)
    return np.where(mask, rhs, 0.0)


def grid_stable_dt(state: GridProfileState) -> float:
    h = state.h
    return 0.9 / (4.0 / (h * h) + 0.5 * state.R * 2.0 / h + 1.0 + state.params.m / state.v_floor ** 2)


def step_grid2d(state: GridProfileState, dtau: float) -> GridProfileState:
    """One explicit Heun step; cells falling below v_floor leave the mask."""
    if not dtau > 0:
        raise InvalidArgument("dtau must be positive")
    bound = grid_stable_dt(state)
    if dtau > bound * (1 + 1e-12):
        raise InvalidArgument(f"dtau={dtau:g} exceeds the explicit bound {bound:g}")
    if state.tau + dtau >= 0:
        raise InvalidArgument("step would reach tau >= 0")
    k1 = grid_rhs(state)
    v1 = state.v + dtau * k1
    k2 = grid_rhs(state, v1)
    v_new = state.v + 0.5 * dtau * (k1 + k2)
    bad = np.argwhere(~np.isfinite(v_new) & state.mask)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise ChartBreakdown(f"non-finite v at {idx}", {"index": idx, "tau": state.tau})
    mask = state.mask & (v_new >= state.v_floor)
    if not np.array_equal(mask, state.mask):
        mask = _clean_mask(mask)
    v_new = np.where(mask, v_new, state.v)
    new = replace(state, tau=state.tau + dtau, v=v_new, mask=mask)
    if new.mask_radius() < state.min_radius:
        raise DomainCollapse(f"mask radius fell below {state.min_radius} cells at tau={new.tau:g}", tau=float(new.tau))
    return new


def symmetry_defect(state: GridProfileState) -> float:
    """max |v - reflected v| over both axis reflections."""
    v = np.where(state.mask, state.v, 0.0)
    return float(max(np.max(np.abs(v - v[::-1, :])), np.max(np.abs(v - v[:, ::-1]))))


def cylinder_grid(params: CylinderParams, tau: float, R: float, h: float) -> GridProfileState:
    half = int(round(R / h))
    x = h * np.arange(-half, half + 1, dtype=float)
    v = np.full((x.size, x.size), params.radius)
    mask = _clean_mask(np.ones_like(v, dtype=bool))
    return GridProfileState(params, float(tau), x, v, mask, params.theta / 2)


def default_grid_spacing(R: float) -> float:
    return R / math.floor(R / 0.05)
