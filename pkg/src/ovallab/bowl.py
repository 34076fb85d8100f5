"""Rotationally symmetric translating bowl with speed 1/sqrt(2).

The profile solves Z''/(1+Z'^2) + m Z'/rho + 1/sqrt(2) = 0 with Z(0) = Z'(0) = 0,
so Z <= 0 and the bowl opens downward.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import IntegrationFailure, InvalidArgument, OutOfDomain

RHO_START = 1e-3
SPEED = 1.0 / math.sqrt(2.0)


def series_coefficients(m: int) -> tuple[float, float]:
    """(c2, c4) of Z = c2 rho^2 + c4 rho^4 + O(rho^6)."""
    c2 = -1.0 / (2.0 * math.sqrt(2.0) * (m + 1))
    c4 = 2.0 * c2 ** 3 / (3.0 + m)
    return c2, c4


def _rhs(m):
    def f(rho, u):
        zp = u[1]
        return [zp, -(1.0 + zp * zp) * (m * zp / rho + SPEED)]
    return f


@dataclass(frozen=True, eq=False)
class BowlProfile:
    m: int
    rho: np.ndarray
    z: np.ndarray
    zp: np.ndarray
    tol: float = 1e-11
    _spline: list = field(default_factory=list, repr=False)

    @property
    def rho_max(self) -> float:
        return float(self.rho[-1])

    def spline(self) -> CubicHermiteSpline:
        if not self._spline:
            self._spline.append(CubicHermiteSpline(self.rho, self.z, self.zp))
        return self._spline[0]

    def residual(self) -> np.ndarray:
        """ODE residual at interior samples, Z'' from 4th-order differences of Z'."""
        h = self.rho[1] - self.rho[0]
        zp = self.zp
        zpp = (8.0 * (zp[3:-1] - zp[1:-3]) - (zp[4:] - zp[:-4])) / (12.0 * h)
        r = self.rho[2:-2]
        zpi = zp[2:-2]
        return zpp / (1.0 + zpi ** 2) + self.m * zpi / r + SPEED


def solve_bowl(m: int, rho_max: float, tol: float = 1e-11, h: float = 0.005) -> BowlProfile:
    """Integrate the bowl ODE from a series launch at rho = 1e-3 with DOP853."""
    if int(m) != m or m < 1:
        raise InvalidArgument("m must be a positive integer")
    if rho_max < 1.0:
        raise InvalidArgument("rho_max must be >= 1")
    if not 1e-12 <= tol <= 1e-6:
        raise InvalidArgument("tol must lie in [1e-12, 1e-6]")
    n_int = int(math.ceil(rho_max / h))
    rho = np.linspace(0.0, rho_max, n_int + 1)
    c2, c4 = series_coefficients(m)
    r0 = RHO_START
    u0 = [c2 * r0 ** 2 + c4 * r0 ** 4, 2.0 * c2 * r0 + 4.0 * c4 * r0 ** 3]
    sol = solve_ivp(_rhs(m), (r0, rho_max), u0, method="DOP853", t_eval=rho[1:],
                    rtol=tol, atol=tol * 1e-2)
    if sol.status != 0:
        last = float(sol.t[-1]) if sol.t.size else r0
        raise IntegrationFailure(f"bowl integration stopped: {sol.message}", last_good=last)
    z = np.concatenate([[0.0], sol.y[0]])
    zp = np.concatenate([[0.0], sol.y[1]])
    return BowlProfile(int(m), rho, z, zp, tol)


def bowl_fit(profile: BowlProfile, window: str) -> dict:
    """Least-squares fit of the near (rho <= 0.1) or far (rho >= rho_max/2) branch.

    Near: z = c rho^2 + d rho^4. Far: z = c rho^2 + a log(rho) + b.
    Returns the rho^2 coefficient as ``coeff`` and the RMS fit residual.
    """
    rho, z = profile.rho, profile.z
    if window == "near":
        sel = (rho > 0) & (rho <= 0.1)
        cols = lambda r: [r ** 2, r ** 4]
    elif window == "far":
        sel = rho >= 0.5 * profile.rho_max
        cols = lambda r: [r ** 2, np.log(r), np.ones_like(r)]
    else:
        raise InvalidArgument(f"unknown window {window!r}")
    if np.count_nonzero(sel) < 4:
        raise InvalidArgument(f"{window} window holds too few samples")
    r = rho[sel]
    design = np.column_stack(cols(r))
    # column scaling keeps the normal equations well conditioned
    scale = np.linalg.norm(design, axis=0)
    coef, *_ = np.linalg.lstsq(design / scale, z[sel], rcond=None)
    coef = coef / scale
    resid = z[sel] - design @ coef
    out = {"window": window, "coeff": float(coef[0]),
           "residual": float(np.sqrt(np.mean(resid ** 2)))}
    if window == "near":
        out["rho4_coeff"] = float(coef[1])
    else:
        out["log_coeff"] = float(coef[1])
        out["offset"] = float(coef[2])
    return out


def bowl_eval(profile: BowlProfile, rho):
    """Cubic Hermite interpolation of (z, z') at rho in [0, rho_max]."""
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0) or np.any(r > profile.rho_max):
        raise OutOfDomain(f"rho outside [0, {profile.rho_max}]")
    sp = profile.spline()
    z, zp = sp(r), sp(r, 1)
    if r.ndim == 0:
        return {"z": float(z), "zp": float(zp)}
    return {"z": z, "zp": zp}


def rescaled_bowl(profile: BowlProfile, v, tau: float):
    """Y_B(v, tau) = |tau|^(-1/2) Z_B(|tau|^(1/2) v) and its v-derivative Z_B'(|tau|^(1/2) v)."""
    s = math.sqrt(abs(tau))
    ev = bowl_eval(profile, s * np.asarray(v, dtype=float))
    return ev["z"] / s, ev["zp"]


def write_bowl_csv(profile: BowlProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "z", "zp"])
        for r, z, zp in zip(profile.rho, profile.z, profile.zp):
            w.writerow([repr(float(r)), repr(float(z)), repr(float(zp))])
