"""Finite-dimensional dynamics of the neutral-mode matrix.

The coefficient matrix obeys dA/dtau = -A^2/beta + E. Its normalized elementary
symmetric polynomials xi_j = tau^j S_j / (C(k,j) beta^j) - 1 obey
dxi/dsigma = B xi - k xi_1 xi, with sigma = log|tau| (see ``xi_from_a``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUp, InvalidArgument
from .gauss_spectral import CylinderParams


def build_b_matrix(k: int) -> np.ndarray:
    if int(k) != k or k < 1:
        raise InvalidArgument("k must be a positive integer")
    b = np.zeros((k, k), dtype=np.int64)
    b[1:, 0] = -k
    for j in range(1, k + 1):
        b[j - 1, j - 1] += -(k - j)
        if j < k:
            b[j - 1, j] = k - j
    b[0, 0] = -(2 * k - 1)
    return b


@dataclass(frozen=True)
class RiccatiTrajectory:
    tau: np.ndarray
    a: np.ndarray  # shape (N, k, k)

    def final(self) -> np.ndarray:
        return self.a[-1]


@dataclass(frozen=True)
class XiTrajectory:
    sigma: np.ndarray
    xi: np.ndarray  # shape (N, k)
    norm: np.ndarray


def _sym(a):
    return 0.5 * (a + a.T)


def integrate_riccati(a0, tau_from: float, tau_to: float, beta: float, e_fn=None,
                      step: float = 1e-3, cap: float = 1e6, record_every: int = 1):
    """Fixed-step RK4 for dA/dtau = -A^2/beta + E(tau, A), symmetrized every step."""
    if not tau_from < tau_to < 0:
        raise InvalidArgument("need tau_from < tau_to < 0")
    if beta <= 0:
        raise InvalidArgument("beta must be positive")
    a = _sym(np.array(a0, dtype=float))
    nsteps = int(math.ceil((tau_to - tau_from) / step - 1e-9))
    h = (tau_to - tau_from) / nsteps
    inv_b = 1.0 / beta

    def rhs(t, x):
        d = -inv_b * (x @ x)
        if e_fn is not None:
            d = d + np.asarray(e_fn(t, x), dtype=float)
        return d

    taus, mats = [tau_from], [a.copy()]
    for i in range(nsteps):
        t = tau_from + i * h
        k1 = rhs(t, a)
        k2 = rhs(t + 0.5 * h, a + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, a + 0.5 * h * k2)
        k4 = rhs(t + h, a + h * k3)
        a = _sym(a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        t_new = tau_from + (i + 1) * h
        if not np.all(np.isfinite(a)) or np.linalg.norm(a) > cap:
            raise BlowUp(f"|A| exceeded cap {cap:g}", tau=t_new)
        if (i + 1) % record_every == 0 or i + 1 == nsteps:
            taus.append(t_new)
            mats.append(a.copy())
    return RiccatiTrajectory(np.array(taus), np.array(mats))


def symmetric_polys(a) -> np.ndarray:
    """S_1..S_k of the eigenvalues, read off the characteristic polynomial."""
    lam = np.linalg.eigvalsh(_sym(np.asarray(a, dtype=float)))
    c = np.poly(lam)  # prod (x - lam) = x^k - S1 x^(k-1) + S2 x^(k-2) ...
    k = lam.size
    return np.array([(-1) ** j * c[j] for j in range(1, k + 1)])


def xi_from_a(a, tau: float, params: CylinderParams | None = None, beta: float | None = None):
    """xi_j = tau^j S_j / (C(k,j) beta^j) - 1."""
    if not tau < 0:
        raise InvalidArgument("tau must be negative")
    if beta is None:
        if params is None:
            raise InvalidArgument("need params or beta")
        beta = params.beta
    s = symmetric_polys(a)
    k = s.size
    return np.array([tau ** j * s[j - 1] / (math.comb(k, j) * beta ** j) - 1.0
                     for j in range(1, k + 1)])


def sigma_of_tau(tau):
    return np.log(np.abs(tau))


def tau_of_sigma(sigma):
    return -np.exp(sigma)


def xi_rhs(xi, b, quadratic=True):
    d = b @ xi
    if quadratic:
        d = d - b.shape[0] * xi[0] * xi
    return d


def integrate_xi(xi0, sigma_from: float, sigma_to: float, error_fn=None, step: float = 1e-3,
                 quadratic: bool = True, cap: float = 1e6):
    """Fixed-step RK4 for dxi/dsigma = B xi - k xi_1 xi (+ error_fn(sigma, xi)).

    Either direction is allowed; the step sign follows sigma_to - sigma_from.
    """
    xi = np.array(xi0, dtype=float)
    k = xi.size
    b = build_b_matrix(k).astype(float)
    span = sigma_to - sigma_from
    nsteps = max(1, int(math.ceil(abs(span) / step - 1e-9))) if span != 0 else 0
    h = span / nsteps if nsteps else 0.0

    def rhs(s, x):
        d = xi_rhs(x, b, quadratic)
        if error_fn is not None:
            d = d + np.asarray(error_fn(s, x), dtype=float)
        return d

    sig = [sigma_from]
    out = [xi.copy()]
    for i in range(nsteps):
        s = sigma_from + i * h
        k1 = rhs(s, xi)
        k2 = rhs(s + 0.5 * h, xi + 0.5 * h * k1)
        k3 = rhs(s + 0.5 * h, xi + 0.5 * h * k2)
        k4 = rhs(s + h, xi + h * k3)
        xi = xi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s_new = sigma_from + (i + 1) * h
        if not np.all(np.isfinite(xi)) or np.linalg.norm(xi) > cap:
            raise BlowUp(f"|xi| exceeded cap {cap:g}", tau=s_new)
        sig.append(s_new)
        out.append(xi.copy())
    arr = np.array(out)
    return XiTrajectory(np.array(sig), arr, np.linalg.norm(arr, axis=1))


def _log_slope(sigma, norms):
    ok = norms > 1e-13
    if np.count_nonzero(ok) < 3:
        return float("nan")
    return float(np.polyfit(sigma[ok], np.log(norms[ok]), 1)[0])


def phase_portrait(k: int, xi0_list, sigma_span: float = 10.0, step: float = 1e-2,
                   cap: float = 1e6) -> list[dict]:
    """Classify flow lines from each start point, forward and backward in sigma.

    Classes: fixed, converge-to-0, converge-elsewhere, blow-up. The rate is the
    decay rate -d log|xi| / d|sigma| from a log-linear fit.
    """
    rows = []
    for xi0 in xi0_list:
        xi0 = np.asarray(xi0, dtype=float)
        if xi0.size != k:
            raise InvalidArgument("start point has wrong dimension")
        n0 = float(np.linalg.norm(xi0))
        for direction in (1, -1):
            row = {"xi0": xi0.tolist(), "direction": "forward" if direction > 0 else "backward"}
            if n0 == 0.0:
                row.update(cls="fixed", rate=None, final_norm=0.0)
                rows.append(row)
                continue
            try:
                tr = integrate_xi(xi0, 0.0, direction * sigma_span, step=step, cap=cap)
            except BlowUp as exc:
                row.update(cls="blow-up", rate=None, final_norm=None, blowup_sigma=exc.tau)
                rows.append(row)
                continue
            fin = float(tr.norm[-1])
            slope = _log_slope(np.abs(tr.sigma), tr.norm)
            if fin < 1e-2 * n0:
                cls = "converge-to-0"
            elif fin > 1e2 * max(n0, 1.0):
                cls = "blow-up"
            else:
                cls = "converge-elsewhere"
            row.update(cls=cls, rate=-slope, final_norm=fin)
            rows.append(row)
    return rows


def write_phase_portrait(rows, path) -> None:
    with open(path, "w") as fh:
        json.dump({"schema": "ovallab.phase_portrait/1", "rows": rows}, fh, indent=2, sort_keys=True)


def write_riccati_csv(traj: RiccatiTrajectory, path) -> None:
    k = traj.a.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau"] + [f"a{i+1}{j+1}" for i in range(k) for j in range(k)] + ["norm"])
        for t, a in zip(traj.tau, traj.a):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in a.ravel()]
                       + [repr(float(np.linalg.norm(a)))])


def write_xi_csv(traj: XiTrajectory, path) -> None:
    k = traj.xi.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma"] + [f"xi{j+1}" for j in range(k)] + ["norm"])
        for s, x, nrm in zip(traj.sigma, traj.xi, traj.norm):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in x] + [repr(float(nrm))])
