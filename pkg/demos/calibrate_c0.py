"""Freeze the tip Poincare constant C0 used by the acceptance suite.

C0 is the largest generalized eigenvalue of the pencil (M, K) on the cosine
family behind random_admissible (5 modes), for the bowl-capped tip chart of the
(n, k) = (2, 1) case at tau = -100:

    M_ij = |tau| int phi_i phi_j e^mu,   K_ij = int phi_i' phi_j' / (1 + Y_v^2) e^mu.

Every member of the family then has ratio <= C0, so the random check in the
suite is a consistency test between the per-function quadrature and the pencil.
Larger mode counts are printed to show how the supremum grows with the family.

    python3 demos/calibrate_c0.py [--write]
"""
import argparse
import json
import os

import numpy as np
from scipy.linalg import eigh

from ovallab.bowl import solve_bowl
from ovallab.diagnostics import _mu_at, admissible_function, bowl_tip_chart, tip_weight
from ovallab.gauss_spectral import CylinderParams

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "ovallab", "golden", "tip_poincare_c0.json")
N, K, TAU, MODES = 2, 1, -100.0, 5


def pencil(weight, theta, modes, nq=6000):
    # composite Gauss-Legendre on [0, 2 theta], independent of the cell layout used by the check
    x, w = np.polynomial.legendre.leggauss(10)
    edges = np.linspace(0.0, 2 * theta, nq // 10 + 1)
    a, b = edges[:-1, None], edges[1:, None]
    q = (0.5 * (a + b) + 0.5 * (b - a) * x[None, :]).ravel()
    qw = (0.5 * (b - a) * w[None, :]).ravel()
    ew = np.exp(_mu_at(weight, q))
    yv = weight.Yv(q)
    basis = [admissible_function(np.eye(modes)[j], theta)(q) for j in range(modes)]
    F = np.array([f for f, _ in basis])
    Fv = np.array([fv for _, fv in basis])
    M = abs(weight.tau) * (F * (qw * ew)) @ F.T
    Kmat = (Fv * (qw * ew / (1 + yv * yv))) @ Fv.T
    return M, Kmat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--write", action="store_true")
    args = ap.parse_args()
    params = CylinderParams(N, K)
    theta = params.theta
    bowl = solve_bowl(params.m, 20.0)
    chart = bowl_tip_chart(bowl, TAU, theta)
    weight = tip_weight(chart, bowl, theta, TAU)
    sups = {}
    for modes in (MODES, 10, 20):
        M, Kmat = pencil(weight, theta, modes)
        sups[modes] = float(eigh(M, Kmat, eigvals_only=True)[-1])
        print(f"modes={modes:3d}  sup ratio = {sups[modes]:.6f}")
    if args.write:
        doc = {"schema": "ovallab.golden_c0/1", "n": N, "k": K, "tau": TAU, "theta": theta,
               "modes": MODES, "bowl_rho_max": 20.0, "chart_ny": 400, "C0": sups[MODES]}
        with open(OUT, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print("wrote", os.path.normpath(OUT))


if __name__ == "__main__":
    main()
