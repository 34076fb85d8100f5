"""Regenerate tests/golden/cutoffs.csv from a 30-digit mpmath quadrature of the bump.

The smooth step is int_0^t exp(-1/(s(1-s))) ds / int_0^1 (same), evaluated here
with tanh-sinh quadrature, independently of the Gauss-Legendre rule in the package.
"""
import csv
import os

import mpmath as mp

mp.mp.dps = 30
OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "golden", "cutoffs.csv")


def bump(s):
    return mp.e ** (-1 / (s * (1 - s))) if 0 < s < 1 else mp.mpf(0)


TOTAL = mp.quad(bump, [0, mp.mpf(1) / 2, 1])


def step(t):
    t = mp.mpf(t)
    if t <= 0:
        return mp.mpf(0)
    if t >= 1:
        return mp.mpf(1)
    return mp.quad(bump, [0, t]) / TOTAL


def cutoff(kind, theta, v):
    th, v = mp.mpf(theta), mp.mpf(v)
    if kind == "cyl":
        return step((v - 5 * th / 8) / (th / 4))
    if kind == "tip":
        return 1 - step((v - th) / th)
    return step((v - th / 8) / (th / 8))


def main():
    rows = []
    for theta in ("0.1414213562373095", "0.2"):
        for kind in ("cyl", "tip", "zeta"):
            for i in range(0, 41):
                v = mp.mpf(theta) * i / 16
                rows.append((kind, theta, mp.nstr(v, 17), mp.nstr(cutoff(kind, theta, v), 17)))
    with open(OUT, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "theta", "v", "value"])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
