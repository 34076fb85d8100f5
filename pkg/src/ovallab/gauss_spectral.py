"""Gaussian space on R^k: quadrature, the Ornstein-Uhlenbeck operator, mode
projections, norms and smooth cutoffs.

The weight throughout is exp(-|y|^2/4). Only k = 1 and k = 2 are supported by
the quadrature (tensor product for k = 2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateRatio, InvalidArgument

GAUSS_MASS_1D = 2.0 * math.sqrt(math.pi)


@dataclass(frozen=True)
class CylinderParams:
    """Cylinder R^k x S^(n-k) with the region thresholds used by the diagnostics.

    ``theta`` defaults to 0.1 * sqrt(2(n-k)).
    """

    n: int
    k: int
    theta: float | None = None
    big_l: float = 10.0

    def __post_init__(self):
        if int(self.n) != self.n or int(self.k) != self.k:
            raise InvalidArgument("n and k must be integers")
        if not 1 <= self.k <= self.n - 1:
            raise InvalidArgument(f"need 1 <= k <= n-1, got n={self.n}, k={self.k}")
        if self.theta is None:
            object.__setattr__(self, "theta", 0.1 * self.radius)
        if not 0.0 < self.theta < self.radius / 4:
            raise InvalidArgument(f"theta={self.theta} outside (0, radius/4)")
        if not self.big_l >= 1.0:
            raise InvalidArgument("big_l must be >= 1")

    @property
    def m(self) -> int:
        return self.n - self.k

    @property
    def radius(self) -> float:
        return math.sqrt(2.0 * (self.n - self.k))

    @property
    def beta(self) -> float:
        return math.sqrt(2.0 * (self.n - self.k)) / 4.0


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Hermite rule for the weight exp(-|y|^2/4).

    ``nodes`` has shape (N, dim); ``degree`` is the 1-D exactness degree.
    """

    nodes: np.ndarray
    weights: np.ndarray
    degree: int
    dim: int
    order: int
    _basis: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.weights.size


@lru_cache(maxsize=32)
def _hermite_1d(order: int):
    x, w = np.polynomial.hermite.hermgauss(order)
    # symmetrize exactly: numpy returns nodes symmetric only to rounding
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return 2.0 * x, 2.0 * w


def build_quadrature(dim: int, order: int) -> QuadratureRule:
    if dim not in (1, 2):
        raise InvalidArgument("dim must be 1 or 2")
    if order < 4:
        raise InvalidArgument("order must be >= 4")
    x, w = _hermite_1d(int(order))
    if dim == 1:
        nodes = x[:, None].copy()
        weights = w.copy()
    else:
        xx, yy = np.meshgrid(x, x, indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        weights = np.outer(w, w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, 2 * int(order) - 1, dim, int(order))


def gaussian_moment(p: int) -> float:
    """Integral of y^p exp(-y^2/4) over R, by the recursion M_p = 2(p-1) M_{p-2}."""
    if p % 2:
        return 0.0
    val = GAUSS_MASS_1D
    for q in range(2, p + 1, 2):
        val *= 2.0 * (q - 1)
    return val


def values_on(f, rule: QuadratureRule) -> np.ndarray:
    """Sample ``f`` at the nodes. Arrays are passed through after a shape check."""
    if callable(f):
        out = np.asarray(f(rule.nodes), dtype=float)
        if out.ndim == 0:
            out = np.full(rule.size, float(out))
    else:
        out = np.asarray(f, dtype=float)
        if out.ndim == 0:
            out = np.full(rule.size, float(out))
    if out.shape != (rule.size,):
        raise InvalidArgument(f"field has shape {out.shape}, expected ({rule.size},)")
    return out


def inner_h(f, g, rule: QuadratureRule) -> float:
    return float(np.dot(rule.weights, values_on(f, rule) * values_on(g, rule)))


def norm_h(f, rule: QuadratureRule) -> float:
    vals = values_on(f, rule)
    return math.sqrt(float(np.dot(rule.weights, vals * vals)))


def _gradient_on_nodes(f, rule: QuadratureRule, step: float) -> np.ndarray:
    if not callable(f):
        raise InvalidArgument("derivative norms need a callable field")
    grads = np.empty((rule.size, rule.dim))
    for i in range(rule.dim):
        e = np.zeros(rule.dim)
        e[i] = step
        fp1 = values_on(f, _shifted(rule, e))
        fm1 = values_on(f, _shifted(rule, -e))
        fp2 = values_on(f, _shifted(rule, 2 * e))
        fm2 = values_on(f, _shifted(rule, -2 * e))
        grads[:, i] = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * step)
    return grads


def _shifted(rule: QuadratureRule, offset) -> QuadratureRule:
    return QuadratureRule(rule.nodes + offset, rule.weights, rule.degree, rule.dim, rule.order)


def norm_grad_h(f, rule: QuadratureRule, step: float = 1e-3) -> float:
    g = _gradient_on_nodes(f, rule, step)
    return math.sqrt(float(np.dot(rule.weights, np.sum(g * g, axis=1))))


def norm_d(f, rule: QuadratureRule, step: float = 1e-3) -> float:
    """H^1-type norm: sqrt(|f|^2 + |Df|^2) in the Gaussian space."""
    return math.hypot(norm_h(f, rule), norm_grad_h(f, rule, step))


# ---------------------------------------------------------------- OU operator

def _d1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    d = np.empty_like(f)
    d[2:-2] = (8.0 * (f[3:-1] - f[1:-3]) - (f[4:] - f[:-4])) / (12.0 * h)
    d[1] = (f[2] - f[0]) / (2.0 * h)
    d[-2] = (f[-1] - f[-3]) / (2.0 * h)
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    d[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return np.moveaxis(d, 0, axis)


def _d2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    d = np.empty_like(f)
    h2 = h * h
    d[2:-2] = (-(f[4:] + f[:-4]) + 16.0 * (f[3:-1] + f[1:-3]) - 30.0 * f[2:-2]) / (12.0 * h2)
    d[1] = (f[2] - 2.0 * f[1] + f[0]) / h2
    d[-2] = (f[-1] - 2.0 * f[-2] + f[-3]) / h2
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
    d[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    return np.moveaxis(d, 0, axis)


def ou_apply(f, axes) -> np.ndarray:
    """Apply L = Laplacian - y.grad/2 + 1 to samples on a uniform tensor grid.

    ``axes`` is a sequence of 1-D uniform coordinate arrays, one per dimension
    of ``f`` (a single array is accepted for 1-D data).
    """
    f = np.asarray(f, dtype=float)
    if isinstance(axes, np.ndarray) and axes.ndim == 1:
        axes = [axes]
    axes = [np.asarray(a, dtype=float) for a in axes]
    if f.ndim not in (1, 2) or len(axes) != f.ndim:
        raise InvalidArgument("need one coordinate axis per field dimension (1-D or 2-D)")
    out = f.copy()
    for ax, y in enumerate(axes):
        if y.size != f.shape[ax]:
            raise InvalidArgument("axis length does not match field shape")
        if y.size < 5:
            raise InvalidArgument("ou_apply needs at least 5 samples per axis")
        steps = np.diff(y)
        h = float(steps.mean())
        if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
            raise InvalidArgument("axes must be uniform and increasing")
        shape = [1] * f.ndim
        shape[ax] = y.size
        yb = y.reshape(shape)
        out = out + _d2(f, h, ax) - 0.5 * yb * _d1(f, h, ax)
    return out


# ---------------------------------------------------------------- modes

def neutral_index_pairs(k: int):
    return [(i, j) for i in range(k) for j in range(i, k)]


def neutral_basis(i: int, j: int, y: np.ndarray) -> np.ndarray:
    """psi_ii = y_i^2 - 2 and psi_ij = 2 y_i y_j (i != j)."""
    if i == j:
        return y[:, i] ** 2 - 2.0
    return 2.0 * y[:, i] * y[:, j]


def _basis(rule: QuadratureRule, k: int):
    key = ("basis", k)
    if key not in rule._basis:
        y = rule.nodes
        neutral = {p: neutral_basis(*p, y) for p in neutral_index_pairs(k)}
        nn = {p: float(np.dot(rule.weights, b * b)) for p, b in neutral.items()}
        pos = [np.ones(rule.size)] + [y[:, i].copy() for i in range(k)]
        pn = [float(np.dot(rule.weights, b * b)) for b in pos]
        rule._basis[key] = (neutral, nn, pos, pn)
    return rule._basis[key]


def _check_dim(params: CylinderParams, rule: QuadratureRule):
    if params.k != rule.dim:
        raise InvalidArgument(f"quadrature dim {rule.dim} does not match k={params.k}")


@dataclass(frozen=True)
class SpectralCoeffMatrix:
    a: np.ndarray
    pos: np.ndarray
    tau: float | None = None


def project_modes(v_c, params: CylinderParams, rule: QuadratureRule, tau: float | None = None):
    """Neutral coefficients a_ij and positive-mode coefficients of v_c - sqrt(2(n-k))."""
    _check_dim(params, rule)
    k = params.k
    vals = values_on(v_c, rule)
    w = vals - params.radius
    neutral, nn, pos_basis, pn = _basis(rule, k)
    a = np.zeros((k, k))
    for (i, j), psi in neutral.items():
        a[i, j] = a[j, i] = np.dot(rule.weights, psi * w) / nn[(i, j)]
    pos = np.array([np.dot(rule.weights, b * w) / bn for b, bn in zip(pos_basis, pn)])
    return SpectralCoeffMatrix(a, pos, tau)


def spectral_ratio(v_c, params: CylinderParams, rule: QuadratureRule, floor: float | None = None):
    _check_dim(params, rule)
    vals = values_on(v_c, rule)
    y = rule.nodes
    num = np.array([np.dot(rule.weights, vals * (y[:, j] ** 2 - 2.0)) for j in range(params.k)])
    den = float(np.dot(rule.weights, vals * (np.sum(y * y, axis=1) - 2.0 * params.k)))
    if floor is None:
        floor = 1e-12 * math.sqrt(float(np.dot(rule.weights, vals * vals)))
    if abs(den) < floor:
        raise DegenerateRatio(f"quadratic pairing {den:.3e} below floor {floor:.3e}")
    return num / den


def quadratic_expansion(y: np.ndarray, params: CylinderParams, tau: float) -> np.ndarray:
    """sqrt(2(n-k)) - sqrt(2(n-k)) (|y|^2 - 2k) / (4|tau|) at points y of shape (N, k)."""
    r2 = np.sum(np.atleast_2d(y) ** 2, axis=1)
    return params.radius * (1.0 - (r2 - 2.0 * params.k) / (4.0 * abs(tau)))


def kappa_of(v_c, params: CylinderParams, tau0: float, rule: QuadratureRule) -> float:
    if not tau0 < 0:
        raise InvalidArgument("tau0 must be negative")
    _check_dim(params, rule)
    vals = values_on(v_c, rule)
    diff = vals - quadratic_expansion(rule.nodes, params, tau0)
    return abs(tau0) * math.sqrt(float(np.dot(rule.weights, diff * diff)))


def poincare_ratio(f, rule: QuadratureRule, step: float = 1e-3) -> float:
    """|(1+|y|) f| / (|f| + |Df|), all norms Gaussian."""
    vals = values_on(f, rule)
    r = np.sqrt(np.sum(rule.nodes ** 2, axis=1))
    den = norm_h(vals, rule) + norm_grad_h(f, rule, step)
    if den <= 0.0:
        raise InvalidArgument("poincare_ratio of the zero function")
    return norm_h((1.0 + r) * vals, rule) / den


# ---------------------------------------------------------------- cutoffs

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (si * (1.0 - si)))
    return out


def _bump_primitive(t):
    # integral of the bump on [0, t] for 0 <= t <= 1/2, 64-point Gauss-Legendre
    t = np.asarray(t, dtype=float)
    nodes = 0.5 * t[..., None] * (_GL_X + 1.0)
    return 0.5 * t * np.sum(_GL_W * _bump(nodes), axis=-1)


_BUMP_HALF = float(_bump_primitive(np.array(0.5)))


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, the normalized primitive of
    exp(-1/(s(1-s))) in between. Exactly antisymmetric about t = 1/2."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    lo = (t > 0) & (t <= 0.5)
    hi = (t > 0.5) & (t < 1.0)
    out[lo] = 0.5 * _bump_primitive(t[lo]) / _BUMP_HALF
    out[hi] = 1.0 - 0.5 * _bump_primitive(1.0 - t[hi]) / _BUMP_HALF
    return out


CUTOFF_KINDS = ("cyl", "tip", "zeta")


@dataclass(frozen=True)
class CutoffSpec:
    kind: str
    theta: float

    def __post_init__(self):
        if self.kind not in CUTOFF_KINDS:
            raise InvalidArgument(f"unknown cutoff kind {self.kind!r}")
        if not self.theta > 0:
            raise InvalidArgument("theta must be positive")


def cutoff_eval(spec: CutoffSpec, v):
    """Evaluate a cutoff; scalar in, float out, array in, array out."""
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0):
        raise InvalidArgument("cutoffs are defined for v >= 0")
    th = spec.theta
    if spec.kind == "cyl":
        out = smooth_step((arr - 0.625 * th) / (0.25 * th))
    elif spec.kind == "tip":
        out = 1.0 - smooth_step((arr - th) / th)
    else:
        out = smooth_step((arr - 0.125 * th) / (0.125 * th))
    if np.ndim(v) == 0:
        return float(out)
    return out
