"""Two-particle hybrid tomograms: products, convex mixtures, the signed
"entangled" combination, position covariance and the two-outcome toy bound."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EPS_GRID_REL,
    OpticalTomogram1,
    OpticalTomogram2,
    extend_theta,
    normalize,
    require_same_axes,
    trapz,
)
from .errors import DomainError, GridMismatch, InterpolationWarning, UsageError, WeightError

WEIGHT_TOL = 1e-12


def _check_weights(branches, what):
    if not branches:
        raise WeightError(f"{what} list is empty")
    p = np.array([b[0] for b in branches], dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise WeightError(f"{what} weights must lie in [0, 1]")
    if abs(p.sum() - 1.0) > WEIGHT_TOL:
        raise WeightError(f"{what} weights sum to {p.sum():.15g}, not 1")


@dataclass(frozen=True)
class HybridSpec:
    """Branches ``(P_k, first, second)`` plus the optional subtracted list.

    ``mu_ent`` weighs the subtracted list: the joint tomogram is
    ``(1 + mu) sum P_k a_k b_k - mu sum P'_k a'_k b'_k``.
    """

    branches: tuple
    mu_ent: float = 0.0
    negative_branches: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))
        object.__setattr__(self, "negative_branches", tuple(tuple(b) for b in self.negative_branches))
        _check_weights(self.branches, "branch")
        if self.negative_branches:
            _check_weights(self.negative_branches, "negative-branch")
        if not (self.mu_ent >= 0 and math.isfinite(self.mu_ent)):
            raise UsageError("mu_ent must be a finite nonnegative number")

    @classmethod
    def two_branch(cls, p, a, b, a_bar, b_bar):
        """``P a b + (1 - P) a_bar b_bar``."""
        return cls(((p, a, b), (1.0 - p, a_bar, b_bar)))


def _axes_of(a: OpticalTomogram1, b: OpticalTomogram1):
    return a.x_axis, b.x_axis, a.theta_axis, b.theta_axis


def _check_compatible(a: OpticalTomogram1, b: OpticalTomogram1):
    if not isinstance(a, OpticalTomogram1) or not isinstance(b, OpticalTomogram1):
        raise UsageError("product factors must be single-particle tomograms")
    require_same_axes(a.x_axis, b.x_axis, "X grids")
    require_same_axes(a.theta_axis, b.theta_axis, "theta grids")


def _outer(a, b):
    return a.values[:, None, :, None] * b.values[None, :, None, :]


def _sum_branches(branches):
    ref = branches[0][1]
    total = None
    for p, a, b in branches:
        _check_compatible(a, b)
        if not (a.x_axis.same_points(ref.x_axis) and a.theta_axis.same_points(ref.theta_axis)):
            raise GridMismatch("all branches must share one grid")
        term = p * _outer(a, b)
        total = term if total is None else total + term
    return total


def compose_product(a: OpticalTomogram1, b: OpticalTomogram1) -> OpticalTomogram2:
    """``w(X1, X2, th1, th2) = a(X1, th1) b(X2, th2)``."""
    _check_compatible(a, b)
    w = OpticalTomogram2(*_axes_of(a, b), _outer(a, b), diagnostics={"composition": "product"})
    return normalize(w)


def compose_mixture(spec: HybridSpec) -> OpticalTomogram2:
    """Convex sum of uncorrelated products."""
    if spec.mu_ent != 0 or spec.negative_branches:
        raise UsageError("compose_mixture takes mu_ent = 0 and no negative branches")
    _, a, b = spec.branches[0]
    vals = _sum_branches(spec.branches)
    w = OpticalTomogram2(*_axes_of(a, b), vals,
                         diagnostics={"composition": "mixture", "weights": [x[0] for x in spec.branches]})
    return normalize(w)


@dataclass(frozen=True)
class NegativityReport:
    minima: np.ndarray          # grid minimum per (theta1, theta2)
    floor: float
    threshold: float            # -eps_grid relative to max(w)
    negative: bool
    worst_angles: tuple = ()

    def to_dict(self):
        return {"floor": self.floor, "threshold": self.threshold, "negative": self.negative,
                "worst_angles": list(self.worst_angles)}


def negativity_report(w: OpticalTomogram2, eps_rel=EPS_GRID_REL) -> NegativityReport:
    minima = w.values.min(axis=(0, 1))
    threshold = -eps_rel * float(w.values.max())
    i, j = np.unravel_index(np.argmin(minima), minima.shape)
    worst = (float(w.theta1_axis.points[i]), float(w.theta2_axis.points[j]))
    floor = float(minima[i, j])
    return NegativityReport(minima, floor, threshold, floor < threshold, worst)


def compose_entangled(spec: HybridSpec, eps_rel=EPS_GRID_REL):
    """Signed combination with weight ``mu_ent``; returns ``(w, report)``.

    Negativity is reported per angle pair, never rejected.  The result is
    flagged as quarantined when the floor drops below ``-eps_grid``.
    """
    if spec.mu_ent == 0 or not spec.negative_branches:
        w = compose_mixture(HybridSpec(spec.branches))
    else:
        _, a, b = spec.branches[0]
        pos = _sum_branches(spec.branches)
        neg = _sum_branches(spec.negative_branches)
        _, a2, _ = spec.negative_branches[0]
        if not a2.x_axis.same_points(a.x_axis) or not a2.theta_axis.same_points(a.theta_axis):
            raise GridMismatch("positive and negative branches must share one grid")
        mu = float(spec.mu_ent)
        vals = (1.0 + mu) * pos - mu * neg
        w = normalize(OpticalTomogram2(*_axes_of(a, b), vals,
                                       diagnostics={"composition": "entangled", "mu_ent": mu}))
    report = negativity_report(w, eps_rel)
    if report.negative:
        w = w.quarantine([f"negative values: min {report.floor:.3e}"])
    diag = dict(w.diagnostics)
    diag["negativity"] = report.to_dict()
    return w.replace_values(w.values, diagnostics=diag), report


def _angle_slice(values, x_axis, theta_axis, theta, axis_x, axis_t):
    """Slice ``values`` at ``theta`` along ``axis_t`` (reflection rule, linear
    interpolation between grid angles).  Returns ``(slice, on_grid)``."""
    ext = extend_theta(values, x_axis=axis_x, theta_axis=axis_t)
    n2 = ext.shape[axis_t]
    k = (theta % (2 * math.pi)) / theta_axis.step
    i0 = int(math.floor(k + 1e-9))
    frac = k - i0
    if abs(frac) <= 1e-9:
        return np.take(ext, i0 % n2, axis=axis_t), True
    lo = np.take(ext, i0 % n2, axis=axis_t)
    hi = np.take(ext, (i0 + 1) % n2, axis=axis_t)
    return (1.0 - frac) * lo + frac * hi, False


def joint_slice(w: OpticalTomogram2, theta1, theta2):
    """``w(X1, X2)`` at fixed angles plus an on-grid flag."""
    s, on1 = _angle_slice(w.values, w.x1_axis, w.theta1_axis, theta1, axis_x=0, axis_t=2)
    s, on2 = _angle_slice(s, w.x2_axis, w.theta2_axis, theta2, axis_x=1, axis_t=2)
    return s, on1 and on2


def covariance(w: OpticalTomogram2, theta1, theta2) -> float:
    """``<X1 X2> - <X1><X2>`` at fixed angles by 2-D trapezoid quadrature."""
    s, on_grid = joint_slice(w, theta1, theta2)
    if not on_grid:
        warnings.warn(f"angles ({theta1}, {theta2}) are off the grid; slice interpolated",
                      InterpolationWarning, stacklevel=2)
    x1 = w.x1_axis.points[:, None]
    x2 = w.x2_axis.points[None, :]

    def mean(g):
        return float(trapz(trapz(g * s, w.x1_axis, 0), w.x2_axis, 0))

    norm = mean(np.ones_like(s))
    m1, m2 = mean(x1 + 0 * x2) / norm, mean(x2 + 0 * x1) / norm
    return mean((x1 - m1) * (x2 - m2)) / norm


def _mean(t: OpticalTomogram1, theta):
    vals = t.at_angles([theta])[:, 0]
    return float(trapz(t.x_axis.points * vals, t.x_axis, 0))


def branch_covariance(branches, theta1, theta2) -> float:
    """Covariance of a convex mixture from its branch means alone.

    ``sum P_k m1_k m2_k - (sum P_k m1_k)(sum P_k m2_k)``; each branch is a
    product and contributes no covariance of its own.
    """
    p = np.array([b[0] for b in branches], dtype=float)
    m1 = np.array([_mean(b[1], theta1) for b in branches])
    m2 = np.array([_mean(b[2], theta2) for b in branches])
    return float(np.sum(p * m1 * m2) - np.sum(p * m1) * np.sum(p * m2))


def two_branch_covariance(p, a, b, a_bar, b_bar, theta1, theta2) -> float:
    """Two-branch form ``P(1-P)(m1 - m1')(m2 - m2')``."""
    m1, m1b = _mean(a, theta1), _mean(a_bar, theta1)
    m2, m2b = _mean(b, theta2), _mean(b_bar, theta2)
    return p * (1.0 - p) * (m1 - m1b) * (m2 - m2b)


@dataclass(frozen=True)
class ToyDistribution:
    """Two-outcome toy ``z = (1 + mu) x - mu y``; works on scalars or arrays."""

    x: object
    y: object
    mu_ent: object
    z: object = field(init=False)
    lower: object = field(init=False)
    upper: object = field(init=False)
    in_range: object = field(init=False)
    within_bounds: object = field(init=False)

    def __post_init__(self):
        x, y, mu = (np.asarray(v, dtype=float) for v in (self.x, self.y, self.mu_ent))
        z = (1.0 + mu) * x - mu * y
        complement = (1.0 + mu) * (1.0 - x) - mu * (1.0 - y)
        if np.any(np.abs(complement - (1.0 - z)) > 1e-12 * (1.0 + mu)):
            raise UsageError("toy complement outcome inconsistent")  # pragma: no cover
        lower = y * mu / (1.0 + mu)
        upper = (1.0 + y * mu) / (mu + 1.0)
        # z - 0 = (1 + mu)(x - lower): a slack on z maps to slack / (1 + mu) on x
        tol = 1e-12
        in_range = (z >= -tol) & (z <= 1.0 + tol)
        within = (x >= lower - tol / (1.0 + mu)) & (x <= upper + tol / (1.0 + mu))
        for name, val in (("z", z), ("lower", lower), ("upper", upper),
                          ("in_range", in_range), ("within_bounds", within)):
            object.__setattr__(self, name, val[()] if val.ndim == 0 else val)

    def to_dict(self):
        def conv(v):
            return v.tolist() if isinstance(v, np.ndarray) else (v.item() if hasattr(v, "item") else v)
        return {k: conv(getattr(self, k)) for k in
                ("x", "y", "mu_ent", "z", "in_range", "lower", "upper")}


def toy_entanglement_bounds(x, y, mu_ent) -> ToyDistribution:
    """z, the in-range flag and the admissible x interval for given y and mu."""
    xa, ya, ma = (np.asarray(v, dtype=float) for v in (x, y, mu_ent))
    for name, v in (("x", xa), ("y", ya)):
        if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise DomainError(f"{name} must lie in [0, 1]")
    if np.any(~np.isfinite(ma)) or np.any(ma < 0):
        raise DomainError("mu_ent must be nonnegative")
    return ToyDistribution(x, y, mu_ent)
