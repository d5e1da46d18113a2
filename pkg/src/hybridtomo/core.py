"""Grid and tomogram value types, marginalization and normalization.

Conventions used everywhere in the package:

* hbar = 1 and all coordinates are dimensionless.
* Angles are stored on ``[0, pi)``; values at ``theta + pi`` follow from the
  reflection rule ``w(X, theta + pi) = w(-X, theta)``.
* Integrals are trapezoid sums on uniform grids.

Array layouts: ``OpticalTomogram1.values[iX, itheta]`` and
``OpticalTomogram2.values[iX1, iX2, itheta1, itheta2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateTomogram,
    GridError,
    GridMismatch,
    InvariantError,
    MarginalAngleDependence,
)

TOL_NORM = 1e-8
TOL_MARG = 1e-8
EPS_GRID_REL = 1e-9
EPS_CLS_REL = 1e-6
EPS_Q = 1e-6

AXIS_KINDS = ("position-X", "angle-theta", "phase-q", "phase-p", "matrix-x")

# normalize() leaves inputs this close to unit integral untouched (idempotence)
_NORM_SKIP = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class AxisGrid:
    """Uniform sample axis ``start + step * arange(count)``."""

    start: float
    step: float
    count: int
    kind: str = "position-X"

    def __post_init__(self):
        if self.kind not in AXIS_KINDS:
            raise GridError(f"unknown axis kind {self.kind!r}")
        if int(self.count) != self.count or self.count < 2:
            raise GridError("axis needs at least two points")
        if not (self.step > 0 and math.isfinite(self.step) and math.isfinite(self.start)):
            raise GridError("axis step must be positive and finite")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "step", float(self.step))
        if self.kind == "angle-theta":
            if abs(self.start) > 1e-12 or abs(self.step * self.count - math.pi) > 1e-12:
                raise GridError("angle axes must sample [0, pi) uniformly")

    @classmethod
    def linspace(cls, lo, hi, count, kind="position-X"):
        return cls(lo, (hi - lo) / (count - 1), count, kind)

    @classmethod
    def angles(cls, count):
        return cls(0.0, math.pi / count, count, "angle-theta")

    @property
    def points(self):
        return self.start + self.step * np.arange(self.count)

    @property
    def stop(self):
        return self.start + self.step * (self.count - 1)

    @property
    def is_symmetric(self):
        return abs(self.start + self.stop) <= 1e-12 * max(1.0, abs(self.start))

    def with_kind(self, kind):
        return replace(self, kind=kind)

    def same_points(self, other):
        return (
            self.count == other.count
            and abs(self.start - other.start) <= 1e-12 * max(1.0, abs(self.start))
            and abs(self.step - other.step) <= 1e-12 * self.step
        )


def default_x_axis(count=128, half_width=8.0):
    return AxisGrid.linspace(-half_width, half_width, count)


def default_theta_axis(count=64):
    return AxisGrid.angles(count)


def trapz(values, axis_grid, axis):
    return np.trapezoid(values, dx=axis_grid.step, axis=axis)


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


class _Value:
    """Shared plumbing for the immutable grid containers."""

    def replace_values(self, values, **changes):
        return replace(self, values=values, **changes)

    def quarantine(self, problems):
        diag = dict(self.diagnostics)
        diag["violations"] = list(problems)
        return replace(self, quarantined=True, diagnostics=diag)

    def validate(self, tol_norm=TOL_NORM):
        problems = self.violations(tol_norm)
        if problems:
            raise InvariantError("; ".join(problems))
        return self


def _tomogram_violations(values, per_angle, tol_norm):
    problems = []
    if not np.all(np.isfinite(values)):
        return ["non-finite values"]
    vmax = float(np.max(values))
    floor = float(np.min(values))
    if floor < -EPS_GRID_REL * max(vmax, 0.0):
        problems.append(f"negative values: min {floor:.3e} below -eps_grid")
    dev = float(np.max(np.abs(per_angle - 1.0)))
    if dev > tol_norm:
        problems.append(f"per-angle normalization off by {dev:.3e} (tol {tol_norm:g})")
    return problems


@dataclass(frozen=True, eq=False)
class OpticalTomogram1(_Value):
    x_axis: AxisGrid
    theta_axis: AxisGrid
    values: np.ndarray
    quarantined: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.x_axis.count, self.theta_axis.count):
            raise GridMismatch(
                f"values shape {vals.shape} does not match axes "
                f"({self.x_axis.count}, {self.theta_axis.count})"
            )
        object.__setattr__(self, "values", vals)

    @property
    def per_angle_integral(self):
        return trapz(self.values, self.x_axis, 0)

    @property
    def floor(self):
        return float(np.min(self.values))

    def violations(self, tol_norm=TOL_NORM):
        return _tomogram_violations(self.values, self.per_angle_integral, tol_norm)

    def at_angles(self, thetas):
        """Values at arbitrary angles on grid X, using the reflection rule.

        Exact for angles that land on the stored grid modulo pi.
        """
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        out = np.empty((self.x_axis.count, thetas.size))
        ext = extend_theta(self.values, x_axis=0, theta_axis=1)
        n2 = ext.shape[1]
        for j, th in enumerate(thetas):
            k = (th % (2 * math.pi)) / self.theta_axis.step
            ik = int(round(k))
            if abs(k - ik) > 1e-9:
                raise GridError(f"angle {th} not on the theta grid")
            out[:, j] = ext[:, ik % n2]
        return out


@dataclass(frozen=True, eq=False)
class OpticalTomogram2(_Value):
    x1_axis: AxisGrid
    x2_axis: AxisGrid
    theta1_axis: AxisGrid
    theta2_axis: AxisGrid
    values: np.ndarray
    quarantined: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = _frozen(self.values)
        shape = (self.x1_axis.count, self.x2_axis.count,
                 self.theta1_axis.count, self.theta2_axis.count)
        if vals.shape != shape:
            raise GridMismatch(f"values shape {vals.shape} does not match axes {shape}")
        object.__setattr__(self, "values", vals)

    @property
    def per_angle_integral(self):
        return trapz(trapz(self.values, self.x1_axis, 0), self.x2_axis, 0)

    @property
    def floor(self):
        return float(np.min(self.values))

    def violations(self, tol_norm=TOL_NORM):
        return _tomogram_violations(self.values, self.per_angle_integral, tol_norm)


@dataclass(frozen=True, eq=False)
class PhaseSpaceDensity(_Value):
    """Phase-space function on ``(q, p)`` or ``(q1, p1, q2, p2)``.

    A reconstruction from a quantum tomogram is a Wigner function and may be
    negative; ``sign_floor`` reports the most negative sample.
    """

    q_axes: tuple
    p_axes: tuple
    values: np.ndarray
    quarantined: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        q_axes, p_axes = tuple(self.q_axes), tuple(self.p_axes)
        if len(q_axes) != len(p_axes) or len(q_axes) not in (1, 2):
            raise GridError("one or two (q, p) axis pairs required")
        vals = _frozen(self.values)
        shape = tuple(n for q, p in zip(q_axes, p_axes) for n in (q.count, p.count))
        if vals.shape != shape:
            raise GridMismatch(f"values shape {vals.shape} does not match axes {shape}")
        object.__setattr__(self, "q_axes", q_axes)
        object.__setattr__(self, "p_axes", p_axes)
        object.__setattr__(self, "values", vals)

    @property
    def particles(self):
        return len(self.q_axes)

    @property
    def q_axis(self):
        return self.q_axes[0]

    @property
    def p_axis(self):
        return self.p_axes[0]

    def _axes_in_order(self):
        return [a for q, p in zip(self.q_axes, self.p_axes) for a in (q, p)]

    @property
    def integral(self):
        out = self.values
        for ax in self._axes_in_order():
            out = trapz(out, ax, 0)
        return float(out)

    @property
    def sign_floor(self):
        return float(np.min(self.values))

    @property
    def classical_admissible(self):
        return self.sign_floor >= -EPS_CLS_REL * float(np.max(self.values))

    def violations(self, tol_norm=TOL_NORM):
        if not np.all(np.isfinite(self.values)):
            return ["non-finite values"]
        dev = abs(self.integral - 1.0)
        if dev > tol_norm:
            return [f"integral off by {dev:.3e} (tol {tol_norm:g})"]
        return []


class WignerFunction(PhaseSpaceDensity):
    """Single-mode quasi-probability ``W(q, p)``; negative values allowed."""

    @property
    def within_quantum_bound(self):
        # |W| <= 1/pi for any physical single-mode state
        return self.sign_floor >= -1.0 / math.pi - 1e-6


@dataclass(frozen=True, eq=False)
class DensityMatrix(_Value):
    """Position-representation density matrix on one or two modes.

    For two modes the matrix index is ``i1 * n2 + i2`` (mode 2 fastest).
    ``eigen_floor`` is the smallest eigenvalue of ``rho * dx`` (the
    discretized operator); admissibility compares it with ``EPS_Q`` times
    the largest eigenvalue.
    """

    x_axes: tuple
    values: np.ndarray
    quarantined: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        axes = tuple(self.x_axes) if isinstance(self.x_axes, (tuple, list)) else (self.x_axes,)
        n = int(np.prod([a.count for a in axes]))
        vals = _frozen(self.values, complex)
        if vals.shape != (n, n):
            raise GridMismatch(f"density matrix shape {vals.shape}, expected {(n, n)}")
        object.__setattr__(self, "x_axes", axes)
        object.__setattr__(self, "values", vals)

    @property
    def x_axis(self):
        return self.x_axes[0]

    @property
    def cell(self):
        return float(np.prod([a.step for a in self.x_axes]))

    @property
    def trace(self):
        return float(np.real(np.trace(self.values)) * self.cell)

    @property
    def eigenvalues(self):
        ev = self.__dict__.get("_eig")
        if ev is None:
            ev = np.linalg.eigvalsh(self.values * self.cell)
            object.__setattr__(self, "_eig", ev)
        return ev

    @property
    def eigen_floor(self):
        return float(self.eigenvalues[0])

    @property
    def quantum_admissible(self):
        ev = self.eigenvalues
        return bool(ev[0] >= -EPS_Q * max(ev[-1], 0.0))

    @property
    def purity(self):
        m = self.values * self.cell
        return float(np.real(np.sum(m * m.T)))

    def violations(self, tol_norm=TOL_NORM):
        problems = []
        herm = float(np.max(np.abs(self.values - self.values.conj().T)))
        if herm > 1e-10:
            problems.append(f"not Hermitian (max deviation {herm:.3e})")
        dev = abs(self.trace - 1.0)
        if dev > tol_norm:
            problems.append(f"trace off by {dev:.3e}")
        return problems


def extend_theta(values, x_axis=0, theta_axis=1):
    """Append the ``[pi, 2 pi)`` half of the angle axis via the reflection rule.

    ``x_axis`` may be an int or a tuple of axes (all of them are mirrored);
    the X grids must be symmetric about zero.
    """
    xs = (x_axis,) if np.isscalar(x_axis) else tuple(x_axis)
    mirrored = np.flip(values, axis=xs)
    return np.concatenate([values, mirrored], axis=theta_axis)


def _normalize_array(values, integral, axes_shape):
    if np.any(~(integral > 0)):
        raise DegenerateTomogram("per-angle integral must be positive")
    if np.all(np.abs(integral - 1.0) <= _NORM_SKIP):
        return values
    return values / integral.reshape(axes_shape)


def normalize(w):
    """Rescale so every per-angle integral (or the full integral) is one."""
    if isinstance(w, OpticalTomogram1):
        integ = w.per_angle_integral
        return w.replace_values(_normalize_array(w.values, integ, (1, -1)))
    if isinstance(w, OpticalTomogram2):
        integ = w.per_angle_integral
        shape = (1, 1) + integ.shape
        return w.replace_values(_normalize_array(w.values, integ, shape))
    if isinstance(w, PhaseSpaceDensity):
        integ = np.array([w.integral])
        return w.replace_values(_normalize_array(w.values, integ, ()))
    if isinstance(w, DensityMatrix):
        integ = np.array([w.trace])
        return w.replace_values(_normalize_array(w.values, integ, ()))
    raise TypeError(f"cannot normalize {type(w).__name__}")


def marginal(w2: OpticalTomogram2, which="first", tol_marg=TOL_MARG) -> OpticalTomogram1:
    """Integrate out the other particle's position.

    The result must not depend on the other particle's angle; a joint
    tomogram that violates this is rejected.
    """
    if which in ("first", 1):
        reduced = trapz(w2.values, w2.x2_axis, 1)  # (X1, th1, th2)
        drop_axis, x_ax, th_ax = 2, w2.x1_axis, w2.theta1_axis
    elif which in ("second", 2):
        reduced = trapz(w2.values, w2.x1_axis, 0)  # (X2, th1, th2)
        reduced = np.moveaxis(reduced, 1, 2)        # (X2, th2, th1)
        drop_axis, x_ax, th_ax = 2, w2.x2_axis, w2.theta2_axis
    else:
        raise ValueError(f"which must be 'first' or 'second', got {which!r}")
    avg = reduced.mean(axis=drop_axis)
    spread = float(np.max(np.abs(reduced - avg[..., None])))
    if spread > tol_marg:
        raise MarginalAngleDependence(
            f"marginal varies with the integrated-out angle by {spread:.3e} (tol {tol_marg:g})"
        )
    out = OpticalTomogram1(x_ax, th_ax, avg, diagnostics={"angle_spread": spread})
    return normalize(out)


def require_same_axes(a: AxisGrid, b: AxisGrid, what="axes"):
    if not a.same_points(b):
        raise GridMismatch(f"{what} differ: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class Wavefunction(_Value):
    """Pure-state samples ``psi(x)`` on a matrix-x grid."""

    x_axis: AxisGrid
    values: np.ndarray
    quarantined: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = _frozen(self.values, complex)
        if vals.shape != (self.x_axis.count,):
            raise GridMismatch(f"wavefunction shape {vals.shape}, expected ({self.x_axis.count},)")
        object.__setattr__(self, "values", vals)

    @property
    def norm(self):
        return float(trapz(np.abs(self.values) ** 2, self.x_axis, 0))

    def density_matrix(self):
        return DensityMatrix((self.x_axis,), np.outer(self.values, self.values.conj()),
                             diagnostics=dict(self.diagnostics))

    def violations(self, tol_norm=TOL_NORM):
        if not np.all(np.isfinite(self.values)):
            return ["non-finite values"]
        dev = abs(self.norm - 1.0)
        return [f"norm off by {dev:.3e}"] if dev > tol_norm else []
