"""Analytic state fixtures: phase-space densities, wavefunctions, density
matrices and their exact optical tomograms."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import eval_laguerre

from .core import (
    AxisGrid,
    DensityMatrix,
    OpticalTomogram1,
    PhaseSpaceDensity,
    WignerFunction,
    default_theta_axis,
    default_x_axis,
    normalize,
)
from .errors import UnsupportedKind, UsageError
from .transforms import default_phase_axes, hermite_functions

KINDS = (
    "coherent",
    "fock",
    "thermal",
    "squeezed-gaussian",
    "classical-gaussian",
    "classical-uniform-disk",
)
QUANTUM_KINDS = ("coherent", "fock", "thermal", "squeezed-gaussian")
MAX_FOCK = 4


@dataclass(frozen=True)
class StateSpec:
    kind: str
    q0: float = 0.0
    p0: float = 0.0
    n: int = 0
    nbar: float = 0.0
    sigma_q: float = 1.0
    sigma_p: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKind(f"unknown state kind {self.kind!r}")
        if self.kind == "fock" and (int(self.n) != self.n or not 0 <= self.n <= MAX_FOCK):
            raise UsageError(f"fock index must be an integer in [0, {MAX_FOCK}]")
        if self.kind == "thermal" and not self.nbar > 0:
            raise UsageError("thermal mean occupancy must be positive")
        if self.kind.endswith("gaussian") and not (self.sigma_q > 0 and self.sigma_p > 0):
            raise UsageError("Gaussian widths must be positive")
        if self.kind == "classical-uniform-disk" and not self.radius > 0:
            raise UsageError("disk radius must be positive")

    @classmethod
    def coherent(cls, q0=0.0, p0=0.0):
        return cls("coherent", q0=q0, p0=p0)

    @classmethod
    def fock(cls, n):
        return cls("fock", n=n)

    @classmethod
    def thermal(cls, nbar):
        return cls("thermal", nbar=nbar)

    @classmethod
    def squeezed(cls, sigma_q, sigma_p, q0=0.0, p0=0.0):
        return cls("squeezed-gaussian", q0=q0, p0=p0, sigma_q=sigma_q, sigma_p=sigma_p)

    @classmethod
    def classical_gaussian(cls, sigma_q, sigma_p, q0=0.0, p0=0.0):
        return cls("classical-gaussian", q0=q0, p0=p0, sigma_q=sigma_q, sigma_p=sigma_p)

    @classmethod
    def disk(cls, radius):
        return cls("classical-uniform-disk", radius=radius)

    @property
    def is_quantum(self):
        return self.kind in QUANTUM_KINDS

    def gaussian_moments(self):
        """(q0, p0, var_q, var_p) for the Gaussian kinds, else None."""
        if self.kind == "coherent":
            return self.q0, self.p0, 0.5, 0.5
        if self.kind == "thermal":
            v = self.nbar + 0.5
            return 0.0, 0.0, v, v
        if self.kind in ("squeezed-gaussian", "classical-gaussian"):
            return self.q0, self.p0, self.sigma_q**2, self.sigma_p**2
        return None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _gauss(x, mean, var):
    return np.exp(-((x - mean) ** 2) / (2 * var)) / np.sqrt(2 * math.pi * var)


def _disk_coverage(q, p, radius, sub=16):
    """Fraction of each grid cell covered by the disk (cell-centred nodes)."""
    dq, dp = q[1] - q[0], p[1] - p[0]
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    cov = np.zeros((q.size, p.size))
    for a in offs:
        qq = (q + a * dq)[:, None]
        for b in offs:
            pp = (p + b * dp)[None, :]
            cov += (qq * qq + pp * pp) <= radius * radius
    return cov / (sub * sub)


def make_phase_space(spec: StateSpec, q_axis: AxisGrid = None, p_axis: AxisGrid = None) -> PhaseSpaceDensity:
    """Phase-space density; the Wigner function for quantum kinds."""
    if q_axis is None:
        q_axis, p_axis = default_phase_axes(default_x_axis())
    q = q_axis.points[:, None]
    p = p_axis.points[None, :]
    mom = spec.gaussian_moments()
    if mom is not None:
        q0, p0, vq, vp = mom
        vals = _gauss(q, q0, vq) * _gauss(p, p0, vp)
    elif spec.kind == "fock":
        r2 = q * q + p * p
        vals = ((-1) ** spec.n / math.pi) * np.exp(-r2) * eval_laguerre(spec.n, 2 * r2)
    elif spec.kind == "classical-uniform-disk":
        vals = _disk_coverage(q_axis.points, p_axis.points, spec.radius) / (math.pi * spec.radius**2)
    else:  # pragma: no cover - guarded by StateSpec
        raise UnsupportedKind(spec.kind)
    cls = WignerFunction if spec.is_quantum else PhaseSpaceDensity
    out = normalize(cls((q_axis,), (p_axis,), vals))
    return cls((q_axis,), (p_axis,), out.values, diagnostics={"state": spec.to_dict()})


def tomogram_variance(spec: StateSpec, theta):
    """sigma_X^2(theta) = var_q cos^2 + var_p sin^2 for Gaussian kinds."""
    _, _, vq, vp = spec.gaussian_moments()
    return vq * np.cos(theta) ** 2 + vp * np.sin(theta) ** 2


def tomogram_values(spec: StateSpec, X, theta):
    """Closed-form tomogram at arbitrary (broadcast) ``X`` and ``theta``."""
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    mom = spec.gaussian_moments()
    if mom is not None:
        q0, p0, _, _ = mom
        mean = q0 * np.cos(theta) + p0 * np.sin(theta)
        return _gauss(X, mean, tomogram_variance(spec, theta))
    if spec.kind == "fock":
        phi = hermite_functions(np.ravel(X), spec.n)[:, spec.n].reshape(X.shape)
        return np.broadcast_to(phi * phi, np.broadcast(X, theta).shape).copy()
    if spec.kind == "classical-uniform-disk":
        R = spec.radius
        inside = np.clip(R * R - X * X, 0.0, None)
        vals = 2.0 * np.sqrt(inside) / (math.pi * R * R)
        return np.broadcast_to(vals, np.broadcast(X, theta).shape).copy()
    raise UnsupportedKind(spec.kind)  # pragma: no cover


def make_tomogram(spec: StateSpec, x_axis: AxisGrid = None, theta_axis: AxisGrid = None) -> OpticalTomogram1:
    x_axis = x_axis or default_x_axis()
    theta_axis = theta_axis or default_theta_axis()
    vals = tomogram_values(spec, x_axis.points[:, None], theta_axis.points[None, :])
    w = normalize(OpticalTomogram1(x_axis, theta_axis, vals))
    return OpticalTomogram1(x_axis, theta_axis, w.values, diagnostics={"state": spec.to_dict()})


def make_wavefunction(spec: StateSpec, x_axis: AxisGrid = None):
    """Normalized wavefunction samples for pure kinds."""
    x_axis = x_axis or default_x_axis()
    x = x_axis.points
    if spec.kind == "coherent":
        psi = math.pi ** -0.25 * np.exp(-0.5 * (x - spec.q0) ** 2 + 1j * spec.p0 * x)
    elif spec.kind == "fock":
        psi = hermite_functions(x, spec.n)[:, spec.n].astype(complex)
    elif spec.kind == "squeezed-gaussian" and abs(spec.sigma_q * spec.sigma_p - 0.5) < 1e-12:
        var = spec.sigma_q**2
        psi = (2 * math.pi * var) ** -0.25 * np.exp(-((x - spec.q0) ** 2) / (4 * var) + 1j * spec.p0 * x)
    else:
        raise UnsupportedKind(f"{spec.kind} has no wavefunction")
    norm = np.trapezoid(np.abs(psi) ** 2, dx=x_axis.step)
    return psi / math.sqrt(norm)


def make_density_matrix(spec: StateSpec, x_axis: AxisGrid = None) -> DensityMatrix:
    """rho(x, x') from the closed form; Gaussian kinds need not be physical."""
    x_axis = (x_axis or default_x_axis()).with_kind("matrix-x")
    x = x_axis.points
    mom = spec.gaussian_moments()
    if spec.kind in ("coherent", "fock"):
        psi = make_wavefunction(spec, x_axis)
        rho = np.outer(psi, psi.conj())
    elif mom is not None:
        q0, p0, vq, vp = mom
        m = 0.5 * (x[:, None] + x[None, :])
        d = x[:, None] - x[None, :]
        rho = _gauss(m, q0, vq) * np.exp(1j * p0 * d - 0.5 * vp * d * d)
    else:
        raise UnsupportedKind(f"{spec.kind} has no density matrix")
    out = normalize(DensityMatrix((x_axis,), rho))
    return DensityMatrix((x_axis,), out.values, diagnostics={"state": spec.to_dict()})
