"""Time evolution of optical tomograms.

The generator of the tomographic equation on the (X, theta) circle is built
from two commuting operators that represent phase-space multiplication,

    Q h = X cos(th) h + sin(th) dX^-1 d_theta h,    P h = sin(th) dX h,

so a classical particle evolves with ``sum_j j c_j P Q^(j-1)`` and a quantum
one with ``2 Im U(Q + i P / 2)``, expanded into ``P^m Q^a`` terms.  The free
part is ``cos^2(th) d_theta - (1/2) sin(2 th) dX X``.  For a quadratic
potential both expansions agree and the motion is a linear symplectic map,
handled exactly by :func:`evolve_quadratic_exact`.
"""

from __future__ import annotations

import inspect
import math
import re
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.ndimage import map_coordinates

from .core import (
    AxisGrid,
    DensityMatrix,
    OpticalTomogram1,
    OpticalTomogram2,
    PhaseSpaceDensity,
    marginal,
    trapz,
)
from .errors import (
    CFLViolation,
    DegreeError,
    GridAliasing,
    GridError,
    StabilityError,
    UsageError,
)
from .transforms import RampFilterSpec, radon_forward, tomogram_from_density_matrix

MAX_DEGREE = 4
SCHEMES = ("characteristics-quadratic", "spectral-rk4", "oracle-pipeline")
NORM_DRIFT_LIMIT = 1e-4
ALIAS_BAND = 0.8       # fraction of the momentum Nyquist treated as the alias band
ALIAS_TOL = 1e-8
RANGE_MARGIN = 3


class StabilityWarning(RuntimeWarning):
    """Time step above the recorded empirical guard."""


# ---------------------------------------------------------------------------
# potentials

_TERM = re.compile(
    r"""\s*(?P<sign>[+-])?\s*
        (?:(?P<coef>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(?P<star>\*)?\s*)?
        (?:(?P<q>q)\s*(?:\^\s*(?P<pow>\d+))?)?\s*""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class PolynomialPotential:
    """``U(q) = sum_j coeffs[j] q^j`` with degree at most four."""

    coeffs: tuple = (0.0,)

    def __post_init__(self):
        c = [float(x) for x in self.coeffs] or [0.0]
        if not all(math.isfinite(x) for x in c):
            raise UsageError("potential coefficients must be finite")
        while len(c) > 1 and c[-1] == 0.0:
            c.pop()
        if len(c) - 1 > MAX_DEGREE:
            raise DegreeError(f"potential degree {len(c) - 1} exceeds {MAX_DEGREE}")
        object.__setattr__(self, "coeffs", tuple(c))

    @classmethod
    def harmonic(cls, omega=1.0):
        return cls((0.0, 0.0, 0.5 * omega * omega))

    @classmethod
    def parse(cls, text: str):
        """Parse ``c*q^k`` terms joined by ``+``/``-`` (e.g. ``"0.5*q^2 - q"``)."""
        s = text.strip()
        if not s:
            raise UsageError("empty potential")
        coeffs = [0.0] * (MAX_DEGREE + 1)
        pos, first = 0, True
        while pos < len(s):
            m = _TERM.match(s, pos)
            if m is None or m.end() == pos or (not m.group("coef") and not m.group("q")):
                raise UsageError(f"cannot parse potential {text!r} at position {pos}")
            if not first and not m.group("sign"):
                raise UsageError(f"terms must be joined by + or - in {text!r}")
            if m.group("star") and not m.group("q"):
                raise UsageError(f"dangling '*' in {text!r}")
            if m.group("coef") and m.group("q") and not m.group("star"):
                raise UsageError(f"write coefficients as c*q^k in {text!r}")
            c = float(m.group("coef")) if m.group("coef") else 1.0
            if m.group("sign") == "-":
                c = -c
            k = 0
            if m.group("q"):
                k = int(m.group("pow")) if m.group("pow") else 1
            if k > MAX_DEGREE:
                raise DegreeError(f"term q^{k} exceeds the degree cap {MAX_DEGREE}")
            coeffs[k] += c
            pos, first = m.end(), False
        return cls(tuple(coeffs))

    @property
    def degree(self):
        return len(self.coeffs) - 1

    @property
    def scale(self):
        """Largest non-constant coefficient magnitude."""
        return max((abs(c) for c in self.coeffs[1:]), default=0.0)

    def __call__(self, q):
        return np.polynomial.polynomial.polyval(q, self.coeffs)

    def derivative(self, order=1):
        c = np.polynomial.polynomial.polyder(self.coeffs, order) if self.degree >= order else [0.0]
        return PolynomialPotential(tuple(c))

    def confining_ok(self):
        d = self.degree
        return d % 2 == 1 or d == 0 or self.coeffs[-1] >= 0

    def classical_terms(self):
        """``{(a, m): coef}`` for the generator ``sum coef P^m Q^a``."""
        out = {}
        for j, c in enumerate(self.coeffs):
            if j >= 1 and c != 0.0:
                out[(j - 1, 1)] = out.get((j - 1, 1), 0.0) + j * c
        return out

    def quantum_terms(self):
        """Expansion of ``2 Im U(Q + i P / 2)`` with commuting Q, P."""
        out = {}
        for j, c in enumerate(self.coeffs):
            if c == 0.0:
                continue
            for m in range(1, j + 1, 2):
                coef = 2.0 * c * comb(j, m) * 0.5**m * (-1) ** ((m - 1) // 2)
                out[(j - m, m)] = out.get((j - m, m), 0.0) + coef
        return out

    def __str__(self):
        parts = []
        for k, c in enumerate(self.coeffs):
            if c == 0.0 and self.degree > 0:
                continue
            parts.append(f"{c!r}*q^{k}" if k else repr(c))
        return " + ".join(parts).replace("+ -", "- ")

    def to_dict(self):
        return {"coeffs": list(self.coeffs)}


def as_potential(u):
    if isinstance(u, PolynomialPotential):
        return u
    if u is None:
        return PolynomialPotential()
    if isinstance(u, str):
        return PolynomialPotential.parse(u)
    return PolynomialPotential(tuple(u))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    t_final: float
    scheme: str = "spectral-rk4"
    which_quantum: str = "first"
    filter: RampFilterSpec = field(default_factory=RampFilterSpec)
    save_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise UsageError("dt must be positive")
        if not (self.t_final >= 0 and math.isfinite(self.t_final)):
            raise UsageError("t_final must be nonnegative")
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown scheme {self.scheme!r}")
        if self.which_quantum not in ("first", "second"):
            raise UsageError("which_quantum must be 'first' or 'second'")
        if int(self.save_every) != self.save_every or self.save_every < 1:
            raise UsageError("save_every must be a positive integer")

    @property
    def steps(self):
        return max(1, int(math.ceil(self.t_final / self.dt - 1e-9))) if self.t_final > 0 else 0

    def to_dict(self):
        return {"dt": self.dt, "t_final": self.t_final, "scheme": self.scheme,
                "which_quantum": self.which_quantum, "filter": self.filter.to_dict(),
                "save_every": self.save_every}


def dt_max(x_axis: AxisGrid, theta_axis: AxisGrid, *potentials):
    """Empirical step guard ``0.25 min(dth, dX / max|X|) / (1 + coefficient scale)``."""
    xmax = max(abs(x_axis.start), abs(x_axis.stop))
    scale = max((as_potential(u).scale for u in potentials), default=0.0)
    return 0.25 * min(theta_axis.step, x_axis.step / xmax) / (1.0 + scale)


# ---------------------------------------------------------------------------
# exact evolution for quadratic potentials

def classical_flow(U: PolynomialPotential, t):
    """Linear flow ``z(t) = M z(0) + b`` of ``H = p^2/2 + U`` with degree <= 2."""
    U = as_potential(U)
    if U.degree > 2:
        raise DegreeError(f"exact propagation needs degree <= 2, got {U.degree}")
    c = list(U.coeffs) + [0.0] * (3 - len(U.coeffs))
    c1, c2 = c[1], c[2]
    k2 = 2.0 * c2
    if k2 > 0:
        w = math.sqrt(k2)
        M = np.array([[math.cos(w * t), math.sin(w * t) / w], [-w * math.sin(w * t), math.cos(w * t)]])
    elif k2 < 0:
        w = math.sqrt(-k2)
        M = np.array([[math.cosh(w * t), math.sinh(w * t) / w], [w * math.sinh(w * t), math.cosh(w * t)]])
    else:
        M = np.array([[1.0, t], [0.0, 1.0]])
    if k2 != 0:
        zstar = np.array([-c1 / k2, 0.0])
        b = zstar - M @ zstar
    else:
        b = np.array([-0.5 * c1 * t * t, -c1 * t])
    return M, b


def _pullback(U, t, theta):
    """Map an output angle to (theta', lambda, shift) with
    ``w_t(X, th) = w0((X - shift) / lambda, th') / lambda``."""
    M, b = classical_flow(U, t)
    c, s = np.cos(theta), np.sin(theta)
    v0 = M[0, 0] * c + M[1, 0] * s
    v1 = M[0, 1] * c + M[1, 1] * s
    return np.arctan2(v1, v0), np.hypot(v0, v1), c * b[0] + s * b[1]


def _dirichlet(u, n):
    """Periodic trigonometric interpolation weights at fractional indices ``u``."""
    d = np.asarray(u, dtype=float)[:, None] - np.arange(n)[None, :]
    out = np.ones_like(d)
    for m in range(1, (n + 1) // 2):
        out += 2.0 * np.cos(2.0 * math.pi * m * d / n)
    if n % 2 == 0:
        out += np.cos(math.pi * d)
    return out / n


def _flow_axis(values, x_axis, theta_axis, U, t):
    """Exact quadratic flow along axes 0 (X) and 1 (theta) of ``values``."""
    nx, nt = values.shape[:2]
    rest = values.shape[2:]
    v = values.reshape(nx, nt, -1)
    th = theta_axis.points
    th_src, lam, shift = _pullback(U, t, th)
    ext = np.concatenate([v, v[::-1]], axis=1)                          # (X, 2N, R)
    T = _dirichlet((th_src % (2 * math.pi)) / theta_axis.step, 2 * nt)  # (N, 2N)
    rotated = np.einsum("tj,xjr->xtr", T, ext, optimize=True)
    out = np.empty_like(rotated)
    X = x_axis.points
    for i in range(nt):
        if lam[i] == 1.0 and shift[i] == 0.0:
            out[:, i] = rotated[:, i]
            continue
        u = ((X - shift[i]) / lam[i] - x_axis.start) / x_axis.step
        E = _dirichlet(u, nx)
        E[(u < -0.5) | (u > nx - 0.5)] = 0.0
        out[:, i] = (E @ rotated[:, i]) / lam[i]
    return out.reshape((nx, nt) + rest)


def evolve_quadratic_exact(w0, U, t, U2=None):
    """Exact evolution for potentials of degree <= 2 (classical = quantum).

    ``w0`` may be an :class:`OpticalTomogram1`, an :class:`OpticalTomogram2`
    (``U`` acts on the first particle, ``U2`` on the second, default ``U``)
    or a callable ``w0(X, theta)`` / ``w0(X1, X2, th1, th2)``; a callable
    yields a callable, grids yield grids (trigonometric interpolation in
    theta, band-limited interpolation in X).
    """
    U = as_potential(U)
    U2 = U if U2 is None else as_potential(U2)
    for u in (U, U2):
        if u.degree > 2:
            raise DegreeError(f"exact propagation needs degree <= 2, got {u.degree}")
    if isinstance(w0, OpticalTomogram1):
        vals = _flow_axis(w0.values, w0.x_axis, w0.theta_axis, U, t)
        diag = dict(w0.diagnostics, evolved={"t": t, "U": U.to_dict()})
        return OpticalTomogram1(w0.x_axis, w0.theta_axis, vals, diagnostics=diag)
    if isinstance(w0, OpticalTomogram2):
        v = _flow_axis(np.moveaxis(w0.values, 2, 1), w0.x1_axis, w0.theta1_axis, U, t)
        v = np.moveaxis(v, 1, 2)                                   # (X1, X2, th1, th2)
        v = np.moveaxis(v, (1, 3), (0, 1))                         # (X2, th2, X1, th1)
        v = _flow_axis(v, w0.x2_axis, w0.theta2_axis, U2, t)
        v = np.moveaxis(v, (0, 1), (1, 3))
        diag = dict(w0.diagnostics, evolved={"t": t, "U1": U.to_dict(), "U2": U2.to_dict()})
        return OpticalTomogram2(w0.x1_axis, w0.x2_axis, w0.theta1_axis, w0.theta2_axis, v,
                                diagnostics=diag)
    if callable(w0):
        def one(X, theta):
            th, lam, shift = _pullback(U, t, np.asarray(theta, dtype=float))
            return w0((np.asarray(X) - shift) / lam, th) / lam

        def two(X1, X2, th1, th2):
            a, l1, s1 = _pullback(U, t, np.asarray(th1, dtype=float))
            b, l2, s2 = _pullback(U2, t, np.asarray(th2, dtype=float))
            return w0((np.asarray(X1) - s1) / l1, (np.asarray(X2) - s2) / l2, a, b) / (l1 * l2)

        try:
            nargs = len(inspect.signature(w0).parameters)
        except (TypeError, ValueError):
            nargs = 2
        return two if nargs == 4 else one
    raise UsageError(f"cannot evolve {type(w0).__name__}")


# ---------------------------------------------------------------------------
# spectral RK4 stepper

def _spectral_matrices(n, dx):
    """Periodic spectral d/dX powers and the antiderivative vanishing at the left end."""
    ik = 1j * 2.0 * math.pi * np.fft.rfftfreq(n, dx)
    ik_odd = ik.copy()
    if n % 2 == 0:
        ik_odd[-1] = 0.0          # odd derivatives drop the unpaired Nyquist mode
    F = np.fft.rfft(np.eye(n), axis=0)
    D = {m: np.fft.irfft((ik_odd**m if m % 2 else ik**m)[:, None] * F, n, axis=0) for m in (1, 2, 3)}
    inv = np.zeros_like(ik)
    nz = ik_odd != 0
    inv[nz] = 1.0 / ik_odd[nz]
    A = np.fft.irfft(inv[:, None] * F, n, axis=0)
    return D, A - A[0:1, :]


def _apply_x(M, arr, axis):
    n = arr.shape[axis]
    before = int(np.prod(arr.shape[:axis], dtype=int))
    out = M @ arr.reshape(before, n, -1)
    return out.reshape(arr.shape)


def _angular_filter(theta_axis: AxisGrid, parity, n_max):
    """Matrix removing angular modes ``|n| > n_max`` from a coefficient
    function that is pi-periodic (``parity=+1``) or pi-antiperiodic (-1)."""
    N = theta_axis.count
    th = theta_axis.points
    eye = np.eye(N)
    if parity > 0:
        n = 2 * np.fft.fftfreq(N, 1.0 / N)
        spec = np.fft.fft(eye, axis=0)
        spec[np.abs(n) > n_max] = 0.0
        keep = np.real(np.fft.ifft(spec, axis=0))
    else:
        twist = np.exp(-1j * th)[:, None]
        n = 2 * np.fft.fftfreq(N, 1.0 / N) + 1
        spec = np.fft.fft(twist * eye, axis=0)
        spec[np.abs(n) > n_max] = 0.0
        keep = np.real(np.fft.ifft(spec, axis=0) / twist)
    return eye - keep


def _range_projector(x_axis: AxisGrid, theta_axis: AxisGrid, radius, margin):
    """Low-rank form of the projection onto the range of the Radon transform.

    The 2 pi-extended tomogram may only carry angular modes
    ``|n| <= |k| radius + margin``.  Only the few lowest X-Fourier modes are
    ever restricted; for each of them (an even cosine or odd sine in X) the
    coefficient is a pi-(anti)periodic function of theta and gets its own
    angular filter.  Returns ``(U, removers)`` with orthonormal rows ``U``.
    """
    nx, N = x_axis.count, theta_axis.count
    X = x_axis.points
    dk = 2.0 * math.pi / (nx * x_axis.step)
    rows, removers = [], []
    for ell in range(nx // 2):
        k = ell * dk
        n_max = k * radius + margin
        if n_max >= N:
            break
        if ell == 0:
            rows.append(np.ones(nx) / math.sqrt(nx))
            removers.append(_angular_filter(theta_axis, +1, n_max))
            continue
        c, s_ = np.cos(k * X), np.sin(k * X)
        rows.append(c / np.linalg.norm(c))
        removers.append(_angular_filter(theta_axis, +1, n_max))
        rows.append(s_ / np.linalg.norm(s_))
        removers.append(_angular_filter(theta_axis, -1, n_max))
    if not rows:
        return None, []
    return np.array(rows), removers


class _Particle:
    """Operators of one particle acting on adjacent axes ``(x_dim, x_dim + 1)``.

    A discrete tomogram can carry angular modes faster than any function
    supported in the disk ``|z| <= radius`` allows (``|n| > |k| radius``).
    Products of Q amplify those modes strongly, so chains of two or more Q
    are projected back onto the admissible range after every factor.
    """

    def __init__(self, x_axis: AxisGrid, theta_axis: AxisGrid, x_dim, ndim,
                 radius=None, margin=RANGE_MARGIN):
        if not x_axis.is_symmetric:
            raise GridError("the stepper needs an X grid symmetric about zero")
        self.x_dim, self.t_dim = x_dim, x_dim + 1
        self.n_theta = theta_axis.count
        self.dth = theta_axis.step
        self.D, self.A = _spectral_matrices(x_axis.count, x_axis.step)
        self.radius = float(radius if radius is not None else x_axis.stop)
        self.U, self.removers = _range_projector(x_axis, theta_axis, self.radius, margin)
        shape_x = [1] * ndim
        shape_x[self.x_dim] = -1
        shape_t = [1] * ndim
        shape_t[self.t_dim] = -1
        th = theta_axis.points
        X = x_axis.points.reshape(shape_x)
        self.X = X
        self.Xcos = X * np.cos(th).reshape(shape_t)
        self.sin = np.sin(th).reshape(shape_t)
        self.cos2 = np.cos(th).reshape(shape_t) ** 2
        self.half_sin2 = (0.5 * np.sin(2.0 * th)).reshape(shape_t)

    def _split(self, h):
        """View ``h`` as ``(before, nX, N, after)``."""
        b = int(np.prod(h.shape[:self.x_dim], dtype=int))
        return h.reshape(b, h.shape[self.x_dim], self.n_theta, -1)

    def dtheta(self, h):
        """Fourth-order centred difference in theta, ghosts by the reflection rule."""
        g = self._split(h)
        pad = np.concatenate([g[:, ::-1, -2:], g, g[:, ::-1, :2]], axis=2)
        n = self.n_theta
        out = 8.0 * (pad[:, :, 3:n + 3] - pad[:, :, 1:n + 1]) - (pad[:, :, 4:n + 4] - pad[:, :, 0:n])
        out *= 1.0 / (12.0 * self.dth)
        return out.reshape(h.shape)

    def dx(self, h, m=1):
        return _apply_x(self.D[m], h, self.x_dim)

    def project(self, h):
        """Remove angular modes outside the range of the Radon transform."""
        if self.U is None:
            return h
        g = self._split(h)
        b, nx, N, a = g.shape
        coef = (self.U @ g.reshape(b, nx, N * a)).reshape(b, -1, N, a)
        for ell, R in enumerate(self.removers):
            coef[:, ell] = R @ coef[:, ell]
        removed = self.U.T @ coef.reshape(b, -1, N * a)
        return (g.reshape(b, nx, N * a) - removed).reshape(h.shape)

    def Q(self, h, h_theta=None):
        if h_theta is None:
            h_theta = self.dtheta(h)
        out = _apply_x(self.A, h_theta, self.x_dim)
        out *= self.sin
        out += self.Xcos * h
        return out

    def kinetic(self, h, h_theta):
        return self.cos2 * h_theta - self.half_sin2 * self.dx(self.X * h)

    def potential(self, h, terms, h_theta):
        if not terms:
            return 0.0
        amax = max(a for a, _ in terms)
        powers = [h]
        for a in range(1, amax + 1):
            q = self.Q(powers[-1], h_theta if a == 1 else None)
            powers.append(self.project(q) if amax >= 2 else q)
        out = 0.0
        for (a, m), c in sorted(terms.items()):
            if c != 0.0:
                out = out + (c * self.sin**m) * self.dx(powers[a], m)
        return out

    def generator(self, h, terms):
        h_theta = self.dtheta(h)
        return self.kinetic(h, h_theta) + self.potential(h, terms, h_theta)


@dataclass(frozen=True)
class Trajectory:
    times: tuple
    snapshots: tuple
    drift: tuple              # per saved time: max per-angle normalization error
    config: dict = field(default_factory=dict)

    def final(self):
        return self.snapshots[-1]

    @property
    def quarantined(self):
        return any(s.quarantined for s in self.snapshots)


def _rk4(w, rhs, dt):
    k1 = rhs(w)
    k2 = rhs(w + 0.5 * dt * k1)
    k3 = rhs(w + 0.5 * dt * k2)
    k4 = rhs(w + dt * k3)
    return w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guard(U, dt, guard):
    if dt > guard:
        warnings.warn(f"dt = {dt:g} exceeds the empirical guard {guard:.3g}", StabilityWarning,
                      stacklevel=3)
    for u in U:
        if not u.confining_ok():
            raise UsageError(f"potential {u} has a negative even leading coefficient")


def snapshot_violations(snap, tol_norm=NORM_DRIFT_LIMIT):
    """Invariants an evolved snapshot must meet: finite values and per-angle
    normalization within ``tol_norm``.  The stepper does not preserve
    positivity exactly, so the sign floor is recorded, not enforced."""
    if not np.all(np.isfinite(snap.values)):
        return ["non-finite values"]
    dev = float(np.max(np.abs(snap.per_angle_integral - 1.0)))
    return [f"per-angle normalization off by {dev:.3e} (tol {tol_norm:g})"] if dev > tol_norm else []


def _run(w0_values, norm_fn, rhs, cfg: EvolutionConfig, make):
    steps = cfg.steps
    dt = cfg.t_final / steps if steps else cfg.dt
    w = np.array(w0_values, dtype=float)
    err0 = float(np.max(np.abs(norm_fn(w) - 1.0)))
    times, snaps, drift = [0.0], [make(w, 0.0)], [err0]
    prev = err0
    for s in range(1, steps + 1):
        w = _rk4(w, rhs, dt)
        if not np.all(np.isfinite(w)):
            raise StabilityError(f"non-finite values at step {s} (t = {s * dt:.4g})")
        err = float(np.max(np.abs(norm_fn(w) - 1.0)))
        if err > NORM_DRIFT_LIMIT and err > prev:
            raise StabilityError(
                f"normalization error {err:.3e} exceeds {NORM_DRIFT_LIMIT:g} at step {s} (t = {s * dt:.4g})")
        prev = err
        if s % cfg.save_every == 0 or s == steps:
            snap = make(w, s * dt)
            problems = snapshot_violations(snap)
            if problems:
                snap = snap.quarantine(problems)   # flagged, values left as computed
            times.append(s * dt)
            snaps.append(snap)
            drift.append(err)
    return times, snaps, drift


def evolve_hybrid(w0: OpticalTomogram2, U_quantum, U_classical, cfg: EvolutionConfig) -> Trajectory:
    """RK4 integration of the hybrid tomographic equation on the 4-D grid.

    One particle (``cfg.which_quantum``) carries the quantum potential
    terms, the other the classical ones.  The per-angle normalization error
    is recorded for every saved step; it is never corrected.
    """
    if not isinstance(w0, OpticalTomogram2):
        raise UsageError("evolve_hybrid takes a two-particle tomogram")
    if cfg.scheme != "spectral-rk4":
        raise UsageError(f"evolve_hybrid runs the spectral-rk4 scheme, not {cfg.scheme!r}")
    Uq, Uc = as_potential(U_quantum), as_potential(U_classical)
    # internal layout (X1, th1, X2, th2) keeps each particle's axes adjacent
    p1 = _Particle(w0.x1_axis, w0.theta1_axis, 0, 4)
    p2 = _Particle(w0.x2_axis, w0.theta2_axis, 2, 4)
    if cfg.which_quantum == "first":
        t1, t2 = Uq.quantum_terms(), Uc.classical_terms()
        U1, U2 = Uq, Uc
    else:
        t1, t2 = Uc.classical_terms(), Uq.quantum_terms()
        U1, U2 = Uc, Uq
    guard = min(dt_max(w0.x1_axis, w0.theta1_axis, Uq, Uc), dt_max(w0.x2_axis, w0.theta2_axis, Uq, Uc))
    _guard((Uq, Uc), cfg.dt, guard)

    def rhs(h):
        return p1.generator(h, t1) + p2.generator(h, t2)

    def norm(h):
        return trapz(trapz(h, w0.x1_axis, 0), w0.x2_axis, 1)

    echo = {"config": cfg.to_dict(), "U_quantum": str(Uq), "U_classical": str(Uc),
            "U1": U1.to_dict(), "U2": U2.to_dict(), "dt_guard": guard}

    def make(v, t):
        return OpticalTomogram2(w0.x1_axis, w0.x2_axis, w0.theta1_axis, w0.theta2_axis,
                                np.transpose(v, (0, 2, 1, 3)),
                                diagnostics={"t": t, "sign_floor": float(v.min())})

    start = np.ascontiguousarray(np.transpose(w0.values, (0, 2, 1, 3)))
    times, snaps, drift = _run(start, norm, rhs, cfg, make)
    return Trajectory(tuple(times), tuple(snaps), tuple(drift), echo)


def evolve_single(w0: OpticalTomogram1, U, cfg: EvolutionConfig, quantum=True) -> Trajectory:
    """Single-particle version of the stepper (same operators on a 2-D grid)."""
    U = as_potential(U)
    p = _Particle(w0.x_axis, w0.theta_axis, 0, 2)
    terms = U.quantum_terms() if quantum else U.classical_terms()
    guard = dt_max(w0.x_axis, w0.theta_axis, U)
    _guard((U,), cfg.dt, guard)

    def make(v, t):
        return OpticalTomogram1(w0.x_axis, w0.theta_axis, v,
                                diagnostics={"t": t, "sign_floor": float(v.min())})

    times, snaps, drift = _run(w0.values, lambda h: trapz(h, w0.x_axis, 0),
                               lambda h: p.generator(h, terms), cfg, make)
    echo = {"config": cfg.to_dict(), "U": U.to_dict(), "quantum": quantum, "dt_guard": guard}
    return Trajectory(tuple(times), tuple(snaps), tuple(drift), echo)


# ---------------------------------------------------------------------------
# oracles

def evolve_liouville_oracle(f0: PhaseSpaceDensity, U, t, dt) -> PhaseSpaceDensity:
    """Semi-Lagrangian Liouville flow: trace every node back to time zero
    with velocity Verlet and interpolate ``f0`` there once (cubic splines)."""
    if f0.particles != 1:
        raise UsageError("the Liouville oracle takes a single-particle density")
    if not dt > 0:
        raise UsageError("dt must be positive")
    U = as_potential(U)
    force = U.derivative()
    qa, pa = f0.q_axis, f0.p_axis
    curv = np.abs(U.derivative(2)(qa.points)) if U.degree >= 2 else np.zeros(1)
    omega = math.sqrt(float(np.max(curv)))
    if dt * omega > 1.0:
        raise CFLViolation(f"dt * omega_max = {dt * omega:.3g} > 1 on the q range")
    n = max(1, int(math.ceil(abs(t) / dt - 1e-9)))
    h = -t / n
    Q, P = np.meshgrid(qa.points, pa.points, indexing="ij")
    q, p = Q.copy(), P.copy()
    for _ in range(n):
        p = p - 0.5 * h * force(q)
        q = q + h * p
        p = p - 0.5 * h * force(q)
    coords = np.stack([(q - qa.start) / qa.step, (p - pa.start) / pa.step])
    vals = map_coordinates(np.asarray(f0.values), coords, order=3, mode="constant", cval=0.0)
    out = type(f0)(f0.q_axes, f0.p_axes, vals)
    mass_error = abs(out.integral / f0.integral - 1.0)
    return type(f0)(f0.q_axes, f0.p_axes, vals,
                    diagnostics={"t": t, "dt": abs(h), "mass_error": mass_error})


def _alias_fraction(psi_k_density, k, knyq):
    band = np.abs(k) >= ALIAS_BAND * knyq
    total = float(psi_k_density.sum())
    return float(psi_k_density[band].sum()) / total if total > 0 else 0.0


def evolve_vonneumann_oracle(state, U, t, dt, x_axis: AxisGrid = None) -> DensityMatrix:
    """Strang split-step propagation of a wavefunction or density matrix.

    ``state`` is a :class:`DensityMatrix` or a complex array on ``x_axis``.
    Raises :class:`GridAliasing` when more than 1e-8 of the norm sits in the
    top momentum band at the start or end.
    """
    U = as_potential(U)
    if not dt > 0:
        raise UsageError("dt must be positive")
    if isinstance(state, DensityMatrix):
        if len(state.x_axes) != 1:
            raise UsageError("the von Neumann oracle takes a single-mode state")
        x_axis = state.x_axis
        rho = np.array(state.values, dtype=complex)
        psi = None
    else:
        if x_axis is None:
            raise UsageError("x_axis is required for wavefunction input")
        psi = np.array(state, dtype=complex)
        rho = None
    x = x_axis.points
    n, dx = x_axis.count, x_axis.step
    k = 2.0 * math.pi * np.fft.fftfreq(n, dx)
    knyq = math.pi / dx
    steps = max(1, int(math.ceil(abs(t) / dt - 1e-9)))
    h = t / steps
    half_kin = np.exp(-0.25j * h * k * k)
    pot = np.exp(-1j * h * U(x))

    def check(stage):
        if psi is not None:
            dens = np.abs(np.fft.fft(psi)) ** 2
        else:
            dens = np.real(np.diag(np.fft.fft(np.fft.ifft(rho, axis=1), axis=0)))
        frac = _alias_fraction(np.abs(dens), k, knyq)
        if frac > ALIAS_TOL:
            raise GridAliasing(f"{frac:.2e} of the norm in the top momentum band ({stage})")
        return frac

    def step(v):
        v = np.fft.ifft(half_kin[:, None] * np.fft.fft(v, axis=0), axis=0)
        v = pot[:, None] * v
        return np.fft.ifft(half_kin[:, None] * np.fft.fft(v, axis=0), axis=0)

    check("start")
    if psi is not None:
        norm0 = float(np.sum(np.abs(psi) ** 2) * dx)
        v = psi[:, None]
        for _ in range(steps):
            v = step(v)
        psi = v[:, 0]
        out = np.outer(psi, psi.conj())
    else:
        norm0 = float(np.real(np.trace(rho)) * dx)
        v = rho
        for _ in range(steps):
            v = step(v)                      # U rho
            v = step(v.conj().T).conj().T    # (U (U rho)^dagger)^dagger = U rho U^dagger
        rho = v
        out = rho
    alias = check("end")
    out = 0.5 * (out + out.conj().T)
    trace = float(np.real(np.trace(out)) * dx)
    return DensityMatrix((x_axis.with_kind("matrix-x"),), out,
                         diagnostics={"t": t, "dt": abs(h), "trace_error": abs(trace - norm0),
                                      "alias_fraction": alias})


def evolve_oracle_pipeline(psi0, f0: PhaseSpaceDensity, U_quantum, U_classical, times, dt,
                           x_axis: AxisGrid):
    """Independent oracle states at each requested time.

    Returns ``(quantum_states, classical_densities)``.
    """
    quantum, classical = [], []
    for t in times:
        if t == 0:
            if isinstance(psi0, DensityMatrix):
                quantum.append(psi0)
            else:
                quantum.append(DensityMatrix((x_axis.with_kind("matrix-x"),), np.outer(psi0, np.conj(psi0))))
            classical.append(f0)
            continue
        quantum.append(evolve_vonneumann_oracle(psi0, U_quantum, t, dt, x_axis))
        classical.append(evolve_liouville_oracle(f0, U_classical, t, dt))
    return quantum, classical


@dataclass(frozen=True)
class ConsistencyRow:
    t: float
    linf_quantum: float
    l1_quantum: float
    linf_classical: float
    l1_classical: float
    angle_spread: float = 0.0   # largest dependence of a marginal on the dropped angle

    def to_dict(self):
        return dict(self.__dict__)


def _subgrid_index(fine: AxisGrid, coarse: AxisGrid):
    """Indices of ``coarse`` points inside ``fine`` (nested grids only)."""
    ratio = coarse.step / fine.step
    stride = int(round(ratio))
    offset = (coarse.start - fine.start) / fine.step
    idx = int(round(offset)) + stride * np.arange(coarse.count)
    if (abs(ratio - stride) > 1e-9 or abs(offset - round(offset)) > 1e-9
            or idx[0] < 0 or idx[-1] >= fine.count):
        raise GridError("oracle grid does not contain the trajectory grid")
    return idx


def _deviation(a: OpticalTomogram1, b: OpticalTomogram1):
    b_vals = b.values[np.ix_(_subgrid_index(b.x_axis, a.x_axis), _subgrid_index(b.theta_axis, a.theta_axis))]
    d = np.abs(a.values - b_vals)
    return float(d.max()), float(np.max(trapz(d, a.x_axis, 0)))


def marginal_consistency_report(trajectory: Trajectory, quantum_states, classical_densities,
                                which_quantum="first", oracle_theta_axis=None):
    """One row per saved time: L-infinity and worst-angle L1 deviation of each
    marginal from the tomogram of the matching oracle state.

    Oracle states may live on a finer grid that contains the trajectory grid
    (``oracle_theta_axis`` likewise for the angles).
    """
    if len(quantum_states) != len(trajectory.times) or len(classical_densities) != len(trajectory.times):
        raise UsageError("oracle lists must match the trajectory's saved times")
    qwhich, cwhich = ("first", "second") if which_quantum == "first" else ("second", "first")
    rows = []
    for t, w, rho, f in zip(trajectory.times, trajectory.snapshots, quantum_states, classical_densities):
        mq = marginal(w, qwhich, tol_marg=math.inf)
        mc = marginal(w, cwhich, tol_marg=math.inf)
        spread = max(mq.diagnostics["angle_spread"], mc.diagnostics["angle_spread"])
        wq = tomogram_from_density_matrix(rho, oracle_theta_axis or mq.theta_axis)
        wc = radon_forward(f, mc.x_axis, mc.theta_axis)
        lq, l1q = _deviation(mq, wq)
        lc, l1c = _deviation(mc, wc)
        rows.append(ConsistencyRow(float(t), lq, l1q, lc, l1c, spread))
    return rows
