"""TOMO1 container: a plain-text header followed by a raw little-endian payload.

Layout::

    TOMO1
    version: 1
    kind: optical1
    dtype: real64
    byte_order: little-endian
    payload_layout: row-major
    axis: X position-X -8.0 0.12598425196850394 128
    axis: theta angle-theta 0.0 0.04908738521234052 64
    quarantined: false
    metadata: {"diagnostics": {...}, ...}
    <blank line>
    <payload>

Axis lines read ``name kind start step count`` and are listed slowest first.
Floats are written with ``repr`` so the header round-trips exactly; metadata
is one line of JSON with sorted keys, which keeps output byte-deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    TOL_NORM,
    AxisGrid,
    DensityMatrix,
    OpticalTomogram1,
    OpticalTomogram2,
    PhaseSpaceDensity,
    WignerFunction,
    Wavefunction,
)
from .errors import FormatError, InvariantError, ShapeError, UsageError
from .evolution import NORM_DRIFT_LIMIT, Trajectory, snapshot_violations

MAGIC = "TOMO1"
VERSION = 1
KINDS = ("optical1", "optical2", "phase-space-1", "phase-space-2",
         "density-matrix", "wavefunction", "trajectory")
DTYPES = {"real64": np.dtype("<f8"), "complex128": np.dtype("<c16")}
HEADER_LIMIT = 1 << 22


@dataclass(frozen=True)
class AxisSpec:
    name: str
    kind: str
    start: float
    step: float
    count: int

    @classmethod
    def of(cls, name, axis: AxisGrid):
        return cls(name, axis.kind, axis.start, axis.step, axis.count)

    def grid(self):
        return AxisGrid(self.start, self.step, self.count, self.kind)

    def line(self):
        return f"axis: {self.name} {self.kind} {self.start!r} {self.step!r} {self.count}"


@dataclass(frozen=True)
class ContainerHeader:
    kind: str
    axes: tuple
    dtype: str = "real64"
    quarantined: bool = False
    metadata: dict = field(default_factory=dict)
    magic: str = MAGIC
    version: int = VERSION
    payload_layout: str = "row-major"
    byte_order: str = "little-endian"

    @property
    def shape(self):
        return tuple(a.count for a in self.axes)

    @property
    def payload_bytes(self):
        return int(np.prod(self.shape, dtype=np.int64)) * DTYPES[self.dtype].itemsize

    def to_text(self):
        lines = [self.magic, f"version: {self.version}", f"kind: {self.kind}",
                 f"dtype: {self.dtype}", f"byte_order: {self.byte_order}",
                 f"payload_layout: {self.payload_layout}"]
        lines += [a.line() for a in self.axes]
        lines.append(f"quarantined: {'true' if self.quarantined else 'false'}")
        lines.append("metadata: " + json.dumps(_jsonable(self.metadata), sort_keys=True,
                                               separators=(",", ":")))
        return "\n".join(lines) + "\n\n"

    @classmethod
    def from_text(cls, text):
        lines = text.split("\n")
        if not lines or lines[0] != MAGIC:
            raise FormatError(f"bad magic {lines[0][:16]!r}, expected {MAGIC!r}")
        fields, axes = {}, []
        for ln in lines[1:]:
            if not ln:
                continue
            key, sep, val = ln.partition(": ")
            if not sep:
                raise FormatError(f"malformed header line {ln[:60]!r}")
            if key == "axis":
                parts = val.split()
                if len(parts) != 5:
                    raise FormatError(f"axis line needs 5 fields: {val!r}")
                try:
                    axes.append(AxisSpec(parts[0], parts[1], float(parts[2]), float(parts[3]),
                                         int(parts[4])))
                except ValueError as exc:
                    raise FormatError(f"bad axis line {val!r}: {exc}") from None
            elif key in fields:
                raise FormatError(f"duplicate header key {key!r}")
            else:
                fields[key] = val
        missing = {"version", "kind", "dtype", "byte_order", "payload_layout", "metadata"} - set(fields)
        if missing:
            raise FormatError(f"header lacks {sorted(missing)}")
        if fields["version"] != str(VERSION):
            raise FormatError(f"unsupported version {fields['version']!r}")
        if fields["kind"] not in KINDS:
            raise FormatError(f"unknown kind {fields['kind']!r}")
        if fields["dtype"] not in DTYPES:
            raise FormatError(f"unknown dtype {fields['dtype']!r}")
        if fields["byte_order"] != "little-endian" or fields["payload_layout"] != "row-major":
            raise FormatError("only little-endian row-major payloads are supported")
        if not axes or any(a.count < 1 for a in axes):
            raise FormatError("header needs at least one axis with a positive count")
        try:
            meta = json.loads(fields["metadata"])
        except json.JSONDecodeError as exc:
            raise FormatError(f"metadata is not valid JSON: {exc}") from None
        q = fields.get("quarantined", "false")
        if q not in ("true", "false"):
            raise FormatError(f"quarantined must be true or false, got {q!r}")
        return cls(fields["kind"], tuple(axes), fields["dtype"], q == "true", meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)  # "nan", "inf": JSON has no literal for these
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


# ---------------------------------------------------------------------------
# object <-> (header, array)

def _layout(obj):
    """``(kind, axis specs, dtype, array, extra metadata)`` for a value object."""
    if isinstance(obj, OpticalTomogram1):
        return "optical1", [AxisSpec.of("X", obj.x_axis), AxisSpec.of("theta", obj.theta_axis)], \
            "real64", obj.values, {}
    if isinstance(obj, OpticalTomogram2):
        axes = [AxisSpec.of("X1", obj.x1_axis), AxisSpec.of("X2", obj.x2_axis),
                AxisSpec.of("theta1", obj.theta1_axis), AxisSpec.of("theta2", obj.theta2_axis)]
        return "optical2", axes, "real64", obj.values, {}
    if isinstance(obj, PhaseSpaceDensity):
        n = obj.particles
        names = ["q", "p"] if n == 1 else ["q1", "p1", "q2", "p2"]
        axes = [AxisSpec.of(nm, ax) for nm, ax in zip(names, obj._axes_in_order())]
        cls = "wigner" if isinstance(obj, WignerFunction) else "density"
        return f"phase-space-{n}", axes, "real64", obj.values, {"class": cls}
    if isinstance(obj, DensityMatrix):
        if len(obj.x_axes) == 1:
            names = ["x", "x'"]
        else:
            names = ["x1", "x2", "x1'", "x2'"]
        grids = list(obj.x_axes) * 2
        axes = [AxisSpec.of(nm, ax) for nm, ax in zip(names, grids)]
        return "density-matrix", axes, "complex128", obj.values.reshape([a.count for a in axes]), {}
    if isinstance(obj, Wavefunction):
        return "wavefunction", [AxisSpec.of("x", obj.x_axis)], "complex128", obj.values, {}
    if isinstance(obj, Trajectory):
        if not obj.snapshots:
            raise UsageError("cannot store an empty trajectory")
        inner_kind, inner_axes, dtype, _, extra = _layout(obj.snapshots[0])
        times = [float(t) for t in obj.times]
        step = times[1] - times[0] if len(times) > 1 else 1.0
        t_axis = AxisSpec("t", "time", times[0], step, len(times))
        stack = np.stack([s.values for s in obj.snapshots])
        extra = dict(extra, item=inner_kind, times=times, drift=list(obj.drift), config=obj.config,
                     snapshot_diagnostics=[s.diagnostics for s in obj.snapshots],
                     snapshot_quarantined=[s.quarantined for s in obj.snapshots])
        return "trajectory", [t_axis] + inner_axes, dtype, stack, extra
    raise UsageError(f"cannot store objects of type {type(obj).__name__}")


def _grids(axes):
    try:
        return [a.grid() for a in axes]
    except Exception as exc:  # GridError and friends
        raise FormatError(f"invalid axis in header: {exc}") from None


def _build(kind, axes, data, meta, quarantined):
    diag = meta.get("diagnostics", {})
    common = {"quarantined": quarantined, "diagnostics": diag}
    if kind == "optical1":
        g = _grids(axes)
        return OpticalTomogram1(g[0], g[1], data, **common)
    if kind == "optical2":
        g = _grids(axes)
        return OpticalTomogram2(*g, data, **common)
    if kind in ("phase-space-1", "phase-space-2"):
        g = _grids(axes)
        cls = WignerFunction if meta.get("class") == "wigner" else PhaseSpaceDensity
        return cls(tuple(g[0::2]), tuple(g[1::2]), data, **common)
    if kind == "density-matrix":
        g = _grids(axes)
        half = len(g) // 2
        n = int(np.prod([a.count for a in g[:half]]))
        return DensityMatrix(tuple(g[:half]), data.reshape(n, n), **common)
    if kind == "wavefunction":
        return Wavefunction(_grids(axes)[0], data, **common)
    raise FormatError(f"unknown kind {kind!r}")  # pragma: no cover


_AXIS_COUNT = {"optical1": 2, "optical2": 4, "phase-space-1": 2, "phase-space-2": 4,
               "wavefunction": 1}
_DTYPE_OF = {"density-matrix": "complex128", "wavefunction": "complex128"}


def _check_header_shape(kind, header_axes, dtype):
    expected_dtype = _DTYPE_OF.get(kind, "real64")
    if dtype != expected_dtype:
        raise FormatError(f"{kind} payload must be {expected_dtype}, header says {dtype}")
    if kind == "density-matrix":
        if len(header_axes) not in (2, 4):
            raise FormatError("density-matrix needs 2 or 4 axes")
    elif len(header_axes) != _AXIS_COUNT[kind]:
        raise FormatError(f"{kind} needs {_AXIS_COUNT[kind]} axes, header lists {len(header_axes)}")


def default_tolerance(obj):
    return NORM_DRIFT_LIMIT if isinstance(obj, Trajectory) else TOL_NORM


def _violations(obj, tol_norm):
    if isinstance(obj, Trajectory):
        out = []
        for t, s in zip(obj.times, obj.snapshots):
            if not s.quarantined:
                out += [f"t={t:.6g}: {p}" for p in snapshot_violations(s, tol_norm)]
        return out
    return obj.violations(tol_norm)


def write_container(obj, path, metadata=None, tol_norm=None):
    """Write ``obj`` to ``path``.

    Objects that fail their invariants are refused unless already flagged as
    quarantined (for example signed "entangled" tomograms).
    """
    kind, axes, dtype, values, extra = _layout(obj)
    tol_norm = default_tolerance(obj) if tol_norm is None else tol_norm
    quarantined = bool(getattr(obj, "quarantined", False))
    if not quarantined or isinstance(obj, Trajectory):
        problems = _violations(obj, tol_norm)
        if problems:
            raise InvariantError("refusing to write invalid object: " + "; ".join(problems))
    meta = dict(metadata or {})
    meta.update(extra)
    if not isinstance(obj, Trajectory):
        meta["diagnostics"] = obj.diagnostics
    header = ContainerHeader(kind, tuple(axes), dtype, quarantined, meta)
    payload = np.ascontiguousarray(values, dtype=DTYPES[dtype]).tobytes(order="C")
    Path(path).write_bytes(header.to_text().encode("utf-8") + payload)
    return header


def _split_file(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC.encode() + b"\n"):
        raise FormatError(f"{path}: bad magic, expected {MAGIC!r}")
    end = raw.find(b"\n\n", 0, HEADER_LIMIT)
    if end < 0:
        raise FormatError(f"{path}: header is not terminated by a blank line")
    try:
        text = raw[:end + 1].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: header is not valid UTF-8") from None
    return ContainerHeader.from_text(text), raw[end + 2:]


def read_header(path) -> ContainerHeader:
    return _split_file(path)[0]


def read_container(path, tol_norm=None, strict=False):
    """Load a container.

    Payload length is checked first (ShapeError).  An object that fails its
    invariants comes back quarantined with the violations and its sign floor
    in ``diagnostics``; with ``strict=True`` it raises InvariantError instead.
    """
    header, payload = _split_file(path)
    if len(payload) != header.payload_bytes:
        raise ShapeError(f"{path}: payload has {len(payload)} bytes, expected "
                         f"{header.payload_bytes} for shape {header.shape} {header.dtype}")
    data = np.frombuffer(payload, dtype=DTYPES[header.dtype]).reshape(header.shape)
    meta = header.metadata
    if header.kind == "trajectory":
        item = meta.get("item")
        if item not in KINDS or item == "trajectory":
            raise FormatError(f"trajectory item kind {item!r} is invalid")
        _check_header_shape(item, header.axes[1:], header.dtype)
        snap_diag = meta.get("snapshot_diagnostics") or [{}] * header.shape[0]
        flags = meta.get("snapshot_quarantined") or [header.quarantined] * header.shape[0]
        snaps = tuple(_build(item, header.axes[1:], data[i], {**meta, "diagnostics": snap_diag[i]},
                             bool(flags[i])) for i in range(header.shape[0]))
        times = tuple(meta.get("times", [header.axes[0].start + i * header.axes[0].step
                                         for i in range(header.shape[0])]))
        obj = Trajectory(times, snaps, tuple(meta.get("drift", [])), meta.get("config", {}))
    else:
        _check_header_shape(header.kind, header.axes, header.dtype)
        obj = _build(header.kind, header.axes, data, meta, header.quarantined)
    tol_norm = default_tolerance(obj) if tol_norm is None else tol_norm
    problems = _violations(obj, tol_norm)
    if problems:
        if strict:
            raise InvariantError(f"{path}: " + "; ".join(problems))
        if isinstance(obj, Trajectory):
            snaps = tuple(s if s.quarantined or not snapshot_violations(s, tol_norm)
                          else s.quarantine(snapshot_violations(s, tol_norm)) for s in obj.snapshots)
            obj = Trajectory(obj.times, snaps, obj.drift, obj.config)
        else:
            obj = obj.quarantine(problems)
            diag = dict(obj.diagnostics)
            diag["sign_floor"] = float(np.min(np.real(obj.values)))
            obj = obj.replace_values(obj.values, diagnostics=diag)
    return obj
