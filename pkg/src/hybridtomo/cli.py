"""Command-line interface: ``hybridtomo <command> ...``.

Every command reads and writes TOMO1 containers.  The effective
configuration (all flags after defaults) is echoed into the output metadata.
Errors exit with 2 (usage), 3 (format), 4 (invariant) or 5 (numerical
stability) and print a one-line JSON record on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import core
from .core import (
    EPS_CLS_REL,
    EPS_GRID_REL,
    EPS_Q,
    TOL_MARG,
    DensityMatrix,
    OpticalTomogram1,
    OpticalTomogram2,
    PhaseSpaceDensity,
    Wavefunction,
    marginal,
)
from .errors import TomoError, UsageError
from .evolution import (
    NORM_DRIFT_LIMIT,
    SCHEMES,
    EvolutionConfig,
    PolynomialPotential,
    Trajectory,
    evolve_hybrid,
    evolve_oracle_pipeline,
    evolve_quadratic_exact,
    evolve_single,
    marginal_consistency_report,
    snapshot_violations,
)
from .hybrid import HybridSpec, compose_entangled, compose_mixture, compose_product, covariance, \
    joint_slice, toy_entanglement_bounds
from .io import read_container, write_container
from .plot import angle_slices_csv, svg_heatmap, write_csv
from .states import KINDS, StateSpec, make_density_matrix, make_phase_space, make_tomogram, \
    make_wavefunction
from .transforms import (
    RampFilterSpec,
    classify,
    default_phase_axes,
    radon_forward,
    reconstruct_density_matrix,
    reconstruct_density_matrix2,
    reconstruct_phase_space,
    tomogram_from_density_matrix,
)


# ---------------------------------------------------------------------------
# shared option groups

def _grid_options(p):
    g = p.add_argument_group("grid")
    g.add_argument("--x-count", type=int, default=128)
    g.add_argument("--x-half-width", type=float, default=8.0)
    g.add_argument("--theta-count", type=int, default=64)


def _filter_options(p):
    g = p.add_argument_group("ramp filter")
    g.add_argument("--cutoff", type=float, default=0.9, help="fraction of the X-Nyquist band kept")
    g.add_argument("--apodization", choices=("none", "raised-cosine"), default="raised-cosine")
    g.add_argument("--taper", type=float, default=0.5)


def _grids(args):
    return core.default_x_axis(args.x_count, args.x_half_width), core.default_theta_axis(args.theta_count)


def _filter(args):
    return RampFilterSpec(args.cutoff, args.apodization, args.taper)


def _config(args):
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write(obj, args, **extra):
    meta = {"command": args.command_name, "config": _config(args)}
    meta.update(extra)
    write_container(obj, args.out, meta, tol_norm=args.tol_norm if not isinstance(obj, Trajectory) else None)


def _read(path, args):
    # trajectories keep their own (looser) default tolerance
    return read_container(path, tol_norm=None if args.tol_norm == core.TOL_NORM else args.tol_norm)


def _print(obj):
    print(json.dumps(obj, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _require(obj, types, what):
    if not isinstance(obj, types):
        raise UsageError(f"{what} expects {' or '.join(t.__name__ for t in types)}, "
                         f"got {type(obj).__name__}")
    return obj


# ---------------------------------------------------------------------------
# commands

def cmd_state_make(args):
    spec = StateSpec(args.kind, q0=args.q0, p0=args.p0, n=args.n, nbar=args.nbar,
                     sigma_q=args.sigma_q, sigma_p=args.sigma_p, radius=args.radius)
    xa, ta = _grids(args)
    if args.repr == "tomogram":
        obj = make_tomogram(spec, xa, ta)
    elif args.repr == "phase-space":
        obj = make_phase_space(spec, *default_phase_axes(xa))
    elif args.repr == "density-matrix":
        obj = make_density_matrix(spec, xa)
    else:
        mx = xa.with_kind("matrix-x")
        obj = Wavefunction(mx, make_wavefunction(spec, mx), diagnostics={"state": spec.to_dict()})
    _write(obj, args)


def cmd_tomo_forward(args):
    f = _require(_read(args.input, args), (PhaseSpaceDensity,), "tomo forward")
    xa, ta = _grids(args)
    _write(radon_forward(f, xa, ta), args)


def cmd_tomo_invert(args):
    w = _require(_read(args.input, args), (OpticalTomogram1, OpticalTomogram2), "tomo invert")
    _write(reconstruct_phase_space(w, _filter(args)), args)


def cmd_tomo_rho(args):
    w = _require(_read(args.input, args), (OpticalTomogram1, OpticalTomogram2), "tomo rho")
    if isinstance(w, OpticalTomogram1):
        rho = reconstruct_density_matrix(w, filter=_filter(args))
    else:
        rho = reconstruct_density_matrix2(w, filter=_filter(args))
    _write(rho, args)


def cmd_classify(args):
    w = _require(_read(args.input, args), (OpticalTomogram1, OpticalTomogram2), "classify")
    c = classify(w, _filter(args), joint=not args.marginals_only, eps_grid=args.eps_grid,
                 eps_cls=args.eps_cls, eps_q=args.eps_q, tol_marg=args.tol_marg)
    if args.json:
        _print(asdict(c))
    else:
        print(c.label)
        for name, sub in c.subsystems.items():
            print(f"{name}: {sub.label}")


def _branch(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"branch must read P,FIRST,SECOND, got {text!r}")
    try:
        p = float(parts[0])
    except ValueError:
        raise UsageError(f"bad branch weight {parts[0]!r}") from None
    return p, parts[1], parts[2]


def _load_branches(texts, args):
    out = []
    for t in texts or []:
        p, a, b = _branch(t)
        out.append((p, _require(_read(a, args), (OpticalTomogram1,), "branch"),
                    _require(_read(b, args), (OpticalTomogram1,), "branch")))
    return out


def cmd_hybrid_compose(args):
    if args.mode == "product":
        if not (args.first and args.second):
            raise UsageError("product mode needs --first and --second")
        a = _require(_read(args.first, args), (OpticalTomogram1,), "--first")
        b = _require(_read(args.second, args), (OpticalTomogram1,), "--second")
        _write(compose_product(a, b), args)
        return
    branches = _load_branches(args.branch, args)
    if args.mode == "mixture":
        _write(compose_mixture(HybridSpec(branches)), args)
        return
    spec = HybridSpec(branches, args.mu, _load_branches(args.neg_branch, args))
    w, report = compose_entangled(spec, args.eps_grid)
    _write(w, args)
    _print({"negative": report.negative, "floor": report.floor, "threshold": report.threshold,
            "worst_angles": list(report.worst_angles)})


def cmd_covariance(args):
    w = _require(_read(args.input, args), (OpticalTomogram2,), "covariance")
    print(f"covariance={covariance(w, args.theta1, args.theta2):.17g}")


def cmd_toy_bounds(args):
    d = toy_entanglement_bounds(args.x, args.y, args.mu)
    print(f"z={d.z:.12g}, in_range={str(bool(d.in_range)).lower()}, "
          f"bounds=[{d.lower:.12g},{d.upper:.12g}]")


def _potentials(args):
    return PolynomialPotential.parse(args.U1), PolynomialPotential.parse(args.U2)


def cmd_evolve(args):
    U1, U2 = _potentials(args)
    cfg = EvolutionConfig(args.dt, args.t, args.scheme, args.which_quantum, _filter(args),
                          args.save_every)
    if args.scheme == "oracle-pipeline":
        _evolve_oracles(args, cfg, U1, U2)
        return
    w0 = _require(_read(args.input, args), (OpticalTomogram1, OpticalTomogram2), "evolve")
    if args.scheme == "characteristics-quadratic":
        out = evolve_quadratic_exact(w0, U1, args.t, U2)
        diag = dict(out.diagnostics, evolution=cfg.to_dict())
        _write(out.replace_values(out.values, diagnostics=diag), args)
        return
    if isinstance(w0, OpticalTomogram1):
        tr = evolve_single(w0, U1, cfg, quantum=args.which_quantum == "first")
    else:
        Uq, Uc = (U1, U2) if args.which_quantum == "first" else (U2, U1)
        tr = evolve_hybrid(w0, Uq, Uc, cfg)
    _write(tr, args)


def _oracle_inputs(args):
    if not (args.quantum_state and args.classical_state):
        raise UsageError("oracle runs need --quantum-state and --classical-state")
    q = _require(_read(args.quantum_state, args), (Wavefunction, DensityMatrix), "--quantum-state")
    f = _require(_read(args.classical_state, args), (PhaseSpaceDensity,), "--classical-state")
    if isinstance(q, Wavefunction):
        return q.values, q.x_axis, f
    return q, q.x_axis, f


def _evolve_oracles(args, cfg, U1, U2):
    """Oracle states at the saved times, re-tomographed into product tomograms."""
    psi0, x_axis, f0 = _oracle_inputs(args)
    Uq, Uc = (U1, U2) if args.which_quantum == "first" else (U2, U1)
    n = cfg.steps
    times = [i * args.t / n for i in range(0, n + 1, cfg.save_every)] if n else [0.0]
    if n and n % cfg.save_every:
        times.append(args.t)
    xa, ta = _grids(args)
    qs, cs = evolve_oracle_pipeline(psi0, f0, Uq, Uc, times, args.oracle_dt, x_axis)
    snaps = []
    for t, rho, f in zip(times, qs, cs):
        wq = tomogram_from_density_matrix(rho, ta)
        wc = radon_forward(f, xa, ta)
        if not wq.x_axis.same_points(xa):
            raise UsageError("the quantum state's x grid must match --x-count/--x-half-width")
        a, b = (wq, wc) if args.which_quantum == "first" else (wc, wq)
        w = compose_product(a, b)
        snaps.append(w.replace_values(w.values, diagnostics={"t": t}))
    drift = [float(np.max(np.abs(s.per_angle_integral - 1.0))) for s in snaps]
    echo = {"config": cfg.to_dict(), "U_quantum": str(Uq), "U_classical": str(Uc),
            "oracle_dt": args.oracle_dt}
    _write(Trajectory(tuple(times), tuple(snaps), tuple(drift), echo), args)


def cmd_report_marginals(args):
    tr = _require(_read(args.input, args), (Trajectory,), "report marginals")
    cfg = tr.config.get("config", {})
    which = cfg.get("which_quantum", "first")
    Uq = PolynomialPotential.parse(args.U_quantum or tr.config.get("U_quantum", "0"))
    Uc = PolynomialPotential.parse(args.U_classical or tr.config.get("U_classical", "0"))
    psi0, x_axis, f0 = _oracle_inputs(args)
    qs, cs = evolve_oracle_pipeline(psi0, f0, Uq, Uc, tr.times, args.oracle_dt, x_axis)
    ta = tr.snapshots[0].theta1_axis
    oracle_ta = core.default_theta_axis(args.oracle_theta_count or ta.count)
    rows = marginal_consistency_report(tr, qs, cs, which, oracle_theta_axis=oracle_ta)
    cols = ["t", "linf_quantum", "l1_quantum", "linf_classical", "l1_classical", "angle_spread"]
    data = [[getattr(r, c) for r in rows] for c in cols]
    write_csv(args.out or sys.stdout, cols, data)


def _marginal_problems(w, tol_marg):
    problems = []
    for which in ("first", "second"):
        try:
            marginal(w, which, tol_marg)
        except TomoError as exc:
            problems.append(f"marginal({which}): {exc}")
    return problems


def _check_trajectory(tr, args):
    """Evolution invariants per snapshot; sign floors and marginal angle
    spreads are reported but do not fail the check."""
    tol = max(NORM_DRIFT_LIMIT, args.tol_norm)
    problems, floors, spreads = [], [], []
    for t, s in zip(tr.times, tr.snapshots):
        problems += [f"t={t:.6g}: {p}" for p in snapshot_violations(s, tol)]
        floors.append(s.floor)
        if isinstance(s, OpticalTomogram2):
            spreads.append(max(marginal(s, w, math.inf).diagnostics["angle_spread"]
                               for w in ("first", "second")))
    info = {"snapshots": len(tr.snapshots), "sign_floor": min(floors)}
    if spreads:
        info["marginal_angle_spread"] = max(spreads)
    return problems, info


def cmd_check(args):
    obj = read_container(args.input)
    info = {"file": str(args.input), "type": type(obj).__name__}
    if isinstance(obj, Trajectory):
        problems, extra = _check_trajectory(obj, args)
        info.update(extra)
    else:
        problems = list(obj.violations(args.tol_norm))
        if isinstance(obj, (OpticalTomogram1, OpticalTomogram2)):
            vmax = float(np.max(obj.values))
            if obj.floor < -args.eps_grid * vmax and not any("negative" in p for p in problems):
                problems.append(f"values below -eps_grid: min {obj.floor:.3e}")
            info["sign_floor"] = obj.floor
        if isinstance(obj, OpticalTomogram2):
            problems += _marginal_problems(obj, args.tol_marg)
        if isinstance(obj, DensityMatrix):
            info["eigen_floor"] = obj.eigen_floor
            info["quantum_admissible"] = obj.quantum_admissible
        if isinstance(obj, PhaseSpaceDensity):
            info["sign_floor"] = obj.sign_floor
            info["classical_admissible"] = obj.classical_admissible
        if obj.quarantined:
            problems.append("object is quarantined")
    info["ok"] = not problems
    info["violations"] = problems
    _print(info)
    return 0 if not problems else 4


def cmd_plot(args):
    obj = _read(args.input, args)
    if isinstance(obj, Trajectory):
        obj = obj.snapshots[args.index]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.stem or Path(args.input).stem
    written = []

    def path(suffix):
        p = out / f"{stem}{suffix}"
        written.append(str(p))
        return p

    if isinstance(obj, OpticalTomogram1):
        angle_slices_csv(path(".csv"), obj.x_axis.points, obj.theta_axis.points, obj.values)
        svg_heatmap(path(".svg"), obj.values, obj.x_axis.points, obj.theta_axis.points,
                    "X", "theta", "w(X, theta)")
    elif isinstance(obj, OpticalTomogram2):
        for which in ("first", "second"):
            m = marginal(obj, which, math.inf)
            angle_slices_csv(path(f".{which}.csv"), m.x_axis.points, m.theta_axis.points, m.values)
        s, _ = joint_slice(obj, args.theta1, args.theta2)
        svg_heatmap(path(".svg"), s, obj.x1_axis.points, obj.x2_axis.points, "X1", "X2",
                    f"w(X1, X2, {args.theta1:.4g}, {args.theta2:.4g})")
    elif isinstance(obj, PhaseSpaceDensity):
        if obj.particles != 1:
            raise UsageError("plot supports single-particle phase-space densities")
        angle_slices_csv(path(".csv"), obj.q_axis.points, obj.p_axis.points, obj.values, "q")
        svg_heatmap(path(".svg"), obj.values, obj.q_axis.points, obj.p_axis.points, "q", "p", "f(q, p)")
    elif isinstance(obj, DensityMatrix):
        x = obj.x_axis.points if len(obj.x_axes) == 1 else np.arange(obj.values.shape[0])
        write_csv(path(".csv"), ["x", "rho_xx"], [x, np.real(np.diag(obj.values))])
        svg_heatmap(path(".svg"), np.abs(obj.values), x, x, "x", "x'", "|rho(x, x')|")
    elif isinstance(obj, Wavefunction):
        v = obj.values
        write_csv(path(".csv"), ["x", "re", "im", "abs2"], [obj.x_axis.points, v.real, v.imag, np.abs(v) ** 2])
    for p in written:
        print(p)


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(prog="hybridtomo", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    tol = parser.add_argument_group("tolerances")
    tol.add_argument("--tol-norm", type=float, default=core.TOL_NORM)
    tol.add_argument("--tol-marg", type=float, default=TOL_MARG)
    tol.add_argument("--eps-grid", type=float, default=EPS_GRID_REL, help="relative to max(w)")
    tol.add_argument("--eps-cls", type=float, default=EPS_CLS_REL, help="relative to max(f)")
    tol.add_argument("--eps-q", type=float, default=EPS_Q, help="relative to the largest eigenvalue")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(parent, name, func, help_):
        p = parent.add_parser(name, help=help_, allow_abbrev=False)
        p.set_defaults(func=func)
        return p

    state = sub.add_parser("state", help="analytic states").add_subparsers(dest="action", required=True)
    p = command(state, "make", cmd_state_make, "write a fixture state")
    p.add_argument("--kind", choices=KINDS, required=True)
    for name, default in (("q0", 0.0), ("p0", 0.0), ("nbar", 0.0), ("sigma-q", 1.0),
                          ("sigma-p", 1.0), ("radius", 1.0)):
        p.add_argument(f"--{name}", type=float, default=default)
    p.add_argument("--n", type=int, default=0)
    p.add_argument("--repr", choices=("tomogram", "phase-space", "density-matrix", "wavefunction"),
                   default="tomogram")
    _grid_options(p)
    p.add_argument("-o", "--out", default="state.tomo")

    tomo = sub.add_parser("tomo", help="Radon-type transforms").add_subparsers(dest="action", required=True)
    p = command(tomo, "forward", cmd_tomo_forward, "phase-space density to tomogram")
    p.add_argument("input")
    _grid_options(p)
    p.add_argument("-o", "--out", required=True)
    for name, func, help_ in (("invert", cmd_tomo_invert, "filtered back-projection"),
                              ("rho", cmd_tomo_rho, "density-matrix reconstruction")):
        p = command(tomo, name, func, help_)
        p.add_argument("input")
        _filter_options(p)
        p.add_argument("-o", "--out", required=True)

    p = command(sub, "classify", cmd_classify, "classical/quantum admissibility label")
    p.add_argument("input")
    p.add_argument("--marginals-only", action="store_true", help="skip the joint 4-D test")
    p.add_argument("--json", action="store_true")
    _filter_options(p)

    hyb = sub.add_parser("hybrid", help="two-particle tomograms").add_subparsers(dest="action", required=True)
    p = command(hyb, "compose", cmd_hybrid_compose, "product, mixture or entangled form")
    p.add_argument("--mode", choices=("product", "mixture", "entangled"), required=True)
    p.add_argument("--first")
    p.add_argument("--second")
    p.add_argument("--branch", action="append", metavar="P,FIRST,SECOND")
    p.add_argument("--neg-branch", action="append", metavar="P,FIRST,SECOND")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("-o", "--out", required=True)

    p = command(sub, "covariance", cmd_covariance, "<X1 X2> - <X1><X2> at fixed angles")
    p.add_argument("input")
    p.add_argument("--theta1", type=float, default=0.0)
    p.add_argument("--theta2", type=float, default=0.0)

    p = command(sub, "toy-bounds", cmd_toy_bounds, "two-outcome admissibility bound")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)

    p = command(sub, "evolve", cmd_evolve, "time evolution")
    p.add_argument("input", nargs="?")
    p.add_argument("--scheme", choices=SCHEMES, default="spectral-rk4")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dt", type=float, default=3e-3)
    p.add_argument("--U1", default="0", help='potential of particle 1, e.g. "0.5*q^2"')
    p.add_argument("--U2", default="0", help="potential of particle 2")
    p.add_argument("--which-quantum", choices=("first", "second"), default="first")
    p.add_argument("--save-every", type=int, default=1)
    p.add_argument("--quantum-state", help="wavefunction or density matrix (oracle-pipeline)")
    p.add_argument("--classical-state", help="phase-space density (oracle-pipeline)")
    p.add_argument("--oracle-dt", type=float, default=1e-3)
    _grid_options(p)
    _filter_options(p)
    p.add_argument("-o", "--out", required=True)

    rep = sub.add_parser("report", help="diagnostic reports").add_subparsers(dest="action", required=True)
    p = command(rep, "marginals", cmd_report_marginals, "marginals vs Liouville / von Neumann oracles")
    p.add_argument("input", help="trajectory container")
    p.add_argument("--quantum-state", required=True)
    p.add_argument("--classical-state", required=True)
    p.add_argument("--U-quantum")
    p.add_argument("--U-classical")
    p.add_argument("--oracle-dt", type=float, default=1e-3)
    p.add_argument("--oracle-theta-count", type=int)
    p.add_argument("-o", "--out", help="CSV path (default: stdout)")

    p = command(sub, "check", cmd_check, "run the invariant suite on a container")
    p.add_argument("input")

    p = command(sub, "plot", cmd_plot, "CSV slices and an SVG heatmap")
    p.add_argument("input")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--stem")
    p.add_argument("--index", type=int, default=-1, help="trajectory snapshot")
    p.add_argument("--theta1", type=float, default=0.0)
    p.add_argument("--theta2", type=float, default=0.0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.command_name = " ".join(x for x in (args.command, getattr(args, "action", None)) if x)
    try:
        code = args.func(args)
    except TomoError as exc:
        err = {"error": exc.category, "type": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = {"error": "usage", "type": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
