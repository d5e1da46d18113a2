import json
import subprocess
import sys

import numpy as np
import pytest

from hybridtomo.cli import main
from hybridtomo.io import read_container, read_header
from hybridtomo.states import StateSpec, tomogram_values

SMALL = ["--x-count", "64", "--theta-count", "32"]
TINY = ["--x-count", "32", "--x-half-width", "6", "--theta-count", "16"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def cd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_coherent_classifies_both(capsys, cd):
    assert run(capsys, "state", "make", "--kind", "coherent", "--q0", 2, "--p0", 0, "-o", "c.tomo")[0] == 0
    code, out, _ = run(capsys, "classify", "c.tomo")
    assert code == 0 and out.strip() == "both"


def test_fock_classifies_quantum_only(capsys, cd):
    run(capsys, "state", "make", "--kind", "fock", "--n", 1, "-o", "f.tomo")
    code, out, _ = run(capsys, "classify", "f.tomo", "--json")
    info = json.loads(out)
    assert info["label"] == "quantum-only" and info["sign_floor"] < 0


def test_toy_bounds_output(capsys):
    code, out, _ = run(capsys, "toy-bounds", "--x", 0.2, "--y", 0.5, "--mu", 1)
    assert code == 0
    assert out.strip() == "z=-0.1, in_range=false, bounds=[0.25,0.75]"


def test_characteristics_rotation(capsys, cd):
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 1, *SMALL, "-o", "a.tomo")
    run(capsys, "state", "make", "--kind", "squeezed-gaussian", "--sigma-q", 0.5, "--sigma-p", 1.0,
        *SMALL, "-o", "b.tomo")
    run(capsys, "hybrid", "compose", "--mode", "product", "--first", "a.tomo", "--second", "b.tomo",
        "-o", "ab.tomo")
    t = 1.5707963
    code, _, err = run(capsys, "evolve", "ab.tomo", "--scheme", "characteristics-quadratic", "--t", t,
                       "--U1", "0.5*q^2", "--U2", "0.5*q^2", "-o", "rot.tomo")
    assert code == 0, err
    w = read_container("rot.tomo")
    X = w.x1_axis.points
    th = w.theta1_axis.points
    a = tomogram_values(StateSpec.coherent(1, 0), X[:, None], th[None, :] + t)
    b = tomogram_values(StateSpec.squeezed(0.5, 1.0), X[:, None], th[None, :] + t)
    ref = a[:, None, :, None] * b[None, :, None, :]
    assert np.max(np.abs(w.values - ref)) <= 1e-2
    meta = read_header("rot.tomo").metadata
    assert meta["command"] == "evolve" and meta["config"]["scheme"] == "characteristics-quadratic"


def test_deterministic_outputs(capsys, cd):
    for name in ("x.tomo", "y.tomo"):
        run(capsys, "state", "make", "--kind", "thermal", "--nbar", 0.4, *SMALL, "-o", name)
    assert (cd / "x.tomo").read_bytes() == (cd / "y.tomo").read_bytes()
    for name in ("fx.tomo", "fy.tomo"):
        run(capsys, "tomo", "invert", "x.tomo", "-o", name)
    assert (cd / "fx.tomo").read_bytes() == (cd / "fy.tomo").read_bytes()


def test_pipeline_forward_invert_rho(capsys, cd):
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 1, "--repr", "phase-space", "-o", "f.tomo")
    assert run(capsys, "tomo", "forward", "f.tomo", "-o", "w.tomo")[0] == 0
    assert run(capsys, "tomo", "invert", "w.tomo", "-o", "g.tomo")[0] == 0
    assert run(capsys, "tomo", "rho", "w.tomo", "-o", "r.tomo")[0] == 0
    f, g = read_container("f.tomo"), read_container("g.tomo")
    assert np.max(np.abs(f.values - g.values)) <= 1e-3
    for name in ("f.tomo", "w.tomo", "g.tomo", "r.tomo"):
        code, out, _ = run(capsys, "check", name)
        assert code == 0, out
        assert json.loads(out)["ok"]


def test_mixture_covariance(capsys, cd):
    # default grid: 32 angles under-resolve the displaced branches for classification
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 2, "-o", "p.tomo")
    run(capsys, "state", "make", "--kind", "coherent", "--q0", -2, "-o", "m.tomo")
    run(capsys, "hybrid", "compose", "--mode", "mixture", "--branch", "0.5,p.tomo,p.tomo",
        "--branch", "0.5,m.tomo,m.tomo", "-o", "mix.tomo")
    code, out, _ = run(capsys, "covariance", "mix.tomo")
    assert code == 0
    assert float(out.strip().split("=")[1]) == pytest.approx(4.0, abs=1e-3)
    code, out, _ = run(capsys, "classify", "mix.tomo", "--marginals-only")
    assert out.split("\n")[0] == "both"


def test_entangled_is_quarantined_and_fails_check(capsys, cd):
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 2.5, *SMALL, "-o", "p.tomo")
    run(capsys, "state", "make", "--kind", "coherent", "--q0", -2.5, *SMALL, "-o", "m.tomo")
    code, out, _ = run(capsys, "hybrid", "compose", "--mode", "entangled", "--branch", "0.5,p.tomo,p.tomo",
                       "--branch", "0.5,m.tomo,m.tomo", "--neg-branch", "1,p.tomo,m.tomo", "--mu", 5,
                       "-o", "e.tomo")
    assert code == 0 and json.loads(out)["negative"] is True
    assert read_container("e.tomo").quarantined
    code, out, _ = run(capsys, "check", "e.tomo")
    assert code == 4 and not json.loads(out)["ok"]
    code, out, _ = run(capsys, "classify", "e.tomo")
    assert out.split("\n")[0] == "neither"


def test_evolve_check_report_plot(capsys, cd):
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 1, *TINY, "-o", "q.tomo")
    run(capsys, "state", "make", "--kind", "classical-gaussian", "--sigma-q", 0.8, "--sigma-p", 0.8,
        *TINY, "-o", "c.tomo")
    run(capsys, "hybrid", "compose", "--mode", "product", "--first", "q.tomo", "--second", "c.tomo",
        "-o", "qc.tomo")
    code, _, err = run(capsys, "evolve", "qc.tomo", "--t", 0.1, "--dt", 0.01, "--U1", "0.5*q^2",
                       "--U2", "0", "--save-every", 5, "-o", "traj.tomo")
    assert code == 0, err
    code, out, _ = run(capsys, "check", "traj.tomo")
    assert code == 0, out
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 1, "--repr", "wavefunction",
        *TINY, "-o", "psi.tomo")
    run(capsys, "state", "make", "--kind", "classical-gaussian", "--sigma-q", 0.8, "--sigma-p", 0.8,
        "--repr", "phase-space", "-o", "f.tomo")
    code, out, err = run(capsys, "report", "marginals", "traj.tomo", "--quantum-state", "psi.tomo",
                         "--classical-state", "f.tomo")
    assert code == 0, err
    lines = out.strip().split("\n")
    assert lines[0] == "t,linf_quantum,l1_quantum,linf_classical,l1_classical,angle_spread"
    assert len(lines) == 4
    assert float(lines[-1].split(",")[1]) <= 5e-2 and float(lines[-1].split(",")[3]) <= 2e-2
    code, out, _ = run(capsys, "plot", "traj.tomo", "--out-dir", "plots")
    assert code == 0
    files = out.split()
    assert any(f.endswith(".svg") for f in files)
    svg = (cd / [f for f in files if f.endswith(".svg")][0]).read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    csv = (cd / [f for f in files if f.endswith(".first.csv")][0]).read_text().split("\n")
    assert csv[0].startswith("X,")


def test_oracle_pipeline_scheme(capsys, cd):
    run(capsys, "state", "make", "--kind", "coherent", "--q0", 1, "--repr", "wavefunction", *TINY, "-o", "psi.tomo")
    run(capsys, "state", "make", "--kind", "classical-gaussian", "--sigma-q", 0.8, "--sigma-p", 0.8,
        "--repr", "phase-space", "-o", "f.tomo")
    code, _, err = run(capsys, "evolve", "--scheme", "oracle-pipeline", "--t", 0.1, "--dt", 0.05,
                       "--U1", "0.5*q^2", "--quantum-state", "psi.tomo", "--classical-state", "f.tomo",
                       *TINY, "-o", "o.tomo")
    assert code == 0, err
    tr = read_container("o.tomo")
    assert len(tr.snapshots) == 3


@pytest.mark.parametrize("argv,code,category", [
    (["classify", "missing.tomo"], 2, "usage"),
    (["state", "make", "--kind", "fock", "--n", "9", "-o", "x.tomo"], 2, "usage"),
    (["toy-bounds", "--x", "1.5", "--y", "0.5", "--mu", "1"], 2, "usage"),
    (["evolve", "--t", "1", "--U1", "q^7", "--scheme", "oracle-pipeline", "-o", "x.tomo"], 2, "usage"),
])
def test_error_exit_codes(capsys, cd, argv, code, category):
    got, _, err = run(capsys, *argv)
    assert got == code
    assert json.loads(err)["error"] == category


def test_format_and_invariant_exit_codes(capsys, cd):
    (cd / "junk.tomo").write_bytes(b"not a container")
    code, _, err = run(capsys, "classify", "junk.tomo")
    assert code == 3 and json.loads(err)["error"] == "format"
    run(capsys, "state", "make", "--kind", "coherent", *SMALL, "-o", "c.tomo")
    raw = (cd / "c.tomo").read_bytes()
    head, body = raw.split(b"\n\n", 1)
    (cd / "bad.tomo").write_bytes(head + b"\n\n" + (2.0 * np.frombuffer(body, "<f8")).tobytes())
    code, out, _ = run(capsys, "check", "bad.tomo")
    assert code == 4


def test_numerical_exit_code(capsys, cd):
    run(capsys, "state", "make", "--kind", "classical-gaussian", "--sigma-q", 0.1, "--sigma-p", 0.1,
        "-o", "n.tomo")
    code, _, err = run(capsys, "tomo", "invert", "n.tomo", "-o", "x.tomo")
    assert code == 5 and json.loads(err)["type"] == "FilterInstability"


def test_argparse_usage_exit(capsys):
    with pytest.raises(SystemExit) as info:
        main(["evolve"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hybridtomo", "toy-bounds", "--x", "0.3", "--y", "0.3",
                          "--mu", "2"], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0
    assert res.stdout.strip() == "z=0.3, in_range=true, bounds=[0.2,0.533333333333]"
