import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from hjnet.cli import convergence_study, main
from hjnet.scenario import build_scenario, resolve_scenario

STAR = {"builtin": "star", "n_arcs": 3, "length": 1.0}
QUAD = {"kind": "quadratic_minus_potential", "params": {"potential": 0.0}}


def write(tmp_path, sc, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(sc))
    return p


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def summary(out):
    return {r["check"]: r for r in rows(out / "summary.csv")}


def test_zero_scenario(tmp_path):
    sc = {"network": STAR, "horizon": 0.5, "hamiltonian": QUAD, "grid": {"dt": 0.05, "ds": 0.05, "kappa": 2.0}}
    out = tmp_path / "out"
    assert main(["--quiet", "--scenario", str(write(tmp_path, sc)), "--out", str(out)]) == 0
    assert all(float(r["u"]) == 0.0 for r in rows(out / "u.csv"))
    assert (out / "plot_data.csv").read_text().startswith("x,t,u\n")
    m = json.loads((out / "manifest.json").read_text())
    assert m["limiter_provenance"] == "maximal" and m["kappa"] == 2.0 and len(m["inputs_sha256"]) == 64


def star_scenario(**extra):
    sc = {"network": STAR, "horizon": 0.5, "hamiltonian": QUAD, "flux_limiter": "maximal",
          "initial": {"vertices": {"l0": -1.0}}, "grid": {"dt": 0.02, "ds": 0.02, "kappa": 8.0},
          "oracle": "hopf_lax", "experiment": "solve"}
    sc.update(extra)
    return sc


def test_star_scenario_residual(tmp_path):
    out = tmp_path / "out"
    assert main(["--quiet", "--scenario", str(write(tmp_path, star_scenario())), "--out", str(out)]) == 0
    s = summary(out)
    assert float(s["disc_residual"]["value"]) <= float(s["disc_residual"]["tolerance"])
    assert s["oracle_error_t=0.5"]["pass"] == "1"


def test_grid_infeasible_exit(tmp_path, capsys):
    p = write(tmp_path, star_scenario())
    assert main(["--scenario", str(p), "--out", str(tmp_path / "o"), "--ds", "0.5", "--kappa", "1"]) == 2
    assert "grid infeasible" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [{"experiment": "nope"}, {"network": {"builtin": "ring"}},
                                 {"flux_limiter": 7}, {"hamiltonian": {"kind": "unknown"}}])
def test_validation_errors_exit_nonzero(tmp_path, bad):
    assert main(["--quiet", "--scenario", str(write(tmp_path, star_scenario(**bad))), "--out",
                 str(tmp_path / "o")]) == 2


def test_assumption_failure_exit(tmp_path, capsys):
    ham = {"kind": "exponential", "envelopes": {"lower": "0*r", "upper": "r*r/2"}}
    sc = star_scenario(hamiltonian=ham, oracle=None)
    assert main(["--scenario", str(write(tmp_path, sc)), "--out", str(tmp_path / "o")]) == 2
    assert "H3_upper" in capsys.readouterr().err


def test_determinism_and_manifest_roundtrip(tmp_path, monkeypatch):
    p = write(tmp_path, star_scenario(experiment="verify", oracle={"kind": "hopf_lax", "tol": 0.05}))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["--quiet", "--scenario", str(p), "--out", str(a), "--seed", "3"]) == 0
    monkeypatch.setenv("HJNET_THREADS", "3")
    assert main(["--quiet", "--scenario", str(p), "--out", str(b), "--seed", "3"]) == 0
    assert main(["--quiet", "--scenario", str(a / "manifest.json"), "--out", str(c)]) == 0
    for name in ("u.csv", "summary.csv", "plot_data.csv", "probes.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    assert json.loads((c / "manifest.json").read_text())["scenario"]["seed"] == 3


def test_network_file_reference(tmp_path):
    net = {"vertices": [{"id": "a", "coords": [0, 0]}, {"id": "b", "coords": [1, 0]}],
           "arcs": [{"id": "e", "head": "a", "tail": "b", "geometry": "segment"}]}
    (tmp_path / "net.json").write_text(json.dumps(net))
    sc = {"network": "net.json", "horizon": 1.0, "initial": {"default": "s"},
          "grid": {"dt": 0.05, "kappa": 2.0}}
    spec = resolve_scenario(sc, tmp_path)
    assert spec["network"] == net
    assert build_scenario(spec).grid.n_nodes == 21


def convergence_scenario(**extra):
    sc = {"network": {"builtin": "path", "lengths": [1.0]}, "horizon": 1.0, "hamiltonian": QUAD,
          "initial": {"default": "s"}, "grid": {"dt": 0.05, "ds": 0.05, "kappa": 2.0},
          "probes": {"points": [{"arc": "e0", "offset": x} for x in (0.0, 0.25, 0.5, 0.75, 1.0)],
                     "times": [0.5, 1.0]},
          "oracle": "hopf_lax", "experiment": "convergence"}
    sc.update(extra)
    return sc


def test_convergence_unit_arc():
    sc = build_scenario(resolve_scenario(convergence_scenario()))
    table = convergence_study(sc, 4)
    errs = [r.max_error for r in table]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert [r.level for r in table] == [0, 1, 2, 3] and table[1].dt == 0.025


def test_convergence_constant_solution():
    sc = build_scenario(resolve_scenario(convergence_scenario(initial=2.0)))
    assert all(r.max_error == 0.0 for r in convergence_study(sc, 3))


def test_convergence_waiting_decay():
    sc = build_scenario(resolve_scenario({
        "network": STAR, "horizon": 1.0, "hamiltonian": QUAD, "flux_limiter": {"c": -1.0},
        "grid": {"dt": 0.05, "ds": 0.05, "kappa": 4.0},
        "oracle": {"kind": "waiting", "vertex": "c", "c": -1.0}}))
    errs = [r.max_error for r in convergence_study(sc, 3, workers=2)]
    assert errs[-1] < errs[0]


def test_convergence_without_oracle_fails(tmp_path, capsys):
    p = write(tmp_path, convergence_scenario(oracle=None))
    assert main(["--quiet", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "oracle" in capsys.readouterr().err


def test_phi_sensitivity_ledger_experiments(tmp_path):
    base = {"network": STAR, "horizon": 1.0, "hamiltonian": QUAD, "grid": {"dt": 0.05, "ds": 0.05, "kappa": 4.0}}
    phi = dict(base, experiment="phi", phi={"from": {"vertex": "l0"}, "t1": 0.0, "to": {"vertex": "l1"}, "t2": 1.0})
    assert main(["--quiet", "--scenario", str(write(tmp_path, phi, "p.json")), "--out", str(tmp_path / "p")]) == 0
    assert float(rows(tmp_path / "p" / "phi.csv")[0]["value"]) == pytest.approx(2.0, abs=0.1)
    sens = dict(base, experiment="sensitivity", initial={"default": "s"},
                sensitivity={"limiters": ["maximal", {"maximal_offset": -0.5}]})
    assert main(["--quiet", "--scenario", str(write(tmp_path, sens, "s.json")), "--out", str(tmp_path / "s")]) == 0
    assert summary(tmp_path / "s")["order_violations"]["value"] == "0.0"
    led = dict(base, experiment="ledger", grid={"dt": 0.05, "kappa": "ledger", "C": 1.0})
    assert main(["--quiet", "--scenario", str(write(tmp_path, led, "l.json")), "--out", str(tmp_path / "l")]) == 0
    assert summary(tmp_path / "l")["kappa_star"]["pass"] == "1"


def test_console_script(tmp_path):
    p = write(tmp_path, {"network": STAR, "horizon": 0.2, "grid": {"dt": 0.1, "kappa": 2.0}})
    res = subprocess.run([sys.executable, "-m", "hjnet.cli", "--quiet", "--scenario", str(p), "--out",
                          str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert Path(tmp_path / "o" / "u.csv").exists()
