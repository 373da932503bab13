"""Command line entry point: ``hjnet --scenario FILE --out DIR``.

Exit status is 0 when every summary check passes, 1 when a check fails and
2 on a validation error (network, assumptions, flux limiter, grid).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernel import GridInfeasible
from .action import OverallLagrangian, dump_curve_csv, lipschitz_ledger, minimal_action
from .hamiltonian import validate_assumptions
from .limiter import limiter_from_spec, validate_limiter, zeno_criteria
from .scenario import Scenario, arc_abscissa, build_scenario, parse_point, read_scenario, resolve_scenario
from .semidiscrete import disc_residual
from .solver import (CheckRow, ValueField, flux_limiter_sensitivity, hopf_lax_oracle, solve,
                     verify_solution, vertex_waiting_oracle)

__all__ = ["main", "run", "convergence_study", "ConvergenceRow", "oracle_values"]

log = logging.getLogger("hjnet")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HJNET_THREADS", "1")))
    except ValueError:
        return 1


def _f(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- oracles -------------------------------------------------------------------

def oracle_values(sc: Scenario, t: float, points) -> np.ndarray:
    """Reference values from the scenario's ``oracle`` field."""
    spec = sc.spec.get("oracle")
    if spec is None:
        raise ValueError("scenario declares no oracle")
    kind = spec if isinstance(spec, str) else spec.get("kind")
    if kind == "hopf_lax":
        return hopf_lax_oracle(sc.net, sc.u0, t, points, fam=sc.fam, limiter=sc.limiter)
    if kind == "waiting":
        return vertex_waiting_oracle(sc.net, str(spec["vertex"]), float(spec["c"]), t, points)
    raise ValueError(f"oracle {kind!r} unavailable for this scenario")


# -- experiments ---------------------------------------------------------------

@dataclass
class ConvergenceRow:
    level: int
    ds: float
    dt: float
    max_error: float
    ratio: float  # previous error / this error; nan on the first level


def convergence_study(sc: Scenario, levels: int, workers: int = 1) -> list[ConvergenceRow]:
    """Halve ``dt`` and ``ds`` ``levels - 1`` times; error is the max over probes and probe times."""
    g = sc.grid
    ds0 = g.ds_target

    def one(level):
        f = 2.0 ** level
        grid = sc.grid_at(g.dt / f, ds0 / f)
        field = solve(sc.net, sc.ce, sc.limiter, sc.u0, grid)
        err = 0.0
        for t in sc.probe_times:
            ref = oracle_values(sc, t, sc.probes)
            err = max(err, float(np.abs(field.values_at(sc.probes, t) - ref).max()))
        return grid, err

    # probe the oracle once up front so an unavailable one fails before any solve
    oracle_values(sc, sc.probe_times[0], sc.probes[:1])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        res = list(pool.map(one, range(levels)))
    rows = []
    for lvl, (grid, err) in enumerate(res):
        prev = rows[-1].max_error if rows else math.nan
        ratio = prev / err if rows and err > 0 else (math.nan if not rows else math.inf)
        rows.append(ConvergenceRow(lvl, grid.ds_target, grid.dt, err, ratio))
    return rows


def _field_rows(field: ValueField):
    grid = field.grid
    for a in grid.arc_order:
        g = grid.arcs[a]
        for r in range(len(field.values)):
            t = grid.t[field.k0 + r]
            for s, node in zip(g.offsets, g.nodes):
                yield a, float(s), float(t), float(field.values[r, node])


def _emit_field(out: Path, sc: Scenario, field: ValueField):
    rows = list(_field_rows(field))
    _write_csv(out / "u.csv", ["arc", "offset", "t", "u"], [[a, _f(s), _f(t), _f(u)] for a, s, t, u in rows])
    x0 = arc_abscissa(sc.net)
    _write_csv(out / "plot_data.csv", ["x", "t", "u"], [[_f(x0[a] + s), _f(t), _f(u)] for a, s, t, u in rows])


def _setup_checks(sc: Scenario) -> list[CheckRow]:
    """Validation rows shared by all experiments. Assumption and FL failures are fatal."""
    rows = []
    rep = validate_assumptions(sc.fam)
    if not rep.passed:
        raise ValueError(f"Hamiltonian assumptions fail: {', '.join(rep.failed())}")
    lrep = validate_limiter(sc.limiter)
    if not (lrep.fl1_ok and lrep.fl2_ok):
        raise ValueError(f"flux limiter invalid: FL1 {lrep.fl1:.3g}, FL2 excess {lrep.fl2:.3g}")
    rows.append(CheckRow("limiter_fl2_excess", lrep.fl2, 1e-9, True))
    return rows


def _probe_rows(sc: Scenario, field: ValueField, rows: list[CheckRow]):
    """Probe values and, with an oracle, the probe error against it."""
    table = []
    for t in sc.probe_times:
        vals = field.values_at(sc.probes, t)
        ref = oracle_values(sc, t, sc.probes) if sc.spec.get("oracle") else None
        for i, p in enumerate(sc.probes):
            table.append([p.arc, _f(p.offset), p.vertex or "", _f(t), _f(vals[i]),
                          "" if ref is None else _f(ref[i])])
        if ref is not None:
            spec = sc.spec["oracle"]
            tol = float(spec.get("tol", 3e-2)) if isinstance(spec, dict) else 3e-2
            err = float(np.abs(vals - ref).max())
            rows.append(CheckRow(f"oracle_error_t={t:g}", err, tol, err <= tol))
    return table


def _exp_solve(sc: Scenario, out: Path, seed: int, full: bool) -> list[CheckRow]:
    rows = _setup_checks(sc)
    field = solve(sc.net, sc.ce, sc.limiter, sc.u0, sc.grid)
    _emit_field(out, sc, field)
    if full:
        rep = verify_solution(field, seed=seed)
        rows += rep.rows
        ok, worst = sc.u0.check_modulus(seed=seed)
        rows.append(CheckRow("initial_modulus_excess", worst, 1e-9, ok))
        for v, z in sorted(zeno_criteria(sc.net, sc.ce, sc.limiter, sc.horizon).items()):
            rows.append(CheckRow(f"zeno_margin_{v}", z.margin, 0.0, not z.suggest_clamp))
    else:
        res = disc_residual(field.values, field.limiter, sc.grid, sc.ce)
        tol = 5 * sc.grid.tol()
        rows.append(CheckRow("disc_residual", res.max, tol, res.max <= tol))
    table = _probe_rows(sc, field, rows)
    _write_csv(out / "probes.csv", ["arc", "offset", "vertex", "t", "u", "oracle"], table)
    return rows


def _exp_phi(sc: Scenario, out: Path) -> list[CheckRow]:
    rows = _setup_checks(sc)
    spec = sc.spec.get("phi")
    if not spec:
        raise ValueError("phi experiment needs a 'phi' field")
    x1, x2 = parse_point(sc.net, spec["from"]), parse_point(sc.net, spec["to"])
    OL = OverallLagrangian(sc.ce, sc.limiter)
    controls = spec.get("controls", "continuous")
    res = minimal_action(OL, sc.grid, x1, float(spec["t1"]), x2, float(spec["t2"]), controls=controls)
    _write_csv(out / "phi.csv", ["value", "reachable"], [[_f(res.value), int(res.reachable)]])
    if res.reachable:
        dump_curve_csv(out / "curve.csv", res.curve)
        adm = res.diagnostics["admissibility"]
        # node controls reproduce the Bellman value exactly; continuous ones
        # backtrack through off-grid points, which costs up to one grid tolerance
        gap = abs(res.curve.action - res.value)
        tol = 1e-9 if controls == "nodes" else sc.grid.tol()
        rows.append(CheckRow("curve_action_gap", gap, tol, gap <= tol))
        rows.append(CheckRow("excursions", adm.excursions, math.inf, True))
    return rows


def _exp_convergence(sc: Scenario, out: Path, levels: int) -> list[CheckRow]:
    rows = _setup_checks(sc)
    table = convergence_study(sc, levels, _workers())
    _write_csv(out / "convergence.csv", ["level", "ds", "dt", "max_error", "ratio"],
               [[r.level, _f(r.ds), _f(r.dt), _f(r.max_error), _f(r.ratio)] for r in table])
    # ratios are reported, not asserted
    rows.append(CheckRow("finest_error", table[-1].max_error, math.inf, True))
    return rows


def _exp_sensitivity(sc: Scenario, out: Path) -> list[CheckRow]:
    rows = _setup_checks(sc)
    spec = sc.spec.get("sensitivity") or {}
    specs = spec.get("limiters")
    if not specs:
        raise ValueError("sensitivity experiment needs 'sensitivity.limiters'")
    lims = [limiter_from_spec(s, sc.net, sc.ce, sc.horizon) for s in specs]
    labels = spec.get("labels") or [f"limiter{i}" for i in range(len(lims))]
    t = sc.probe_times[-1]
    tab = flux_limiter_sensitivity(sc.net, sc.ce, sc.u0, sc.grid, lims, sc.probes, t, labels,
                                   max_workers=_workers())
    body = []
    for lab, vals in tab.rows:
        for p, v in zip(sc.probes, vals):
            body.append([lab, p.arc, _f(p.offset), p.vertex or "", _f(t), _f(v)])
    _write_csv(out / "sensitivity.csv", ["limiter", "arc", "offset", "vertex", "t", "u"], body)
    rows.append(CheckRow("ordered_pairs", tab.pairs_checked, math.inf, True))
    rows.append(CheckRow("order_violations", tab.violations, 0, tab.violations == 0))
    return rows


def _exp_ledger(sc: Scenario, out: Path) -> list[CheckRow]:
    C = float(sc.spec["grid"].get("C", 1.0))
    led = lipschitz_ledger(sc.fam, sc.ce, sc.horizon, C, sc.limiter)
    _write_csv(out / "ledger.csv", ["kappa", "upsilon"],
               [[_f(k), _f(u)] for k, u in zip(led.kappa_grid, led.upsilon)])
    fields = {"A": led.A, "M": led.M, "Lambda": led.Lambda, "Xi": led.Xi, "eps_bar": led.eps_bar,
              "alpha_bar": led.alpha_bar, "beta_bar": led.beta_bar}
    rows = [CheckRow(k, v, math.inf, True) for k, v in fields.items()]
    rows.append(CheckRow("kappa_star", math.nan if led.kappa_star is None else led.kappa_star,
                         math.inf, led.found))
    return rows


# -- driver --------------------------------------------------------------------

def run(scenario_path, out_dir, dt=None, ds=None, kappa=None, levels=None, seed=None) -> int:
    """Run one scenario and write the artifacts; returns the exit status."""
    start = time.perf_counter()
    path = Path(scenario_path)
    try:
        data, raw = read_scenario(path)
        spec = resolve_scenario(data, path.parent,
                                {"dt": dt, "ds": ds, "kappa": kappa, "levels": levels, "seed": seed})
        sc = build_scenario(spec)
    except (GridInfeasible, ValueError, KeyError, OSError) as exc:
        print(f"hjnet: error: {exc}", file=sys.stderr)
        return 2
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = spec["experiment"]
    seed = int(spec["seed"])
    try:
        if exp in ("solve", "verify"):
            rows = _exp_solve(sc, out, seed, full=exp == "verify")
        elif exp == "phi":
            rows = _exp_phi(sc, out)
        elif exp == "convergence":
            rows = _exp_convergence(sc, out, int(spec.get("levels", 3)))
        elif exp == "sensitivity":
            rows = _exp_sensitivity(sc, out)
        else:
            rows = _exp_ledger(sc, out)
    except (GridInfeasible, ValueError) as exc:
        print(f"hjnet: error: {exc}", file=sys.stderr)
        return 2
    _write_csv(out / "summary.csv", ["check", "value", "tolerance", "pass"],
               [[r.name, _f(r.value), _f(r.tolerance), int(bool(r.passed))] for r in rows])
    manifest = {
        "inputs_sha256": hashlib.sha256(raw).hexdigest(),
        "scenario": spec,
        "experiment": exp,
        "grid": sc.grid.describe(),
        "kappa": sc.grid.kappa,
        "kappa_source": sc.kappa_source,
        "limiter_provenance": sc.limiter.provenance,
        # only finite networks are represented
        "network": {"n_vertices": len(sc.net.vertices), "n_arcs": len(sc.net.arcs), "finite": True},
        "threads": _workers(),
        "wall_time_s": time.perf_counter() - start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    failed = [r.name for r in rows if not r.passed]
    for r in rows:
        log.info("%-28s %-12.6g tol %-10.3g %s", r.name, r.value, r.tolerance, "ok" if r.passed else "FAIL")
    if failed:
        print(f"hjnet: checks failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjnet", description="Hamilton-Jacobi equations on networks.")
    p.add_argument("--scenario", required=True, help="scenario JSON (or a run manifest)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dt", type=float)
    p.add_argument("--ds", type=float)
    p.add_argument("--kappa", type=float, help="speed cap override")
    p.add_argument("--levels", type=int, help="refinement levels for the convergence experiment")
    p.add_argument("--seed", type=int, help="seed for the sampled checks")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    return run(args.scenario, args.out, args.dt, args.ds, args.kappa, args.levels, args.seed)


if __name__ == "__main__":
    sys.exit(main())
