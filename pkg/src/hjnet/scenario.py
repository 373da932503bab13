"""Scenario JSON ingestion: resolution to a self-contained dict and assembly
of the solver objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from ._kernel import SpaceTimeGrid
from .action import lipschitz_ledger
from .hamiltonian import HamiltonianFamily, family_from_spec
from .legendre import ConjugateEvaluator
from .limiter import FluxLimiter, limiter_from_spec
from .netgraph import NetPoint, NetworkGraph, network_from_dict, path_network, star_network, validate_network
from .solver import InitialDatum

__all__ = ["EXPERIMENTS", "Scenario", "resolve_scenario", "build_scenario", "parse_point", "read_scenario"]

EXPERIMENTS = ("solve", "phi", "convergence", "sensitivity", "verify", "ledger")


def read_scenario(path) -> tuple[dict, bytes]:
    """Raw scenario dict and file bytes. A run manifest is accepted as well."""
    raw = Path(path).read_bytes()
    data = json.loads(raw)
    if isinstance(data, dict) and "scenario" in data and "inputs_sha256" in data:
        data = data["scenario"]
    if not isinstance(data, dict):
        raise ValueError("scenario must be a JSON object")
    return data, raw


def resolve_scenario(data: dict, base_dir=".", overrides: dict | None = None) -> dict:
    """Inline file references and apply flag overrides.

    The result reproduces the run on its own, which is what the manifest stores.
    """
    sc = copy.deepcopy(data)
    net = sc.get("network")
    if isinstance(net, str):
        sc["network"] = json.loads((Path(base_dir) / net).read_text())
    elif net is None:
        raise ValueError("scenario has no network")
    if "horizon" not in sc:
        raise ValueError("scenario has no horizon")
    sc.setdefault("experiment", "solve")
    if sc["experiment"] not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {sc['experiment']!r}; expected one of {EXPERIMENTS}")
    grid = dict(sc.get("grid", {}))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in ("dt", "ds", "kappa"):
            grid[key] = val
        else:
            sc[key] = val
    grid.setdefault("dt", sc["horizon"] / 50)
    grid.setdefault("kappa", 1.0)
    sc["grid"] = grid
    sc.setdefault("seed", 0)
    return sc


def _network(spec) -> NetworkGraph:
    if "builtin" in spec:
        kind = spec["builtin"]
        if kind == "star":
            return star_network(int(spec.get("n_arcs", 3)), float(spec.get("length", 1.0)))
        if kind == "path":
            return path_network(spec["lengths"])
        raise ValueError(f"unknown builtin network {kind!r}")
    return network_from_dict(spec)


def parse_point(net: NetworkGraph, spec) -> NetPoint:
    """``{"vertex": id}`` or ``{"arc": id, "offset": s}``."""
    if "vertex" in spec:
        return net.vertex_point(str(spec["vertex"]))
    return net.point(str(spec["arc"]), float(spec["offset"]))


@dataclass
class Scenario:
    spec: dict
    net: NetworkGraph
    fam: HamiltonianFamily
    ce: ConjugateEvaluator
    limiter: FluxLimiter
    u0: InitialDatum
    grid: SpaceTimeGrid
    probes: list
    probe_times: list
    kappa_source: str

    @property
    def horizon(self) -> float:
        return float(self.spec["horizon"])

    def grid_at(self, dt: float, ds: float | None) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.net, dt, self.horizon, ds, self.grid.kappa)


def _default_probes(net: NetworkGraph) -> list:
    pts = [net.vertex_point(v) for v in sorted(net.vertices)]
    pts += [net.point(a, 0.5 * net.arcs[a].length) for a in sorted(net.arcs)]
    return pts


def build_scenario(sc: dict) -> Scenario:
    """Validate and assemble; raises ValueError with a diagnostic on failure."""
    net = _network(sc["network"])
    rep = validate_network(net)
    if not rep.valid:
        raise ValueError(f"network invalid: {rep}")
    T = float(sc["horizon"])
    fam = family_from_spec(net, T, sc.get("hamiltonian"))
    ce = ConjugateEvaluator(fam)
    limiter = limiter_from_spec(sc.get("flux_limiter", "maximal"), net, ce, T)
    u0 = InitialDatum.from_spec(net, sc.get("initial", 0.0))
    g = sc["grid"]
    kappa, source = g["kappa"], "given"
    if kappa == "ledger":
        led = lipschitz_ledger(fam, ce, T, float(g.get("C", 1.0)), limiter)
        if not led.found:
            raise ValueError(f"kappa ledger failed: {led.note}")
        kappa, source = led.kappa_star, "ledger"
    grid = SpaceTimeGrid(net, float(g["dt"]), T, None if g.get("ds") is None else float(g["ds"]), float(kappa))
    probes = [parse_point(net, p) for p in sc.get("probes", {}).get("points", [])] or _default_probes(net)
    times = [float(t) for t in sc.get("probes", {}).get("times", [T])]
    for t in times:
        grid.time_index(t)
    return Scenario(sc, net, fam, ce, limiter, u0, grid, probes, times, source)


def arc_abscissa(net: NetworkGraph) -> dict:
    """Start of each arc when the arcs are laid end to end in sorted order."""
    out, x = {}, 0.0
    for a in sorted(net.arcs):
        out[a] = x
        x += net.arcs[a].length
    return out

