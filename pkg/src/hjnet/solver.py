"""Lax-Oleinik solver: one multi-source DP sweep from the initial datum, plus
closed-form oracles and solution verification.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernel import SpaceTimeGrid
from .action import (BellmanProblem, DiscreteCurve, OverallLagrangian, Step, discrete_action,
                     admissibility_report)
from .expressions import compile_expression
from .legendre import ConjugateEvaluator
from .limiter import FluxLimiter, clamp_limiter, maximal_limiter, validate_limiter
from .netgraph import NetPoint, NetworkGraph
from .semidiscrete import disc_residual

__all__ = [
    "InitialDatum",
    "ValueField",
    "solve",
    "hopf_lax_oracle",
    "vertex_waiting_oracle",
    "CheckRow",
    "VerificationReport",
    "verify_solution",
    "random_arc_curves",
    "SensitivityTable",
    "flux_limiter_sensitivity",
]

log = logging.getLogger(__name__)


class InitialDatum:
    """Initial datum ``u0`` given per arc as expressions in ``s`` with optional
    vertex overrides.

    Parameters
    ----------
    net : the network.
    arcs : mapping arc id -> expression or callable of the native offset;
        arcs not listed use ``default``.
    vertices : mapping vertex id -> value. Without an override a vertex takes
        the value of its first incident arc at that end.
    modulus : ``{"kind": "lipschitz", "L": l}`` or
        ``{"kind": "uniform", "omega": "<expression in r>"}``.
    """

    def __init__(self, net: NetworkGraph, arcs=None, vertices=None, default=0.0, modulus=None):
        self.net = net
        arcs = dict(arcs or {})
        self.funcs = {a: (arcs[a] if callable(arcs.get(a)) else compile_expression(arcs.get(a, default), ("s",)))
                      for a in net.arcs}
        self.vertex_values = {str(k): float(v) for k, v in dict(vertices or {}).items()}
        self.modulus = dict(modulus) if modulus else {"kind": "uniform", "omega": "inf"}

    @classmethod
    def from_spec(cls, net: NetworkGraph, spec) -> "InitialDatum":
        if isinstance(spec, (int, float, str)):
            return cls(net, default=spec)
        spec = dict(spec)
        return cls(net, spec.get("arcs"), spec.get("vertices"), spec.get("default", 0.0), spec.get("modulus"))

    def __call__(self, p: NetPoint) -> float:
        if p.vertex is not None and p.vertex in self.vertex_values:
            return self.vertex_values[p.vertex]
        return float(self.funcs[p.arc](np.asarray(p.offset, dtype=float)))

    def on_arc(self, arc: str, offsets) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.funcs[arc](np.asarray(offsets, dtype=float)), dtype=float),
                               np.shape(offsets)).copy()

    def sample(self, grid: SpaceTimeGrid) -> np.ndarray:
        V = np.empty(grid.n_nodes)
        for a in grid.arc_order:
            g = grid.arcs[a]
            V[g.nodes[1:-1]] = self.on_arc(a, g.offsets[1:-1])
        for i, v in enumerate(grid.vertices):
            V[i] = self(self.net.vertex_point(v))
        return V

    def omega(self, r):
        kind = self.modulus.get("kind")
        if kind == "lipschitz":
            return float(self.modulus["L"]) * np.asarray(r, dtype=float)
        expr = self.modulus.get("omega", "inf")
        if expr == "inf":
            return np.full(np.shape(r), np.inf)
        return compile_expression(expr, ("r",))(np.asarray(r, dtype=float))

    def check_modulus(self, n_pairs: int = 200, seed: int = 0, tol: float = 1e-9) -> tuple[bool, float]:
        """Sampled ``|u0(a) - u0(b)| <= omega(d(a, b)) + tol``; returns (ok, worst excess)."""
        rng = np.random.default_rng(seed)
        arcs = list(self.net.arcs)
        pairs = [tuple(self.net.point(x, rng.uniform(0, self.net.arcs[x].length)) for x in rng.choice(arcs, 2))
                 for _ in range(n_pairs)]
        # vertex overrides against the arc data right next to them
        for v in self.vertex_values:
            for arc, orient in self.net.incidence[v]:
                L = self.net.arcs[arc].length
                h = 1e-6 * L
                pairs.append((self.net.vertex_point(v), self.net.point(arc, h if orient > 0 else L - h)))
        worst = -math.inf
        for a, b in pairs:
            worst = max(worst, abs(self(a) - self(b)) - float(self.omega(self.net.distance(a, b))))
        return worst <= tol, worst


@dataclass
class ValueField:
    """Values on the space-time grid from slice ``k0`` to ``K``."""

    values: np.ndarray
    bp_arc: np.ndarray
    bp_pos: np.ndarray
    grid: SpaceTimeGrid
    problem: BellmanProblem
    limiter: FluxLimiter
    provenance: dict = field(default_factory=dict)
    k0: int = 0

    def slice(self, k: int) -> np.ndarray:
        return self.values[k - self.k0]

    def value(self, p: NetPoint, t: float) -> float:
        """Linear interpolation along the arc, and in time between slices."""
        x = (t - self.grid.t[self.k0]) / self.grid.dt
        k = int(np.clip(math.floor(x + 1e-9), 0, len(self.values) - 1))
        th = x - k
        a = self.grid.interpolate(self.values[k], p)
        if th <= 1e-9 or k + 1 >= len(self.values):
            return a
        return (1 - th) * a + th * self.grid.interpolate(self.values[k + 1], p)

    def values_at(self, points, t: float) -> np.ndarray:
        return np.array([self.value(p, t) for p in points])

    def vertex_series(self, vertex: str) -> np.ndarray:
        return self.values[:, self.grid.vertex_index[vertex]].copy()

    def arc_slice(self, arc: str, k: int) -> np.ndarray:
        return self.slice(k)[self.grid.arcs[arc].nodes]

    def curve(self, p: NetPoint, t: float) -> DiscreteCurve:
        """Backtracked optimal curve ending at ``(p, t)`` and starting at ``t_{k0}``."""
        k = self.grid.time_index(t)
        return self.problem.backtrack(self.values, self.bp_arc, self.bp_pos, self.k0, p, k, self.k0)


def _evaluator(fam) -> ConjugateEvaluator:
    return fam if isinstance(fam, ConjugateEvaluator) else ConjugateEvaluator(fam)


def solve(net: NetworkGraph, fam, limiter: FluxLimiter, u0: InitialDatum, grid: SpaceTimeGrid,
          controls: str = "continuous", k_start: int = 0, initial: np.ndarray | None = None) -> ValueField:
    """Value function ``u(x, t) = min_x0 {u0(x0) + Phi(x0, 0, x, t)}`` on the grid.

    ``fam`` is a HamiltonianFamily or a ConjugateEvaluator. A user limiter that
    exceeds the maximal one is clamped first (logged). ``k_start`` with
    ``initial`` restarts the sweep from a stored slice.
    """
    ce = _evaluator(fam)
    cbar = maximal_limiter(net, ce, grid.T)
    prov = {"limiter": limiter.provenance, "kappa": grid.kappa, "dt": grid.dt, "ds": grid.ds_target,
            "controls": controls}
    if limiter.provenance == "user":
        rep = validate_limiter(limiter, cbar)
        if not rep.fldef_ok:
            log.warning("flux limiter exceeds the maximal one by %.3g; clamping before the solve", rep.fldef)
            limiter = clamp_limiter(limiter, cbar)
            prov["limiter"] = "clamped"
            prov["clamped_excess"] = rep.fldef
    OL = OverallLagrangian(ce, limiter)
    prob = BellmanProblem(OL, grid, controls)
    V0 = u0.sample(grid) if initial is None else np.asarray(initial, dtype=float)
    if V0.shape != (grid.n_nodes,):
        raise ValueError("initial slice does not match the grid")
    values, bpa, bpp = prob.sweep(V0, k_start, grid.K)
    return ValueField(values, bpa, bpp, grid, prob, limiter, prov, k_start)


def _quadratic_zero(fam, net):
    arcs = getattr(fam, "arcs", {})
    for a in net.arcs:
        ah = arcs.get(a)
        if ah is None or ah.kind != "quadratic_minus_potential":
            return False
        s = np.linspace(0, net.arcs[a].length, 5)
        t = np.linspace(0, fam.horizon, 5)
        S, T = np.meshgrid(s, t)
        if np.any(ah.h(S, T, np.zeros(S.shape)) != 0.0):
            return False
    return True


def hopf_lax_oracle(net: NetworkGraph, u0: InitialDatum, t: float, points, n_samples: int = 4001,
                    fam=None, limiter: FluxLimiter | None = None) -> np.ndarray:
    """``min_x0 {u0(x0) + d(x0, x)^2 / (2t)}`` over a dense sample of ``x0``.

    Valid only for the quadratic Hamiltonian with zero potential under the
    maximal limiter; passing a different ``fam`` or limiter raises.
    """
    if fam is not None and not _quadratic_zero(fam, net):
        raise ValueError("hopf_lax_oracle needs the quadratic Hamiltonian with zero potential")
    if limiter is not None and limiter.provenance != "maximal":
        raise ValueError("hopf_lax_oracle needs the maximal flux limiter")
    points = list(points)
    if t == 0:
        return np.array([u0(p) for p in points])
    out = np.full(len(points), np.inf)
    for a, arc in net.arcs.items():
        s = np.linspace(0.0, arc.length, n_samples)
        u = u0.on_arc(a, s)
        for i, p in enumerate(points):
            out[i] = min(out[i], float(np.min(u + net.distances_to(p, a, s) ** 2 / (2 * t))))
    for v, val in u0.vertex_values.items():
        for i, p in enumerate(points):
            out[i] = min(out[i], val + net.distance(net.vertex_point(v), p) ** 2 / (2 * t))
    return out


def vertex_waiting_oracle(net: NetworkGraph, vertex: str, c: float, t: float, points) -> np.ndarray:
    """``min(0, min_{tau in (0, t]} {c (t - tau) + d(x, vertex)^2 / (2 tau)})`` for
    ``u0 = 0``, quadratic zero potential and a constant ``c < 0`` at ``vertex``."""
    if c >= 0:
        raise ValueError("waiting only pays for c < 0")
    d = np.array([net.distance(net.vertex_point(vertex), p) for p in points])
    tau = np.clip(d / math.sqrt(-2.0 * c), 1e-300, t)
    val = c * (t - tau) + d ** 2 / (2 * tau)
    return np.minimum(0.0, val)


@dataclass
class CheckRow:
    name: str
    value: float
    tolerance: float
    passed: bool


@dataclass
class VerificationReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def get(self, name: str) -> CheckRow:
        return next(r for r in self.rows if r.name == name)


def random_arc_curves(field: ValueField, n: int, rng, max_steps: int = 10, arc_chart: bool = True):
    """Random grid curves inside single arcs, with random node hops within the cap."""
    grid = field.grid
    arcs = grid.arc_order
    out = []
    for _ in range(n):
        a = arcs[rng.integers(len(arcs))]
        g = grid.arcs[a]
        m = int(rng.integers(1, max_steps + 1))
        k1 = int(rng.integers(field.k0, grid.K - m + 1)) if grid.K - m >= field.k0 else field.k0
        m = min(m, grid.K - k1)
        i = int(rng.integers(len(g.offsets)))
        idx = [i]
        for _ in range(m):
            lo, hi = max(0, idx[-1] - g.h), min(len(g.offsets) - 1, idx[-1] + g.h)
            idx.append(int(rng.integers(lo, hi + 1)))
        pts = [grid.net.point(a, float(g.offsets[j])) for j in idx]
        steps = [Step(k1 + q, a, float(g.offsets[idx[q]]), float(g.offsets[idx[q + 1]])) for q in range(m)]
        out.append(DiscreteCurve(pts, grid.t[k1:k1 + m + 1].copy(), steps, grid.dt))
    return out


def verify_solution(field: ValueField, n_curves: int = 200, n_optimal: int = 20, seed: int = 0,
                    curve_tol: float = 1e-9, optimal_tol: float = 5e-2,
                    residual_tol: float | None = None) -> VerificationReport:
    """Residual, subsolution curve inequality, optimal-curve equality and a modulus probe."""
    grid, prob = field.grid, field.problem
    OL = prob.OL
    rng = np.random.default_rng(seed)
    rows = []
    if field.k0 == 0:
        res = disc_residual(field.values, field.limiter, grid, OL.ce, prob.controls)
        tol = 5 * grid.tol() if residual_tol is None else residual_tol
        rows.append(CheckRow("disc_residual", res.max, tol, res.max <= tol))
    worst = math.inf
    for c in random_arc_curves(field, n_curves, rng):
        k1 = grid.time_index(c.times[0])
        k2 = grid.time_index(c.times[-1])
        du = field.slice(k2)[grid.node_of(c.points[-1])] - field.slice(k1)[grid.node_of(c.points[0])]
        worst = min(worst, discrete_action(OL, c) - du)
    rows.append(CheckRow("subsolution_curve_slack", worst, -curve_tol, worst >= -curve_tol))
    gap = 0.0
    excursions = 0
    for _ in range(n_optimal):
        node = int(rng.integers(grid.n_nodes))
        k = int(rng.integers(field.k0 + 1, grid.K + 1))
        p = grid.node_point(node)
        c = field.curve(p, grid.t[k])
        start = grid.interpolate(field.slice(field.k0), c.points[0])
        gap = max(gap, abs(field.slice(k)[node] - start - c.action))
        excursions = max(excursions, admissibility_report(c, grid.K).excursions)
    rows.append(CheckRow("optimal_curve_gap", gap, optimal_tol, gap <= optimal_tol))
    rows.append(CheckRow("max_excursions", excursions, math.inf, True))
    mod = _modulus_probe(field, rng)
    rows.append(CheckRow("modulus_probe", mod, math.inf, bool(np.isfinite(mod))))
    return VerificationReport(rows)


def _modulus_probe(field: ValueField, rng, n: int = 200) -> float:
    """Largest difference quotient between neighbouring grid nodes and slices."""
    grid = field.grid
    worst = 0.0
    for _ in range(n):
        a = grid.arc_order[rng.integers(len(grid.arc_order))]
        g = grid.arcs[a]
        i = int(rng.integers(len(g.offsets) - 1))
        k = int(rng.integers(field.k0, grid.K))
        V, W = field.slice(k), field.slice(k + 1)
        ds = g.offsets[i + 1] - g.offsets[i]
        worst = max(worst, abs(V[g.nodes[i + 1]] - V[g.nodes[i]]) / ds, abs(W[g.nodes[i]] - V[g.nodes[i]]) / grid.dt)
    return worst


@dataclass
class SensitivityTable:
    probes: list
    rows: list  # (limiter label, values at probes)
    violations: int
    pairs_checked: int


def flux_limiter_sensitivity(net: NetworkGraph, fam, u0: InitialDatum, grid: SpaceTimeGrid,
                             limiters, probes, t: float | None = None, labels=None,
                             controls: str = "continuous", max_workers: int = 1) -> SensitivityTable:
    """Solve once per limiter and check that smaller limiters give smaller fields.

    A pair is checked when one limiter is pointwise below the other at every
    grid time and midpoint; a violation is any node where the order flips.
    """
    t = grid.T if t is None else t
    labels = labels or [f"limiter{i}" for i in range(len(limiters))]
    ce = _evaluator(fam)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        fields = list(pool.map(lambda c: solve(net, ce, c, u0, grid, controls), limiters))
    times = np.sort(np.concatenate([grid.t, grid.t_mid]))
    tab = [np.array([fields[i].limiter.values(v, times) for v in grid.vertices]) for i in range(len(limiters))]
    viol, pairs = 0, 0
    for i in range(len(limiters)):
        for j in range(len(limiters)):
            if i != j and np.all(tab[i] <= tab[j]):
                pairs += 1
                viol += int(np.count_nonzero(fields[i].values > fields[j].values))
    rows = [(lab, f.values_at(probes, t)) for lab, f in zip(labels, fields)]
    return SensitivityTable(list(probes), rows, viol, pairs)
