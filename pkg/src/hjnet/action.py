"""Overall Lagrangian, discrete action, minimal action by dynamic programming,
curve admissibility and the Lipschitz-constant ledger.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernel import ArcKernel, GridInfeasible, SpaceTimeGrid, decode_bp, point_step, sweep
from .legendre import BracketError, ConjugateEvaluator, conjugate_envelope
from .limiter import FluxLimiter, maximal_limiter
from .netgraph import NetPoint

__all__ = [
    "GridInfeasible",
    "SpaceTimeGrid",
    "OverallLagrangian",
    "Step",
    "DiscreteCurve",
    "ActionResult",
    "Unreachable",
    "BellmanProblem",
    "eval_overall_lagrangian",
    "discrete_action",
    "minimal_action",
    "admissibility_report",
    "AdmissibilityReport",
    "LipschitzLedger",
    "lipschitz_ledger",
    "lipschitz_modulus_probe",
    "dump_field_csv",
    "dump_curve_csv",
]

log = logging.getLogger(__name__)


class OverallLagrangian:
    """Arc Lagrangians glued with the vertex cost ``|q|^2/2 + c_x(t)``."""

    def __init__(self, ce: ConjugateEvaluator, c: FluxLimiter):
        self.ce = ce
        self.c = c
        self.net = ce.fam.net

    def eval(self, point: NetPoint, lam, t) -> float:
        if point.vertex is not None:
            return 0.5 * lam * lam + float(self.c(point.vertex, t))
        return float(self.ce.lagrangian(point.arc, np.array(point.offset), np.array(lam), np.array(t)))


def eval_overall_lagrangian(OL: OverallLagrangian, point: NetPoint, lam: float, t: float) -> float:
    return OL.eval(point, lam, t)


@dataclass(frozen=True)
class Step:
    """One time step ``t_k -> t_{k+1}``.

    ``arc is None`` marks a stay at ``vertex``; otherwise the step moves in
    the chart of ``arc`` from offset ``s_from`` to ``s_to``.
    """

    k: int
    arc: str | None
    s_from: float
    s_to: float
    vertex: str | None = None


@dataclass
class DiscreteCurve:
    points: list  # NetPoint per time t_{k0} .. t_{k0+n}
    times: np.ndarray
    steps: list
    dt: float
    action: float = math.nan

    def __len__(self):
        return len(self.steps)


@dataclass
class ActionResult:
    value: float
    curve: DiscreteCurve | None
    diagnostics: dict = field(default_factory=dict)
    reachable: bool = True


@dataclass
class Unreachable(ActionResult):
    """``Phi = +inf``: the end point cannot be reached within the speed cap."""

    value: float = math.inf
    curve: None = None
    reachable: bool = False


def discrete_action(OL: OverallLagrangian, curve: DiscreteCurve) -> float:
    """``sum dt * L(arrival, ds/dt, t_k + dt/2)``, accumulated left to right."""
    net = OL.net
    total = 0.0
    dt = curve.dt
    if len(curve.points) != len(curve.steps) + 1:
        raise ValueError("malformed curve: points and steps disagree")
    for st, t0 in zip(curve.steps, curve.times[:-1]):
        tm = t0 + 0.5 * dt
        if st.arc is None:
            if st.vertex is None:
                raise ValueError("malformed curve: stay step without a vertex")
            total += dt * OL.eval(net.vertex_point(st.vertex), 0.0, tm)
        else:
            lam = (st.s_to - st.s_from) / dt
            total += dt * float(OL.ce.lagrangian(st.arc, np.array(st.s_to), np.array(lam), np.array(tm)))
    return total


class BellmanProblem:
    """Grid, per-arc kernels and vertex stay costs for one limiter."""

    def __init__(self, OL: OverallLagrangian, grid: SpaceTimeGrid, controls: str = "continuous"):
        self.OL, self.grid, self.controls = OL, grid, controls
        self.kernels = {a: ArcKernel(grid, OL.ce, a, controls) for a in grid.arc_order}
        self.stay = {v: grid.dt * OL.c.values(v, grid.t_mid) for v in grid.vertices}

    def sweep(self, V0, k_start=0, k_end=None, keep=True):
        return sweep(self.grid, self.kernels, self.stay, V0, k_start, k_end, keep)

    def point_value(self, V_prev, p, k):
        """DP value at ``p`` on slice ``k + 1`` given slice ``k``."""
        return point_step(self.grid, self.kernels, self.stay, V_prev, p, k)[0]

    def backtrack(self, values, bp_arc, bp_pos, k_base, p, k_to, k_from) -> DiscreteCurve:
        """Optimal curve ending at ``(p, t_{k_to})``, traced back to ``t_{k_from}``."""
        grid, net = self.grid, self.grid.net
        pts, steps = [p], []
        cur = p
        for k in range(k_to - 1, k_from - 1, -1):
            r = k + 1 - k_base
            node = grid.node_of(cur)
            if node is not None and bp_arc[r, node] != -2:
                arc, s_to = decode_bp(grid, int(bp_arc[r, node]), node)
                s_from = float(bp_pos[r, node])
            else:
                _, arc, s_from, s_to = point_step(grid, self.kernels, self.stay, values[r - 1], cur, k)
            if arc is None:
                steps.append(Step(k, None, math.nan, math.nan, cur.vertex))
                prev = cur
            else:
                steps.append(Step(k, arc, s_from, s_to))
                prev = net.point(arc, s_from)
            pts.append(prev)
            cur = prev
        pts.reverse()
        steps.reverse()
        curve = DiscreteCurve(pts, grid.t[k_from:k_to + 1].copy(), steps, grid.dt)
        curve.action = discrete_action(self.OL, curve)
        return curve


def minimal_action(OL: OverallLagrangian, grid: SpaceTimeGrid, x1: NetPoint, t1: float,
                   x2: NetPoint, t2: float, controls: str = "continuous",
                   problem: BellmanProblem | None = None) -> ActionResult:
    """``Phi(x1, t1, x2, t2)`` by value iteration from a single source.

    ``x1`` is snapped to the nearest grid node; ``x2`` may be off the grid.
    Returns :class:`Unreachable` when no curve within the speed cap exists.
    """
    diag = {"kappa": grid.kappa, "grid": grid.describe(), "controls": controls}
    if t2 < t1:
        raise ValueError("t2 must not precede t1")
    if t2 == t1:
        if x1 == x2:
            return ActionResult(0.0, DiscreteCurve([x1], np.array([t1]), [], grid.dt, 0.0), diag)
        return Unreachable(diagnostics={**diag, "reason": "t1 == t2 with x1 != x2"})
    k1, k2 = grid.time_index(t1), grid.time_index(t2)
    prob = problem or BellmanProblem(OL, grid, controls)
    src = grid.nearest_node(x1)
    if grid.node_of(x1) is None:
        diag["x1_snapped_to"] = grid.node_point(src)
    V0 = np.full(grid.n_nodes, np.inf)
    V0[src] = 0.0
    values, bpa, bpp = prob.sweep(V0, k1, k2)
    node = grid.node_of(x2)
    val = values[-1, node] if node is not None else prob.point_value(values[-2], x2, k2 - 1)
    if not np.isfinite(val):
        return Unreachable(diagnostics={**diag, "reason": "not reachable within the speed cap"})
    curve = prob.backtrack(values, bpa, bpp, k1, x2, k2, k1)
    diag["admissibility"] = admissibility_report(curve, grid.K)
    return ActionResult(float(val), curve, diag)


@dataclass
class AdmissibilityReport:
    excursions: int
    shortest: float  # duration of the shortest excursion (inf if none)
    zeno: bool
    max_speed: float


def admissibility_report(curve: DiscreteCurve, K: int | None = None) -> AdmissibilityReport:
    """Count vertex excursions: maximal off-vertex stretches that leave and
    re-enter the same vertex, plus single steps running a loop from a vertex
    back to itself."""
    pts, dt = curve.points, curve.dt
    durations = []
    n = len(pts)
    i = 0
    while i < n:
        if pts[i].vertex is None:
            j = i
            while j + 1 < n and pts[j + 1].vertex is None:
                j += 1
            if i > 0 and j + 1 < n and pts[i - 1].vertex == pts[j + 1].vertex:
                durations.append((j + 2 - i) * dt)
            i = j + 1
        else:
            i += 1
    for a, b, st in zip(pts[:-1], pts[1:], curve.steps):
        if st.arc is not None and a.vertex is not None and a.vertex == b.vertex:
            durations.append(dt)
    speeds = [abs(st.s_to - st.s_from) / dt for st in curve.steps if st.arc is not None]
    K = len(curve.steps) if K is None else K
    count = len(durations)
    return AdmissibilityReport(count, min(durations, default=math.inf), count > max(2, K // 10),
                               max(speeds, default=0.0))


@dataclass
class LipschitzLedger:
    A: float
    M: float
    Lambda: float
    Xi: float
    kappa_grid: np.ndarray
    upsilon: np.ndarray
    kappa_star: float | None
    eps_bar: float
    alpha_bar: float
    beta_bar: float
    note: str = ""

    @property
    def found(self) -> bool:
        return self.kappa_star is not None


def lipschitz_ledger(fam, ce: ConjugateEvaluator, T: float, C: float, limiter: FluxLimiter | None = None,
                     kappa_grid=None, n_s: int = 5, n_t: int = 5, n_q: int = 33) -> LipschitzLedger:
    """Speed cap ``kappa*`` from the growth envelopes.

    With ``theta_bar``/``Theta_bar`` the overall Lagrangian envelopes, the
    smallest ``kappa`` on ``kappa_grid`` is returned such that
    ``kappa > 4 M T / eps_bar`` and ``Lambda + Xi <= Upsilon(kappa)``, where
    ``M = A + Theta_bar(C)`` and ``theta_bar(r) >= r - A``. ``Xi`` and
    ``Upsilon`` come from sweeps of subgradients ``p`` (the conjugate's
    maximizers) at sampled ``(s, t, q)``.
    """
    env = fam.envelopes
    lim = limiter if limiter is not None else maximal_limiter(fam.net, ce, T)
    kappa_grid = default_kappa_grid() if kappa_grid is None else np.asarray(kappa_grid, dtype=float)
    CT = float(lim.bound)
    alpha = float(env.alpha)
    eps_bar = min(float(env.eps), float(lim.eps))
    nan = math.nan
    try:
        theta_hat0 = float(conjugate_envelope(env.upper, np.array(0.0)))
        beta_bar = max(alpha * abs(theta_hat0) + env.beta, float(lim.beta))

        # conj(theta_bar) = max(Theta_H, r^2/2 + C_T); conj(Theta_bar) by golden section
        def theta_star_lower(r):  # Θ*_T, conjugate of the lower Lagrangian envelope
            r = np.asarray(r, dtype=float)
            return np.maximum(env.upper(r), 0.5 * r * r + CT)

        def Theta_bar(r):
            r = np.asarray(r, dtype=float)
            return np.maximum(conjugate_envelope(env.lower, r), 0.5 * r * r + CT)

        def vartheta_star(r):  # ϑ*_T, conjugate of the upper Lagrangian envelope
            return conjugate_envelope(Theta_bar, r)

        A = float(theta_star_lower(1.0))
        M = A + float(Theta_bar(np.array(C)))
        Lam = 2.0 * (alpha * M + beta_bar) * T
        # both conjugate envelopes are nondecreasing in |p|, so only the
        # extreme subgradients matter
        p_xi = _subgradients(fam, ce, T, np.linspace(-4 * M, 4 * M, n_q), n_s, n_t)
        Xi = float(theta_star_lower(p_xi.max()))
        q = kappa_grid[None, :] * np.array([1 + 1e-9, 1.5, 2.0, 4.0])[:, None]
        p_ups = _subgradients(fam, ce, T, np.concatenate([q, -q]).ravel(), n_s, n_t)
        p_min = p_ups.reshape(p_ups.shape[0], 8, len(kappa_grid)).min(axis=(0, 1))
        ups = np.asarray(vartheta_star(p_min), dtype=float)
    except BracketError as exc:
        return LipschitzLedger(nan, nan, nan, nan, kappa_grid, np.full(len(kappa_grid), nan), None,
                               eps_bar, alpha, nan, note=f"not found in range: {exc}")
    ok = (kappa_grid > 4 * M * T / eps_bar) & (Lam + Xi <= ups)
    kstar = float(kappa_grid[np.argmax(ok)]) if ok.any() else None
    note = "" if ok.any() else "not found in range"
    return LipschitzLedger(A, M, Lam, Xi, kappa_grid, ups, kstar, eps_bar, alpha, beta_bar, note)


def default_kappa_grid() -> np.ndarray:
    """Steps of 0.25 up to 16, then geometric (ratio 1.25) up to about 1e4."""
    return np.concatenate([np.arange(1, 65) * 0.25, 16.0 * 1.25 ** np.arange(1, 30)])


def _subgradients(fam, ce, T, q, n_s, n_t) -> np.ndarray:
    """|p| for p in the subdifferential of L at speeds ``q`` (last axis),
    one row per sampled (arc, s, t) plus one row for the vertex chart (p = q)."""
    q = np.asarray(q, dtype=float)
    rows = [np.abs(q)[None, :]]
    t = np.linspace(0.0, T, n_t)
    for a, arc in fam.net.arcs.items():
        s = np.linspace(0.0, arc.length, n_s)
        S, Tt, Q = np.meshgrid(s, t, q, indexing="ij")
        _, rec = ce.conjugate(a, S, Q, Tt)
        rows.append(np.abs(rec.mu).reshape(-1, len(q)))
    return np.concatenate(rows)


def lipschitz_modulus_probe(OL: OverallLagrangian, grid: SpaceTimeGrid, pairs,
                            controls: str = "continuous") -> float:
    """Largest ``|Phi(a) - Phi(b)| / dist(a, b)`` over pairs of quadruples.

    Each quadruple is ``(x1, t1, x2, t2)``; the distance adds ``d_Gamma`` of
    both points and both time gaps. Identical quadruples contribute 0.
    """
    net = grid.net
    prob = BellmanProblem(OL, grid, controls)
    cache: dict = {}

    def phi(q):
        key = (q[0], q[1], q[2], q[3])
        if key not in cache:
            cache[key] = minimal_action(OL, grid, *q, problem=prob).value
        return cache[key]

    worst = 0.0
    for a, b in pairs:
        d = net.distance(a[0], b[0]) + net.distance(a[2], b[2]) + abs(a[1] - b[1]) + abs(a[3] - b[3])
        if d == 0:
            continue
        worst = max(worst, abs(phi(a) - phi(b)) / d)
    return worst


def dump_field_csv(path, grid: SpaceTimeGrid, values: np.ndarray, k0: int = 0):
    """Rows ``node, arc, offset, t, value``; vertices carry an empty arc."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "arc", "offset", "t", "value"])
        for r, row in enumerate(values):
            t = grid.t[k0 + r]
            for node in range(grid.n_nodes):
                if node < len(grid.vertices):
                    w.writerow([grid.vertices[node], "", 0.0, repr(float(t)), repr(float(row[node]))])
                else:
                    w.writerow([node, grid.node_arc[node], repr(float(grid.node_offset[node])),
                                repr(float(t)), repr(float(row[node]))])


def dump_curve_csv(path, curve: DiscreteCurve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "arc", "offset", "vertex"])
        for p, t in zip(curve.points, curve.times):
            w.writerow([repr(float(t)), p.arc, repr(float(p.offset)), p.vertex or ""])
