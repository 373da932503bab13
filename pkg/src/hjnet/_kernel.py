"""Space-time grid and the Bellman kernel shared by the action DP, the solver
and the per-arc operator of the semidiscrete scheme.

One time step on an arc evaluates, for every arrival node ``s_i``,

* node departures ``s_j`` with ``|i - j| <= h`` at cost
  ``V[j] + dt * L(s_i, (s_i - s_j)/dt, t_mid)``;
* in ``"continuous"`` mode also the best departure point inside every cell
  ``[s_{j-1}, s_j]`` within reach, with ``V`` interpolated linearly. On a cell
  the optimum solves ``dL/dlam = mu`` with ``mu`` the cell slope, that is
  ``lam* = dH/dmu(mu)``, and the cost is ``V(y*) + dt * (lam* mu - H(mu))``.

Candidates are ordered by departure node index, nodes before cells, and the
first minimum wins, so extracted curves are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["GridInfeasible", "ArcGrid", "SpaceTimeGrid", "ArcKernel", "sweep", "decode_bp", "point_step"]

CONTROLS = ("continuous", "nodes")


class GridInfeasible(ValueError):
    """``ds_arc > kappa * dt`` or a horizon that is not a multiple of ``dt``."""


@dataclass(frozen=True)
class ArcGrid:
    arc: str
    index: int  # position in the sorted arc order
    offsets: np.ndarray
    ds: float
    h: int  # max node hop per step
    nodes: np.ndarray  # global node ids, head vertex first, tail vertex last


class SpaceTimeGrid:
    """Uniform grid on every arc plus uniform time steps.

    Parameters
    ----------
    net : NetworkGraph
    dt : time step; ``T`` must be a multiple of it.
    T : horizon.
    ds : target spatial step; arc ``a`` gets ``ceil(|a|/ds)`` cells.
    kappa : speed cap; ``ds_a <= kappa * dt`` is required on every arc.
    """

    def __init__(self, net, dt: float, T: float, ds: float | None = None, kappa: float = 1.0):
        ds = dt if ds is None else ds
        if dt <= 0 or ds <= 0 or T <= 0 or kappa <= 0:
            raise GridInfeasible("grid infeasible: dt, ds, T and kappa must be positive")
        K = int(round(T / dt))
        if K < 1 or abs(K * dt - T) > 1e-9 * max(T, 1.0):
            raise GridInfeasible(f"grid infeasible: T={T} is not a multiple of dt={dt}")
        self.net = net
        self.dt = float(dt)
        self.T = float(T)
        self.K = K
        self.kappa = float(kappa)
        self.ds_target = float(ds)
        self.t = np.arange(K + 1) * self.dt
        self.t_mid = self.t[:-1] + 0.5 * self.dt
        self.vertices = list(net.vertices)
        self.vertex_index = {v: i for i, v in enumerate(self.vertices)}
        self.arc_order = sorted(net.arcs)
        self.arcs: dict[str, ArcGrid] = {}
        nxt = len(self.vertices)
        node_arc, node_off = [None] * nxt, [np.nan] * nxt
        for ai, a in enumerate(self.arc_order):
            arc = net.arcs[a]
            n = max(1, math.ceil(arc.length / ds - 1e-9))
            dsa = arc.length / n
            if dsa > kappa * dt * (1 + 1e-12):
                raise GridInfeasible(
                    f"grid infeasible on arc {a!r}: ds={dsa:.6g} > kappa*dt={kappa * dt:.6g}")
            offsets = np.arange(n + 1) * dsa
            offsets[-1] = arc.length
            nodes = np.empty(n + 1, dtype=np.int64)
            nodes[0] = self.vertex_index[arc.head]
            nodes[-1] = self.vertex_index[arc.tail]
            nodes[1:-1] = np.arange(nxt, nxt + n - 1)
            nxt += n - 1
            node_arc += [a] * (n - 1)
            node_off += list(offsets[1:-1])
            h = int(math.floor(kappa * dt / dsa + 1e-9))
            self.arcs[a] = ArcGrid(a, ai, offsets, dsa, h, nodes)
        self.n_nodes = nxt
        self.node_arc = node_arc
        self.node_offset = np.array(node_off)

    def describe(self) -> dict:
        return {"dt": self.dt, "T": self.T, "K": self.K, "ds": self.ds_target, "kappa": self.kappa,
                "n_nodes": self.n_nodes,
                "arcs": {a: {"cells": len(g.offsets) - 1, "ds": g.ds, "hop": g.h} for a, g in self.arcs.items()}}

    def tol(self) -> float:
        """Grid tolerance ``ds + dt`` (largest arc step) used by the checks."""
        return max(g.ds for g in self.arcs.values()) + self.dt

    def time_index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k > self.K or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the grid")
        return k

    def node_of(self, p) -> int | None:
        """Global node id of a NetPoint, or None when it is off the grid."""
        if p.vertex is not None:
            return self.vertex_index[p.vertex]
        g = self.arcs[p.arc]
        i = int(round(p.offset / g.ds))
        if 0 <= i < len(g.offsets) and abs(g.offsets[i] - p.offset) <= 1e-12 * max(1.0, g.offsets[-1]):
            return int(g.nodes[i])
        return None

    def nearest_node(self, p) -> int:
        if p.vertex is not None:
            return self.vertex_index[p.vertex]
        g = self.arcs[p.arc]
        return int(g.nodes[int(np.clip(round(p.offset / g.ds), 0, len(g.offsets) - 1))])

    def node_point(self, node: int):
        if node < len(self.vertices):
            return self.net.vertex_point(self.vertices[node])
        return self.net.point(self.node_arc[node], float(self.node_offset[node]))

    def interpolate(self, V: np.ndarray, p) -> float:
        """Linear interpolation of a slice along the arc holding ``p``."""
        if p.vertex is not None:
            return float(V[self.vertex_index[p.vertex]])
        g = self.arcs[p.arc]
        w = V[g.nodes]
        i = min(int(p.offset // g.ds), len(g.offsets) - 2)
        th = (p.offset - g.offsets[i]) / (g.offsets[i + 1] - g.offsets[i])
        if th <= 0.0:
            return float(w[i])
        if th >= 1.0:
            return float(w[i + 1])
        if not (np.isfinite(w[i]) and np.isfinite(w[i + 1])):
            return math.inf
        return float(w[i] + th * (w[i + 1] - w[i]))


class ArcKernel:
    """Per-arc Bellman step with cached node-move costs."""

    def __init__(self, grid: SpaceTimeGrid, ce, arc: str, controls: str = "continuous"):
        if controls not in CONTROLS:
            raise ValueError(f"controls must be one of {CONTROLS}")
        g = grid.arcs[arc]
        self.grid, self.ce, self.fam, self.arc = grid, ce, ce.fam, arc
        self.controls = controls
        self.s, self.ds, self.h = g.offsets, g.ds, g.h
        self.tdep = self.fam.arcs[arc].time_dependent
        n, h = len(self.s), self.h
        i = np.arange(n)[:, None]
        J = i - np.arange(h, -h - 1, -1)[None, :]  # departure index ascending
        self.valid = (J >= 0) & (J < n)
        self.Jc = np.clip(J, 0, n - 1)
        self.zero = J == i
        self.lam = (self.s[:, None] - self.s[self.Jc]) / grid.dt
        self.S = np.broadcast_to(self.s[:, None], J.shape)
        J0 = i - np.arange(h - 1, -h - 1, -1)[None, :]  # cell [s_{j0-1}, s_{j0}]
        self.seg_valid = (J0 - 1 >= 0) & (J0 < n)
        self.J0c = np.clip(J0, 1, n - 1)
        self.Sseg = np.broadcast_to(self.s[:, None], J0.shape)
        self.lam_lo = (self.s[:, None] - self.s[self.J0c]) / grid.dt
        self.lam_hi = (self.s[:, None] - self.s[self.J0c - 1]) / grid.dt
        self._cost: dict = {}

    def node_cost(self, k: int) -> np.ndarray:
        key = k if self.tdep else None
        out = self._cost.get(key)
        if out is None:
            t = self.grid.t_mid[k]
            L = self.ce.lagrangian(self.arc, self.S, self.lam, np.full(self.S.shape, t))
            out = np.where(self.valid, self.grid.dt * L, np.inf)
            out.setflags(write=False)
            self._cost[key] = out
        return out

    def step(self, W: np.ndarray, k: int, endpoint_stay: bool = True):
        """Arrival values on all arc nodes and their departure offsets."""
        cost = self.node_cost(k)
        if not endpoint_stay:
            cost = cost.copy()
            cost[0][self.zero[0]] = np.inf
            cost[-1][self.zero[-1]] = np.inf
        with np.errstate(invalid="ignore"):
            cand = W[self.Jc] + cost
        dep = self.s[self.Jc]
        if self.controls == "continuous" and self.h > 0:
            val, y = self._cells(W, k)
            cand = np.concatenate([cand, val], axis=1)
            dep = np.concatenate([dep, y], axis=1)
        idx = np.argmin(cand, axis=1)
        rows = np.arange(len(W))
        return cand[rows, idx], dep[rows, idx]

    def _cells(self, W, k):
        dt, ds = self.grid.dt, self.ds
        w0, w1 = W[self.J0c], W[self.J0c - 1]
        ok = self.seg_valid & np.isfinite(w0) & np.isfinite(w1)
        with np.errstate(invalid="ignore"):
            g = np.where(ok, w1 - w0, 0.0)
        mu = -g / ds
        t = np.full(mu.shape, self.grid.t_mid[k])
        lam = self.fam.dh(self.arc, self.Sseg, t, mu)
        inside = ok & (lam > self.lam_lo) & (lam < self.lam_hi)
        theta = (lam - self.lam_lo) * (dt / ds)
        val = w0 + theta * g + dt * (lam * mu - self.fam.h(self.arc, self.Sseg, t, mu))
        return np.where(inside, val, np.inf), self.s[self.J0c] - theta * ds


def sweep(grid: SpaceTimeGrid, kernels: dict, stay_cost: dict, V0: np.ndarray,
          k_start: int = 0, k_end: int | None = None, keep: bool = True):
    """Forward DP from slice ``k_start`` to ``k_end``.

    ``stay_cost[v]`` holds ``dt * c_v(t_mid)`` per step. Returns
    ``(values, bp_arc, bp_pos)`` with one row per slice; ``bp_arc`` is the
    sorted-arc index of the departure chart, shifted by the number of arcs
    when a vertex is reached through the tail end (-1 for a vertex stay,
    -2 on the initial slice). Decode with :func:`decode_bp`.
    """
    k_end = grid.K if k_end is None else k_end
    n_rows = k_end - k_start + 1 if keep else 2
    values = np.empty((n_rows, grid.n_nodes))
    values[0] = V0
    bp_arc = np.full((n_rows, grid.n_nodes), -2, dtype=np.int32)
    bp_pos = np.full((n_rows, grid.n_nodes), np.nan)
    nv = len(grid.vertices)
    n_arcs = len(grid.arc_order)
    for k in range(k_start, k_end):
        r = k - k_start if keep else 0
        V = values[r]
        new, ba, bpos = values[r + 1], bp_arc[r + 1], bp_pos[r + 1]
        best_v = np.array([V[i] + stay_cost[v][k] for i, v in enumerate(grid.vertices)])
        ba[:nv] = -1
        bpos[:nv] = np.nan
        for a in grid.arc_order:
            g = grid.arcs[a]
            val, dep = kernels[a].step(V[g.nodes], k, endpoint_stay=False)
            new[g.nodes[1:-1]] = val[1:-1]
            ba[g.nodes[1:-1]] = g.index
            bpos[g.nodes[1:-1]] = dep[1:-1]
            for e, code in ((0, g.index), (-1, g.index + n_arcs)):
                vi = g.nodes[e]
                if val[e] < best_v[vi]:
                    best_v[vi], ba[vi], bpos[vi] = val[e], code, dep[e]
        new[:nv] = best_v
        if not keep:
            values[0], bp_arc[0], bp_pos[0] = values[1], bp_arc[1], bp_pos[1]
    return values, bp_arc, bp_pos


def decode_bp(grid: SpaceTimeGrid, code: int, node: int):
    """``(arc or None, arrival offset)`` for a backpointer code at ``node``."""
    if code == -1:
        return None, math.nan
    n_arcs = len(grid.arc_order)
    a = grid.arc_order[code % n_arcs]
    g = grid.arcs[a]
    if code >= n_arcs:
        return a, float(g.offsets[-1])
    if node < len(grid.vertices):
        return a, 0.0
    return a, float(grid.node_offset[node])


def point_step(grid: SpaceTimeGrid, kernels: dict, stay_cost: dict, V: np.ndarray, p, k: int):
    """Bellman minimum at an arbitrary point for the step ``k -> k+1``.

    Returns ``(value, arc or None, departure offset, arrival offset)``;
    ``arc=None`` is a vertex stay. Used to backtrack curves through
    off-grid points.
    """
    if p.vertex is not None:
        vi = grid.vertex_index[p.vertex]
        best = (V[vi] + stay_cost[p.vertex][k], None, math.nan, math.nan)
        for a in grid.arc_order:
            g = grid.arcs[a]
            if vi not in (g.nodes[0], g.nodes[-1]):
                continue
            val, dep = kernels[a].step(V[g.nodes], k, endpoint_stay=False)
            for e in (0, -1):
                if g.nodes[e] == vi and val[e] < best[0]:
                    best = (val[e], a, float(dep[e]), float(g.offsets[e]))
        return best
    kern = kernels[p.arc]
    g = grid.arcs[p.arc]
    W = V[g.nodes]
    s, dt = p.offset, grid.dt
    reach = kern.h * g.ds * (1 + 1e-12)
    t = grid.t_mid[k]
    lag = lambda x, lam: float(kern.ce.lagrangian(p.arc, np.array(x), np.array(lam), np.array(t)))  # noqa: E731
    best = (math.inf, p.arc, math.nan, s)
    j_in = np.nonzero(np.abs(g.offsets - s) <= reach)[0]
    for j in j_in:
        if np.isfinite(W[j]):
            v = W[j] + dt * lag(s, (s - g.offsets[j]) / dt)
            if v < best[0]:
                best = (v, p.arc, float(g.offsets[j]), s)
    if kern.controls == "nodes":
        return best
    lo, hi = s - kern.h * g.ds, s + kern.h * g.ds
    for j in range(1, len(g.offsets)):
        a, b = max(g.offsets[j - 1], lo), min(g.offsets[j], hi)
        if a >= b or not (np.isfinite(W[j]) and np.isfinite(W[j - 1])):
            continue
        slope = (W[j] - W[j - 1]) / (g.offsets[j] - g.offsets[j - 1])
        interp = lambda y: W[j - 1] + slope * (y - g.offsets[j - 1])  # noqa: E731
        for y in (a, b):  # clipped ends that are not nodes
            if y not in (g.offsets[j - 1], g.offsets[j]):
                v = interp(y) + dt * lag(s, (s - y) / dt)
                if v < best[0]:
                    best = (v, p.arc, float(y), s)
        lam = float(kern.fam.dh(p.arc, np.array(s), np.array(t), np.array(slope)))
        y = s - lam * dt
        if a < y < b:
            v = interp(y) + dt * (lam * slope - float(kern.fam.h(p.arc, np.array(s), np.array(t), np.array(slope))))
            if v < best[0]:
                best = (v, p.arc, float(y), s)
    return best
