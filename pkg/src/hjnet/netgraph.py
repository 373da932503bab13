"""Embedded networks: arcs, vertices, incidence and the geodesic metric.

Arcs are stored in their native orientation and parametrized by arc length
on ``[0, length]``. The inverse arc is never materialized; it is addressed by
passing ``reverse=True`` (offset ``s`` on the inverse arc is offset
``length - s`` on the native one).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

__all__ = [
    "Arc",
    "NetPoint",
    "NetworkGraph",
    "ValidationReport",
    "DistanceUndefinedError",
    "validate_network",
    "geodesic_distance",
    "geodesic_path",
    "load_network",
    "network_from_dict",
    "star_network",
    "path_network",
]

ENDPOINT_TOL = 1e-12


class DistanceUndefinedError(ValueError):
    """Raised when two points lie in different connected components."""


@dataclass(frozen=True)
class Arc:
    id: str
    length: float
    head: str
    tail: str
    geometry: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False, repr=False
    )

    @property
    def is_loop(self) -> bool:
        return self.head == self.tail

    def endpoint(self, at_head: bool) -> str:
        return self.head if at_head else self.tail


@dataclass(frozen=True)
class NetPoint:
    """A point of the network given as an offset along a native arc.

    Points at an arc endpoint carry the vertex id in ``vertex`` and compare
    equal to every other representation of that vertex.
    """

    arc: str
    offset: float
    vertex: str | None = None

    def _key(self):
        return ("v", self.vertex) if self.vertex is not None else ("a", self.arc, self.offset)

    def __eq__(self, other):
        if not isinstance(other, NetPoint):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self):
        return "valid" if self.valid else "; ".join(self.violations)


class NetworkGraph:
    """Finite connected network of arc-length parametrized arcs.

    Parameters
    ----------
    vertices : mapping of vertex id to coordinates (``None`` allowed).
    arcs : sequence of :class:`Arc`.
    min_arc_length : declared lower bound on arc lengths; defaults to the
        smallest arc length.
    """

    def __init__(self, vertices, arcs: Sequence[Arc], min_arc_length: float | None = None):
        self.vertices: dict[str, np.ndarray | None] = {
            str(k): (None if v is None else np.asarray(v, dtype=float)) for k, v in dict(vertices).items()
        }
        self.arcs: dict[str, Arc] = {}
        for a in arcs:
            if a.id in self.arcs:
                raise ValueError(f"duplicate arc id {a.id!r}")
            for v in (a.head, a.tail):
                if v not in self.vertices:
                    raise ValueError(f"arc {a.id!r} references unknown vertex {v!r}")
            self.arcs[a.id] = a
        lengths = [a.length for a in self.arcs.values()]
        self.min_arc_length = float(min_arc_length if min_arc_length is not None else min(lengths, default=0.0))
        # incidence lists (arc id, orientation): +1 when the vertex is the head
        # (s = 0 of the native arc), -1 when it is the tail. Loops appear twice.
        self.incidence: dict[str, list[tuple[str, int]]] = {v: [] for v in self.vertices}
        for a in self.arcs.values():
            self.incidence[a.head].append((a.id, +1))
            self.incidence[a.tail].append((a.id, -1))
        self._vindex = {v: i for i, v in enumerate(self.vertices)}
        self._vdist = None
        self._vpred = None

    # -- points -----------------------------------------------------------
    def point(self, arc: str, offset: float, reverse: bool = False) -> NetPoint:
        a = self.arcs[arc]
        s = float(offset)
        if reverse:
            s = a.length - s
        if s < -ENDPOINT_TOL * max(1.0, a.length) or s > a.length * (1 + ENDPOINT_TOL) + ENDPOINT_TOL:
            raise ValueError(f"offset {offset} outside arc {arc!r} of length {a.length}")
        s = min(max(s, 0.0), a.length)
        if abs(s) <= ENDPOINT_TOL * max(1.0, a.length):
            return NetPoint(arc, 0.0, a.head)
        if abs(s - a.length) <= ENDPOINT_TOL * max(1.0, a.length):
            return NetPoint(arc, a.length, a.tail)
        return NetPoint(arc, s, None)

    def vertex_point(self, vertex: str) -> NetPoint:
        if not self.incidence.get(vertex):
            raise ValueError(f"vertex {vertex!r} has no incident arc")
        arc, orient = self.incidence[vertex][0]
        return NetPoint(arc, 0.0 if orient > 0 else self.arcs[arc].length, vertex)

    def coords(self, p: NetPoint) -> np.ndarray | None:
        if p.vertex is not None:
            return self.vertices[p.vertex]
        g = self.arcs[p.arc].geometry
        return None if g is None else np.asarray(g(np.asarray(p.offset)), dtype=float)

    # -- metric -----------------------------------------------------------
    def _vertex_metric(self):
        if self._vdist is None:
            n = len(self.vertices)
            rows, cols, w = [], [], []
            for a in self.arcs.values():
                if a.is_loop:
                    continue
                i, j = self._vindex[a.head], self._vindex[a.tail]
                rows += [i, j]
                cols += [j, i]
                w += [a.length, a.length]
            # keep the shortest of parallel arcs: csr would sum duplicates
            best: dict[tuple[int, int], float] = {}
            for r, c, x in zip(rows, cols, w):
                best[(r, c)] = min(best.get((r, c), np.inf), x)
            if best:
                rc = np.array(list(best.keys()))
                m = csr_matrix((list(best.values()), (rc[:, 0], rc[:, 1])), shape=(n, n))
            else:
                m = csr_matrix((n, n))
            self._vdist, self._vpred = dijkstra(m, directed=False, return_predecessors=True)
        return self._vdist, self._vpred

    def vertex_distance(self, u: str, v: str) -> float:
        d, _ = self._vertex_metric()
        return float(d[self._vindex[u], self._vindex[v]])

    def _ends(self, p: NetPoint):
        """(vertex, distance from p) pairs through which p leaves its arc."""
        return [(v, dist) for v, dist, _ in self._exits(p)]

    def _exits(self, p: NetPoint):
        """As ``_ends`` plus the arc offset of the exit; loops need the offset, not the vertex."""
        if p.vertex is not None:
            return [(p.vertex, 0.0, None)]
        a = self.arcs[p.arc]
        return [(a.head, p.offset, 0.0), (a.tail, a.length - p.offset, a.length)]

    def distance(self, a: NetPoint, b: NetPoint) -> float:
        return self._distance_and_route(a, b)[0]

    def _distance_and_route(self, a: NetPoint, b: NetPoint):
        if a == b:
            return 0.0, None
        d, _ = self._vertex_metric()
        best, route = np.inf, None
        if a.vertex is None and b.vertex is None and a.arc == b.arc:
            best, route = abs(a.offset - b.offset), ("direct",)
        for va, da, sa in self._exits(a):
            for vb, db, sb in self._exits(b):
                cand = da + d[self._vindex[va], self._vindex[vb]] + db
                if cand < best:
                    best, route = cand, ("via", va, vb, sa, sb)
        if not np.isfinite(best):
            raise DistanceUndefinedError(f"{a} and {b} are in different components")
        return float(best), route

    def distances_to(self, p: NetPoint, arc: str, offsets: np.ndarray) -> np.ndarray:
        """Vectorized d_Γ(p, (arc, s)) for an array of offsets on one arc."""
        offsets = np.asarray(offsets, dtype=float)
        a = self.arcs[arc]
        d, _ = self._vertex_metric()
        out = np.full(offsets.shape, np.inf)
        if p.vertex is None and p.arc == arc:
            out = np.abs(offsets - p.offset)
        for vp, dp in self._ends(p):
            ip = self._vindex[vp]
            out = np.minimum(out, dp + d[ip, self._vindex[a.head]] + offsets)
            out = np.minimum(out, dp + d[ip, self._vindex[a.tail]] + (a.length - offsets))
        return out

    def vertex_path(self, u: str, v: str) -> list[str]:
        _, pred = self._vertex_metric()
        names = list(self.vertices)
        i, j = self._vindex[u], self._vindex[v]
        seq = [j]
        while seq[-1] != i:
            k = pred[i, seq[-1]]
            if k < 0:
                raise DistanceUndefinedError(f"{u} and {v} are in different components")
            seq.append(k)
        return [names[k] for k in reversed(seq)]

    def shortest_arc_between(self, u: str, v: str) -> tuple[str, int]:
        """Shortest non-loop arc joining ``u`` to ``v`` and its orientation."""
        cands = [(self.arcs[a].length, a, o) for a, o in self.incidence[u]
                 if not self.arcs[a].is_loop and self.arcs[a].endpoint(o < 0) == v]
        length, arc, orient = min(cands)
        return arc, orient

    def is_connected(self) -> bool:
        if not self.vertices:
            return True
        start = next(iter(self.vertices))
        seen, queue = {start}, deque([start])
        while queue:
            x = queue.popleft()
            for arc, orient in self.incidence[x]:
                y = self.arcs[arc].endpoint(orient < 0)
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        return len(seen) == len(self.vertices)

    def __repr__(self):
        return f"NetworkGraph({len(self.vertices)} vertices, {len(self.arcs)} arcs)"


def validate_network(g: NetworkGraph, n_samples: int = 17, tol: float = 1e-9) -> ValidationReport:
    """Check lengths (Γ1), local finiteness (Γ2), connectedness and geometry."""
    out = []
    for a in g.arcs.values():
        if not a.length > 0:
            out.append(f"Γ1: arc {a.id!r} has non-positive length {a.length}")
        elif a.length < g.min_arc_length:
            out.append(f"Γ1: arc {a.id!r} shorter than min_arc_length {g.min_arc_length}")
    if not g.min_arc_length > 0:
        out.append("Γ1: min_arc_length must be positive")
    for v, inc in g.incidence.items():
        if not inc:
            out.append(f"Γ2: vertex {v!r} has no incident arc")
    if not g.is_connected():
        out.append("connectedness: network has more than one component")
    for a in g.arcs.values():
        if a.geometry is None or not a.length > 0:
            continue
        s = np.linspace(0.0, a.length, n_samples)
        pts = np.array([np.asarray(a.geometry(x), dtype=float) for x in s])
        chord = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        gap = chord - np.abs(s[:, None] - s[None, :])
        if gap.max() > tol * max(1.0, a.length):
            out.append(f"unit-speed: arc {a.id!r} moves faster than arc length (excess {gap.max():.3g})")
        for end, v in ((pts[0], a.head), (pts[-1], a.tail)):
            c = g.vertices[v]
            if c is not None and np.linalg.norm(end - c) > 1e-9 * max(1.0, a.length):
                out.append(f"unit-speed: arc {a.id!r} endpoint does not match vertex {v!r}")
    return ValidationReport(out)


def geodesic_distance(g: NetworkGraph, a: NetPoint, b: NetPoint) -> float:
    return g.distance(a, b)


@dataclass(frozen=True)
class Segment:
    arc: str
    s_from: float
    s_to: float

    @property
    def length(self) -> float:
        return abs(self.s_to - self.s_from)


def geodesic_path(g: NetworkGraph, a: NetPoint, b: NetPoint) -> list[Segment]:
    """Sequence of along-arc segments realizing ``d_Γ(a, b)``."""
    dist, route = g._distance_and_route(a, b)
    if route is None:
        return []
    if route[0] == "direct":
        return [Segment(a.arc, a.offset, b.offset)]
    _, va, vb, sa, sb = route
    segs = []
    if a.vertex is None:
        segs.append(Segment(a.arc, a.offset, sa))
    verts = g.vertex_path(va, vb)
    for u, v in zip(verts[:-1], verts[1:]):
        arc_id, orient = g.shortest_arc_between(u, v)
        L = g.arcs[arc_id].length
        segs.append(Segment(arc_id, 0.0, L) if orient > 0 else Segment(arc_id, L, 0.0))
    if b.vertex is None:
        segs.append(Segment(b.arc, sb, b.offset))
    return segs


# -- construction helpers ---------------------------------------------------

def _polyline_geometry(points: np.ndarray):
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])

    def geom(s):
        s = np.asarray(s, dtype=float)
        return np.stack([np.interp(s, cum, pts[:, k]) for k in range(pts.shape[1])], axis=-1)

    return geom, float(cum[-1])


def network_from_dict(spec: dict) -> NetworkGraph:
    """Build a network from the JSON network description.

    Geometry may be ``{"polyline": [[x, y], ...]}`` (reparametrized by arc
    length), ``"segment"`` (straight line between the vertex coordinates) or
    absent, in which case ``length`` is required.
    """
    vertices = {str(v["id"]): v.get("coords") for v in spec["vertices"]}
    arcs = []
    for a in spec["arcs"]:
        head, tail = str(a["head"]), str(a["tail"])
        geom, length = None, a.get("length")
        gspec = a.get("geometry")
        if isinstance(gspec, dict) and "polyline" in gspec:
            pts = np.asarray(gspec["polyline"], dtype=float)
            geom, plen = _polyline_geometry(pts)
            length = plen if length is None else float(length)
        elif gspec == "segment":
            ph, pt = vertices[head], vertices[tail]
            if ph is None or pt is None:
                raise ValueError(f"segment geometry on arc {a['id']!r} needs vertex coordinates")
            geom, plen = _polyline_geometry(np.array([ph, pt]))
            length = plen if length is None else float(length)
        elif gspec is not None:
            raise ValueError(f"unknown geometry {gspec!r} on arc {a['id']!r}")
        if length is None:
            raise ValueError(f"arc {a['id']!r} needs a length or a geometry")
        arcs.append(Arc(str(a["id"]), float(length), head, tail, geom))
    return NetworkGraph(vertices, arcs, spec.get("min_arc_length"))


def load_network(path) -> NetworkGraph:
    return network_from_dict(json.loads(Path(path).read_text()))


def star_network(n_arcs: int = 3, length: float = 1.0) -> NetworkGraph:
    """Star with center ``"c"`` and leaves ``"l0".."l{n-1}"``; arcs point outwards."""
    vertices = {"c": None}
    arcs = []
    for k in range(n_arcs):
        vertices[f"l{k}"] = None
        arcs.append(Arc(f"a{k}", float(length), "c", f"l{k}"))
    return NetworkGraph(vertices, arcs)


def path_network(lengths: Sequence[float]) -> NetworkGraph:
    """Chain of arcs ``e0, e1, ...`` through vertices ``v0, v1, ...``."""
    vertices = {f"v{k}": None for k in range(len(lengths) + 1)}
    arcs = [Arc(f"e{k}", float(L), f"v{k}", f"v{k + 1}") for k, L in enumerate(lengths)]
    return NetworkGraph(vertices, arcs)
