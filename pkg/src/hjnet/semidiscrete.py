"""Per-arc operator ``F_gamma``, vertex operator ``F_x``, the running-minimum
operator ``G`` and the vertex fixed-point residual ``u(x, t) - G[F_x[u], c_x](t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernel import ArcKernel, SpaceTimeGrid

__all__ = [
    "BoundaryTrace",
    "GInput",
    "f_gamma",
    "f_x",
    "g_operator",
    "g_operator_direct",
    "DiscResidual",
    "disc_residual",
    "OrderingReport",
    "ordering_check",
]


@dataclass
class BoundaryTrace:
    """Vertex time series ``u(x, t_k)`` plus the initial slice on all nodes."""

    vertex: dict  # vertex id -> array (K+1,)
    initial: np.ndarray  # (n_nodes,)

    @classmethod
    def from_field(cls, grid: SpaceTimeGrid, values: np.ndarray) -> "BoundaryTrace":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.K + 1, grid.n_nodes):
            raise ValueError(f"field shape {values.shape} does not match the grid")
        return cls({v: values[:, i].copy() for i, v in enumerate(grid.vertices)}, values[0].copy())

    def validate(self, grid: SpaceTimeGrid):
        if self.initial.shape != (grid.n_nodes,) or not np.all(np.isfinite(self.initial)):
            raise ValueError("malformed trace: initial slice")
        for i, v in enumerate(grid.vertices):
            tr = self.vertex.get(v)
            if tr is None or tr.shape != (grid.K + 1,) or not np.all(np.isfinite(tr)):
                raise ValueError(f"malformed trace at vertex {v!r}")
            if tr[0] != self.initial[i]:
                raise ValueError(f"trace at vertex {v!r} disagrees with the initial slice")

    def shifted(self, a: float) -> "BoundaryTrace":
        return BoundaryTrace({v: tr + a for v, tr in self.vertex.items()}, self.initial + a)


@dataclass
class GInput:
    psi: np.ndarray
    c: np.ndarray
    dt: float

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.psi.shape != self.c.shape or self.psi.ndim != 1:
            raise ValueError("psi and c must be 1-D series of equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def _kernel(grid, ce, arc, controls, kernels):
    if kernels is not None and arc in kernels:
        return kernels[arc]
    k = ArcKernel(grid, ce, arc, controls)
    if kernels is not None:
        kernels[arc] = k
    return k


def f_gamma(trace: BoundaryTrace, arc: str, grid: SpaceTimeGrid, ce, reverse: bool = False,
            controls: str = "continuous", kernels: dict | None = None) -> np.ndarray:
    """Maximal subsolution on one (possibly inverse) arc below the traces.

    Data enter on the initial slice and on the far end ``s = |gamma|`` of the
    oriented arc; the far-end value is injected after each Bellman slice.
    Returns a ``(K+1, N+1)`` field whose column 0 is the ``s = 0`` line.
    """
    g = grid.arcs[arc]
    kern = _kernel(grid, ce, arc, controls, kernels)
    a = grid.net.arcs[arc]
    far_vertex = a.head if reverse else a.tail
    far = trace.vertex[far_vertex]
    inj = 0 if reverse else -1
    out = np.empty((grid.K + 1, len(g.offsets)))
    W = trace.initial[g.nodes].astype(float)
    out[0] = W
    for k in range(grid.K):
        W, _ = kern.step(W, k, endpoint_stay=True)
        W[inj] = min(W[inj], far[k + 1])
        out[k + 1] = W
    return out[:, ::-1] if reverse else out


def f_x(trace: BoundaryTrace, vertex: str, grid: SpaceTimeGrid, ce, controls: str = "continuous",
        kernels: dict | None = None) -> np.ndarray:
    """Pointwise minimum of the ``s = 0`` lines of ``F_gamma`` over the arcs at ``vertex``."""
    inc = grid.net.incidence.get(vertex)
    if not inc:
        raise ValueError(f"vertex {vertex!r} has empty incidence")
    lines = [f_gamma(trace, arc, grid, ce, reverse=o < 0, controls=controls, kernels=kernels)[:, 0]
             for arc, o in inc]
    return np.min(lines, axis=0)


def _increments(c, dt):
    return 0.5 * dt * (c[:-1] + c[1:])


def g_operator(gin: GInput) -> np.ndarray:
    """``G[psi, c](t_k) = min_{r <= t_k} {psi(r) + int_r^{t_k} c}`` by forward recurrence.

    The integral is the trapezoid rule on the grid.
    """
    inc = _increments(gin.c, gin.dt)
    G = np.empty_like(gin.psi)
    G[0] = gin.psi[0]
    for k in range(len(inc)):
        G[k + 1] = min(gin.psi[k + 1], G[k] + inc[k])
    return G


def g_operator_direct(gin: GInput) -> np.ndarray:
    """O(K^2) minimization over every start time, sums accumulated left to right."""
    inc = _increments(gin.c, gin.dt)
    K = len(gin.psi)
    G = np.empty(K)
    for k in range(K):
        best = gin.psi[k]
        for r in range(k):
            acc = gin.psi[r]
            for j in range(r, k):
                acc = acc + inc[j]
            best = min(best, acc)
        G[k] = best
    return G


@dataclass
class DiscResidual:
    max: float
    signed_max: float  # max of u - G[F_x[u], c_x]
    signed_min: float
    per_vertex: dict


def disc_residual(values: np.ndarray, limiter, grid: SpaceTimeGrid, ce, controls: str = "continuous",
                  kernels: dict | None = None) -> DiscResidual:
    """``max |u(x, t_k) - G[F_x[u], c_x](t_k)|`` over vertices and times."""
    trace = BoundaryTrace.from_field(grid, values)
    kernels = {} if kernels is None else kernels
    per = {}
    for i, v in enumerate(grid.vertices):
        psi = f_x(trace, v, grid, ce, controls, kernels)
        G = g_operator(GInput(psi, limiter.values(v, grid.t), grid.dt))
        per[v] = values[:, i] - G
    diffs = np.concatenate(list(per.values()))
    return DiscResidual(float(np.abs(diffs).max()), float(diffs.max()), float(diffs.min()), per)


@dataclass
class OrderingReport:
    worst: float  # max (w - v); <= tol means ordered
    violations: int
    tol: float
    w_subsolution: bool | None = None
    v_supersolution: bool | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def ordering_check(w: np.ndarray, v: np.ndarray, grid: SpaceTimeGrid, tol: float = 0.0,
                   limiter=None, ce=None) -> OrderingReport:
    """Pointwise ``w <= v + tol`` on the full grid.

    With ``limiter`` and ``ce`` the residual signs are also classified:
    ``w`` counts as a subsolution when ``u - G[F_x[u]] <= 10 tol(grid)`` and
    ``v`` as a supersolution when it is ``>= -10 tol(grid)``.
    """
    w, v = np.asarray(w), np.asarray(v)
    if w.shape != v.shape:
        raise ValueError("fields differ in shape")
    if np.any(w[0] > v[0] + tol):
        raise ValueError("initial slices are not ordered")
    diff = w - v
    rep = OrderingReport(float(diff.max()), int(np.count_nonzero(diff > tol)), tol)
    if limiter is not None and ce is not None:
        margin = 10 * grid.tol()
        rep.w_subsolution = disc_residual(w, limiter, grid, ce).signed_max <= margin
        rep.v_supersolution = disc_residual(v, limiter, grid, ce).signed_min >= -margin
    return rep
