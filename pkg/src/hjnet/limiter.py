"""Flux limiters ``c_x(t)``: maximal limiter, clamping, validation, Zeno criteria."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import bisect

from .expressions import compile_expression
from .legendre import ConjugateEvaluator, conjugate_envelope
from .netgraph import NetworkGraph

__all__ = [
    "FluxLimiter",
    "LimiterReport",
    "ZenoReport",
    "maximal_limiter",
    "clamp_limiter",
    "shifted_limiter",
    "user_limiter",
    "validate_limiter",
    "limiter_crossings",
    "zeno_criteria",
    "limiter_from_spec",
]

log = logging.getLogger(__name__)


@dataclass
class LimiterReport:
    fl1: float  # max |c|
    fl1_ok: bool
    fl2: float  # worst excess of the one-sided Lipschitz bound
    fl2_ok: bool
    fldef: float | None  # max (c - c̄); None when not checked
    fldef_ok: bool

    @property
    def passed(self) -> bool:
        return self.fl1_ok and self.fl2_ok and self.fldef_ok


class FluxLimiter:
    """Per-vertex time functions with FL1/FL2 constants.

    ``funcs`` maps vertex id to a vectorized callable of ``t``. Values on a
    time array are cached, so repeated solver sweeps evaluate each limiter once.
    """

    def __init__(self, net: NetworkGraph, funcs: Mapping[str, Callable], horizon: float,
                 provenance: str = "user", bound: float | None = None,
                 beta: float | None = None, eps: float | None = None):
        missing = set(net.vertices) - set(funcs)
        if missing:
            raise ValueError(f"flux limiter missing vertices {sorted(missing)}")
        if provenance not in ("user", "maximal", "clamped"):
            raise ValueError(f"bad provenance {provenance!r}")
        self.net = net
        self.funcs = dict(funcs)
        self.horizon = float(horizon)
        self.provenance = provenance
        self.bound = bound
        self.beta = beta
        self.eps = float(horizon) if eps is None else eps
        self._tables: dict = {}
        self.report: LimiterReport | None = None

    def __call__(self, vertex, t):
        return np.asarray(self.funcs[vertex](np.asarray(t, dtype=float)), dtype=float)

    def values(self, vertex, times) -> np.ndarray:
        times = np.ascontiguousarray(times, dtype=float)
        key = (vertex, times.shape, times.tobytes())
        out = self._tables.get(key)
        if out is None:
            out = np.broadcast_to(self(vertex, times), times.shape).astype(float)
            out.setflags(write=False)
            self._tables[key] = out
        return out

    def sample_constants(self, n: int = 257, safety: float = 1.5):
        """Fill in missing FL1/FL2 constants from a uniform time sample."""
        t = np.linspace(0.0, self.horizon, n)
        vals = np.array([self.values(v, t) for v in self.net.vertices])
        if self.bound is None:
            # same sample as validate_limiter, so the bound is consistent with it
            fine = np.linspace(0.0, self.horizon, 2 * n - 1)
            self.bound = float(max(np.abs(self.values(v, fine)).max() for v in self.net.vertices))
        if self.beta is None:
            # the bound holds for both orders of t1, t2, hence the absolute value
            q = np.abs(np.diff(vals, axis=1)) / (t[1] - t[0])
            self.beta = safety * float(q.max()) + 1e-12
        return self


def maximal_limiter(net: NetworkGraph, ce: ConjugateEvaluator, T: float | None = None) -> FluxLimiter:
    """``c̄_x(t) = min over incident arcs of L_γ(0, 0, t)`` (inverse arcs for tails)."""
    T = ce.fam.horizon if T is None else float(T)
    funcs = {}
    for v, inc in net.incidence.items():
        if not inc:
            raise ValueError(f"vertex {v!r} has empty incidence")

        def f(t, inc=tuple(inc)):
            t = np.asarray(t, dtype=float)
            vals = [ce.lagrangian(arc, np.zeros(t.shape), np.zeros(t.shape), t, reverse=orient < 0)
                    for arc, orient in inc]
            return np.min(vals, axis=0)

        funcs[v] = f
    env = ce.fam.envelopes
    # beta-hat recipe: alpha * |theta-hat(0)| + beta, theta-hat = Θ*
    theta_hat0 = float(conjugate_envelope(env.upper, np.array(0.0)))
    beta = env.alpha * abs(theta_hat0) + env.beta
    lim = FluxLimiter(net, funcs, T, provenance="maximal", beta=beta, eps=env.eps)
    return lim.sample_constants()


def clamp_limiter(c: FluxLimiter, cbar: FluxLimiter) -> FluxLimiter:
    """Pointwise ``min(c, c̄)``; FL1/FL2 are re-validated on the result."""
    if set(c.funcs) != set(cbar.funcs) or c.horizon != cbar.horizon:
        raise ValueError("limiters differ in vertex set or horizon")
    funcs = {v: (lambda t, f=c.funcs[v], g=cbar.funcs[v]: np.minimum(f(t), g(t))) for v in c.funcs}
    out = FluxLimiter(c.net, funcs, c.horizon, provenance="clamped", eps=min(c.eps, cbar.eps))
    out.sample_constants()
    out.report = validate_limiter(out)
    return out


def shifted_limiter(c: FluxLimiter, offset: float, provenance: str = "user") -> FluxLimiter:
    funcs = {v: (lambda t, f=c.funcs[v]: f(t) + offset) for v in c.funcs}
    return FluxLimiter(c.net, funcs, c.horizon, provenance=provenance, beta=c.beta, eps=c.eps).sample_constants()


def user_limiter(net: NetworkGraph, exprs: Mapping[str, object], horizon: float,
                 default: FluxLimiter | None = None) -> FluxLimiter:
    """Limiter from per-vertex expressions in ``t``; unlisted vertices use ``default``."""
    funcs = {}
    for v in net.vertices:
        if v in exprs:
            funcs[v] = compile_expression(exprs[v], ("t",))
        elif default is not None:
            funcs[v] = default.funcs[v]
        else:
            raise ValueError(f"no limiter for vertex {v!r}")
    return FluxLimiter(net, funcs, horizon, provenance="user").sample_constants()


def validate_limiter(c: FluxLimiter, cbar: FluxLimiter | None = None, n: int = 257,
                     tol: float = 1e-9) -> LimiterReport:
    """Sampled FL1, FL2 and (when ``cbar`` is given) ``c <= c̄``.

    Samples are a uniform grid plus its midpoints.
    """
    t = np.linspace(0.0, c.horizon, 2 * n - 1)
    vals = np.array([c.values(v, t) for v in c.net.vertices])
    fl1 = float(np.abs(vals).max())
    fl1_ok = c.bound is None or fl1 <= c.bound + tol
    gap = t[None, :] - t[:, None]  # t2 - t1 for t1 = row, t2 = col
    close = (np.abs(gap) < c.eps) & (gap != 0)
    beta = np.inf if c.beta is None else c.beta
    fl2 = -np.inf
    for row in vals:
        diff = row[:, None] - row[None, :]  # c(t1) - c(t2)
        ex = np.where(close, diff - beta * np.abs(gap), -np.inf)
        fl2 = max(fl2, float(ex.max()))
    fldef, fldef_ok = None, True
    if cbar is not None:
        bar = np.array([cbar.values(v, t) for v in c.net.vertices])
        fldef = float((vals - bar).max())
        fldef_ok = fldef <= tol
    return LimiterReport(fl1, fl1_ok, fl2, fl2 <= tol, fldef, fldef_ok)


def limiter_crossings(c: FluxLimiter, cbar: FluxLimiter, vertex: str, n: int = 1025,
                      xtol: float = 1e-9) -> list[float]:
    """Times where ``c_x - c̄_x`` changes sign, refined by bisection."""
    g = lambda t: float(c(vertex, t) - cbar(vertex, t))  # noqa: E731
    t = np.linspace(0.0, c.horizon, n)
    d = c.values(vertex, t) - cbar.values(vertex, t)
    out = []
    for i in np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]:
        out.append(bisect(g, t[i], t[i + 1], xtol=xtol))
    out += [float(x) for x in t[d == 0.0]]
    return sorted(out)


@dataclass
class ZenoReport:
    margin: float  # min_t (c̄_x(t) - c_x(t)); positive means strictly below maximal
    certificate: tuple[float, float] | None  # (delta, eps) box or None
    suggest_clamp: bool
    details: dict = field(default_factory=dict)


def zeno_criteria(net: NetworkGraph, ce: ConjugateEvaluator, c: FluxLimiter,
                  T: float | None = None, n_t: int = 65, n_s: int = 9, levels: int = 10,
                  tol: float = 1e-12) -> dict[str, ZenoReport]:
    """Per-vertex strict-gap margin and a (δ, ε) certificate box.

    The box certifies ``c_x(t) <= min L_γ(s, 0, r)`` over incident arcs,
    ``s in [0, δ]`` and ``r in [t - ε, t + ε] ∩ [0, T]`` at all sampled ``t``,
    searching ``δ = min_len 2^-k``, ``ε = T 2^-k`` for ``k = 1..levels``.
    The largest box (smallest ``k_δ + k_ε``, then largest δ) is reported.
    """
    T = c.horizon if T is None else float(T)
    cbar = maximal_limiter(net, ce, T)
    t = np.linspace(0.0, T, n_t)
    r = np.linspace(0.0, T, 4 * (n_t - 1) + 1)
    deltas = net.min_arc_length * 2.0 ** -np.arange(1, levels + 1)
    epss = T * 2.0 ** -np.arange(1, levels + 1)
    out = {}
    for v, inc in net.incidence.items():
        cv = c.values(v, t)
        margin = float((cbar.values(v, t) - cv).min())
        # zmin[kd][j]: min over arcs and s in [0, δ_kd] of L(s, 0, r_j)
        zmin = []
        for d in deltas:
            s = np.linspace(0.0, d, n_s)
            S, R = np.meshgrid(s, r, indexing="ij")
            vals = [ce.lagrangian(arc, S, np.zeros(S.shape), R, reverse=o < 0).min(axis=0) for arc, o in inc]
            zmin.append(np.min(vals, axis=0))
        best = None
        pairs = sorted(((kd + ke, -kd, kd, ke) for kd in range(levels) for ke in range(levels)))
        for _, _, kd, ke in pairs:
            e = epss[ke]
            window = np.abs(r[None, :] - t[:, None]) <= e + 1e-15
            floor = np.where(window, zmin[kd][None, :], np.inf).min(axis=1)
            if np.all(cv <= floor + tol):
                best = (float(deltas[kd]), float(e))
                break
        out[v] = ZenoReport(margin, best, margin < -tol)
        if margin < -tol:
            log.warning("limiter exceeds the maximal one at vertex %s (margin %.3g); clamp it", v, margin)
    return out


def limiter_from_spec(spec, net: NetworkGraph, ce: ConjugateEvaluator, T: float | None = None) -> FluxLimiter:
    """Scenario field: ``"maximal"``, ``{vertex: expr}``, ``{"maximal_offset": a}``,
    or ``{"clamp": <spec>}`` (clamped against the maximal limiter)."""
    T = ce.fam.horizon if T is None else float(T)
    cbar = maximal_limiter(net, ce, T)
    if spec in (None, "maximal"):
        return cbar
    if not isinstance(spec, dict):
        raise ValueError(f"bad flux_limiter spec {spec!r}")
    if "clamp" in spec:
        return clamp_limiter(limiter_from_spec(spec["clamp"], net, ce, T), cbar)
    if "maximal_offset" in spec:
        return shifted_limiter(cbar, float(spec["maximal_offset"]))
    return user_limiter(net, spec, T, default=cbar)
