"""Per-arc Hamiltonians with growth/regularity metadata and sampled checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .expressions import compile_expression
from .netgraph import NetworkGraph

__all__ = [
    "ArcHamiltonian",
    "Envelopes",
    "HamiltonianFamily",
    "DomainError",
    "quadratic_minus_potential",
    "power_p",
    "exponential",
    "builtin_family",
    "eval_h",
    "validate_assumptions",
    "AssumptionReport",
    "family_from_spec",
    "envelopes_from_spec",
]

DOMAIN_TOL = 1e-12


class DomainError(ValueError):
    """Evaluation requested outside ``[0, |γ|] x [0, T]``."""


@dataclass
class ArcHamiltonian:
    """``h(s, t, mu)`` on one native arc, vectorized over numpy arrays.

    ``dh`` (derivative in ``mu``) and ``lagrangian`` (closed-form conjugate)
    are optional; they speed up the solver and serve as test oracles.
    """

    h: Callable
    dh: Callable | None = None
    lagrangian: Callable | None = None
    time_dependent: bool = True
    kind: str = "custom"
    potential: Callable | None = field(default=None, repr=False)
    core: Callable | None = field(default=None, repr=False)  # |mu| -> kernel value


@dataclass
class Envelopes:
    """θ_T, Θ_T growth bounds and the time-Lipschitz triple (α_T, β_T, ε_T)."""

    lower: Callable
    upper: Callable
    alpha: float
    beta: float
    eps: float


def _as_potential(potential):
    if potential is None:
        return (lambda s, t: np.zeros(np.broadcast(s, t).shape)), False
    if callable(potential):
        names = getattr(potential, "names", None)
        return potential, (names is None or "t" in names)
    if isinstance(potential, str):
        f = compile_expression(potential, ("s", "t"))
        return f, "t" in f.names
    value = float(potential)
    return (lambda s, t: np.full(np.broadcast(s, t).shape, value)), False


def quadratic_minus_potential(potential=0.0, time_dependent: bool | None = None) -> ArcHamiltonian:
    """``H(s, t, mu) = mu**2 / 2 - ell(s, t)``."""
    ell, td = _as_potential(potential)

    def h(s, t, mu):
        return 0.5 * np.asarray(mu) ** 2 - ell(s, t)

    def lag(s, lam, t):
        return 0.5 * np.asarray(lam) ** 2 + ell(s, t)

    return ArcHamiltonian(
        h, dh=lambda s, t, mu: np.asarray(mu, dtype=float) + 0.0 * ell(s, t), lagrangian=lag,
        time_dependent=td if time_dependent is None else time_dependent,
        kind="quadratic_minus_potential", potential=ell, core=lambda r: 0.5 * r ** 2,
    )


def power_p(p: float, scale: float = 1.0, potential=0.0, time_dependent: bool | None = None) -> ArcHamiltonian:
    """``H = scale * |mu|**p / p - ell(s, t)`` with ``p > 1``."""
    if not p > 1:
        raise ValueError("power_p needs p > 1")
    if not scale > 0:
        raise ValueError("scale must be positive")
    ell, td = _as_potential(potential)
    q = p / (p - 1.0)

    def h(s, t, mu):
        return scale * np.abs(mu) ** p / p - ell(s, t)

    def dh(s, t, mu):
        mu = np.asarray(mu, dtype=float)
        return scale * np.sign(mu) * np.abs(mu) ** (p - 1) + 0.0 * ell(s, t)

    def lag(s, lam, t):
        return scale ** (1 - q) * np.abs(lam) ** q / q + ell(s, t)

    return ArcHamiltonian(
        h, dh=dh, lagrangian=lag, time_dependent=td if time_dependent is None else time_dependent,
        kind="power_p", potential=ell, core=lambda r: scale * r ** p / p,
    )


def exponential(scale: float = 1.0, potential=0.0, time_dependent: bool | None = None) -> ArcHamiltonian:
    """``H = scale * (cosh(mu) - 1) - ell(s, t)``."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    ell, td = _as_potential(potential)

    def h(s, t, mu):
        return scale * (np.cosh(mu) - 1.0) - ell(s, t)

    def dh(s, t, mu):
        return scale * np.sinh(mu) + 0.0 * ell(s, t)

    def lag(s, lam, t):
        x = np.asarray(lam, dtype=float) / scale
        return scale * (x * np.arcsinh(x) - np.sqrt(1.0 + x * x) + 1.0) + ell(s, t)

    return ArcHamiltonian(
        h, dh=dh, lagrangian=lag, time_dependent=td if time_dependent is None else time_dependent,
        kind="exponential", potential=ell, core=lambda r: scale * (np.cosh(r) - 1.0),
    )


class HamiltonianFamily:
    """Collection ``{H_γ}`` indexed by the arcs of ``net`` on the horizon ``[0, T]``.

    Inverse arcs are never stored: queries with ``reverse=True`` are routed
    through ``H_γ̃(s, t, mu) = H_γ(|γ| - s, t, -mu)``.
    """

    def __init__(self, net: NetworkGraph, arcs: Mapping[str, ArcHamiltonian], horizon: float,
                 envelopes: Envelopes):
        if not horizon > 0:
            raise ValueError("horizon T must be positive")
        missing = set(net.arcs) - set(arcs)
        if missing:
            raise ValueError(f"no Hamiltonian for arcs {sorted(missing)}")
        self.net = net
        self.arcs = dict(arcs)
        self.horizon = float(horizon)
        self.envelopes = envelopes

    @property
    def time_dependent(self) -> bool:
        return any(a.time_dependent for a in self.arcs.values())

    def _check(self, arc, s, t):
        L = self.net.arcs[arc].length
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(s < -DOMAIN_TOL) or np.any(s > L + DOMAIN_TOL * max(1.0, L)):
            raise DomainError(f"s outside [0, {L}] on arc {arc!r}")
        if np.any(t < -DOMAIN_TOL) or np.any(t > self.horizon * (1 + DOMAIN_TOL)):
            raise DomainError(f"t outside [0, {self.horizon}]")
        return np.clip(s, 0.0, L), np.clip(t, 0.0, self.horizon)

    def h(self, arc, s, t, mu, reverse=False):
        s, t = self._check(arc, s, t)
        mu = np.asarray(mu, dtype=float)
        if reverse:
            s, mu = self.net.arcs[arc].length - s, -mu
        return self.arcs[arc].h(s, t, mu)

    def dh(self, arc, s, t, mu, reverse=False, step=1e-6):
        """Derivative in ``mu`` (analytic when available, else central difference)."""
        s, t = self._check(arc, s, t)
        mu = np.asarray(mu, dtype=float)
        sign = 1.0
        if reverse:
            s, mu, sign = self.net.arcs[arc].length - s, -mu, -1.0
        a = self.arcs[arc]
        if a.dh is not None:
            return sign * a.dh(s, t, mu)
        e = step * (1.0 + np.abs(mu))
        return sign * (a.h(s, t, mu + e) - a.h(s, t, mu - e)) / (2 * e)


def eval_h(fam: HamiltonianFamily, arc: str, s, t, mu, reverse: bool = False):
    return fam.h(arc, s, t, mu, reverse=reverse)


def _sample_potential(fam_arcs, net, horizon, n):
    """Extremes and time-Lipschitz estimate of every builtin potential."""
    lo, hi, lip = np.inf, -np.inf, 0.0
    t = np.linspace(0.0, horizon, n)
    for arc_id, ah in fam_arcs.items():
        s = np.linspace(0.0, net.arcs[arc_id].length, n)
        vals = ah.potential(s[:, None], t[None, :])
        lo, hi = min(lo, vals.min()), max(hi, vals.max())
        if n > 1:
            lip = max(lip, np.abs(np.diff(vals, axis=1)).max() / (t[1] - t[0]))
    return lo, hi, lip


def builtin_family(net: NetworkGraph, horizon: float, arcs, n_sample: int = 17,
                   safety: float = 1.5, envelopes: Envelopes | None = None) -> HamiltonianFamily:
    """Family of builtin Hamiltonians with derived envelopes.

    ``arcs`` is either one :class:`ArcHamiltonian` applied to every arc or a
    mapping arc id -> ArcHamiltonian. Envelopes come from the kernel ``core``
    shifted by the sampled extremes of the potentials; β_T is the sampled
    time-difference quotient of the potentials times ``safety``.
    """
    if isinstance(arcs, ArcHamiltonian):
        arcs = {a: arcs for a in net.arcs}
    arcs = dict(arcs)
    if envelopes is None:
        if any(a.core is None for a in arcs.values()):
            raise ValueError("custom Hamiltonians must declare their envelopes")
        lo, hi, lip = _sample_potential(arcs, net, horizon, n_sample)
        cores = [a.core for a in {id(a): a for a in arcs.values()}.values()]

        def lower(r):
            r = np.asarray(r, dtype=float)
            return np.min([c(r) for c in cores], axis=0) - hi

        def upper(r):
            r = np.asarray(r, dtype=float)
            return np.max([c(r) for c in cores], axis=0) - lo

        envelopes = Envelopes(lower, upper, alpha=0.0, beta=safety * lip + 1e-12, eps=float(horizon))
    return HamiltonianFamily(net, arcs, horizon, envelopes)


# -- sampled validation ------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    worst: float
    where: dict
    passed: bool


@dataclass
class AssumptionReport:
    checks: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]


def _record(checks, name, excess, grids, tol, arc=None):
    flat = int(np.argmax(excess))
    idx = np.unravel_index(flat, excess.shape)
    worst = float(excess[idx])
    where = {k: float(g[i]) for (k, g), i in zip(grids, idx)}
    where["arc"] = arc
    prev = checks.get(name)
    if prev is None or worst > prev.worst:
        checks[name] = CheckResult(name, worst, where, worst <= tol)


def validate_assumptions(fam: HamiltonianFamily, n: int = 33, mu_max: float = 5.0,
                         tol: float = 1e-9) -> AssumptionReport:
    """Sampled falsification of H1-H4 on an ``n``-point lattice per axis.

    Each check stores its worst excess over the permitted bound and the
    lattice point where it occurs. H1 compares moduli of continuity at
    spacing ``h`` and ``h/2``: a modulus that fails to shrink signals a jump.
    """
    env = fam.envelopes
    T = fam.horizon
    checks: dict[str, CheckResult] = {}
    t = np.linspace(0.0, T, n)
    mu = np.linspace(-mu_max, mu_max, n)
    dt = t[1] - t[0]
    for arc_id, arc in fam.net.arcs.items():
        s = np.linspace(0.0, arc.length, n)
        S, Tt, M = np.meshgrid(s, t, mu, indexing="ij")
        H = fam.h(arc_id, S, Tt, M)
        grids = [("s", s), ("t", t), ("mu", mu)]

        # H1: modulus at h versus h/2 along each axis
        tf = np.linspace(0.0, T, 2 * n - 1)
        sf = np.linspace(0.0, arc.length, 2 * n - 1)
        mf = np.linspace(-mu_max, mu_max, 2 * n - 1)
        Hf = fam.h(arc_id, *np.meshgrid(sf, tf, mf, indexing="ij"))
        worst_ratio, where = 0.0, {}
        for ax, name in enumerate(("s", "t", "mu")):
            coarse = np.abs(np.diff(Hf[(slice(None, None, 2),) * 3], axis=ax)).max()
            fine = np.abs(np.diff(Hf, axis=ax)).max()
            # a continuous map halves (roughly) its modulus; a jump keeps it
            excess = fine - 0.75 * coarse if fine > 1e3 * tol else 0.0
            if excess > worst_ratio:
                worst_ratio, where = excess, {"axis": name, "arc": arc_id}
        prev = checks.get("H1")
        if prev is None or worst_ratio > prev.worst:
            checks["H1"] = CheckResult("H1", float(worst_ratio), where, worst_ratio <= tol)

        # H2: midpoint convexity in mu over all lattice pairs
        mid = 0.5 * (mu[:, None] + mu[None, :])
        Hmid = fam.h(arc_id, s[:, None, None, None], t[None, :, None, None], mid[None, None])
        avg = 0.5 * (H[:, :, :, None] + H[:, :, None, :])
        _record(checks, "H2", Hmid - avg, grids + [("mu2", mu)], tol, arc_id)

        # H3: envelopes
        r = np.abs(M)
        _record(checks, "H3_lower", env.lower(r) - H, grids, tol, arc_id)
        _record(checks, "H3_upper", H - env.upper(r), grids, tol, arc_id)

        # H4: one-sided time-Lipschitz bound on pairs closer than eps
        H1_ = H[:, :, None, :]
        H2_ = H[:, None, :, :]
        gap = np.abs(t[None, :] - t[:, None])
        close = (gap < env.eps) & (gap > 0)
        bound = (env.alpha * H2_ / (1.0 + np.abs(mu)) + env.beta) * gap[None, :, :, None]
        excess = np.where(close[None, :, :, None], H1_ - H2_ - bound, -np.inf)
        _record(checks, "H4", excess, [("s", s), ("t1", t), ("t2", t), ("mu", mu)], tol * (1 + dt), arc_id)
    return AssumptionReport(checks)


# -- scenario parsing ----------------------------------------------------------

_BUILTINS = {
    "quadratic_minus_potential": quadratic_minus_potential,
    "power_p": power_p,
    "exponential": exponential,
}


def _arc_from_spec(spec: Mapping) -> ArcHamiltonian:
    kind = spec.get("kind", "quadratic_minus_potential")
    if kind not in _BUILTINS:
        raise ValueError(f"unknown Hamiltonian kind {kind!r}")
    return _BUILTINS[kind](**dict(spec.get("params", {})))


def envelopes_from_spec(spec: Mapping, horizon: float) -> Envelopes:
    """``{"lower": expr in r, "upper": expr in r, "alpha", "beta", "eps"}``."""
    lo = compile_expression(spec["lower"], ("r",))
    up = compile_expression(spec["upper"], ("r",))
    return Envelopes(lambda r: lo(np.asarray(r, dtype=float)), lambda r: up(np.asarray(r, dtype=float)),
                     float(spec.get("alpha", 0.0)), float(spec.get("beta", 0.0)),
                     float(spec.get("eps", horizon)))


def family_from_spec(net: NetworkGraph, horizon: float, spec) -> HamiltonianFamily:
    """Family from the scenario field.

    ``spec`` is ``{"default": {...}, "arcs": [{"arc_id", "kind", "params"}, ...],
    "envelopes": {...}}``; a bare ``{"kind", "params"}`` applies to every arc.
    Declared envelopes replace the derived ones.
    """
    spec = dict(spec or {})
    if "kind" in spec:
        spec = {"default": spec}
    default = spec.get("default", {"kind": "quadratic_minus_potential"})
    per_arc = {str(e["arc_id"]): e for e in spec.get("arcs", [])}
    unknown = set(per_arc) - set(net.arcs)
    if unknown:
        raise ValueError(f"Hamiltonian spec references unknown arcs {sorted(unknown)}")
    shared = _arc_from_spec(default)
    arcs = {a: (_arc_from_spec(per_arc[a]) if a in per_arc else shared) for a in net.arcs}
    env_spec = spec.get("envelopes") or default.get("envelopes")
    env = envelopes_from_spec(env_spec, horizon) if env_spec else None
    return builtin_family(net, horizon, arcs, envelopes=env)
