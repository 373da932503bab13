"""Numerical Legendre-Fenchel conjugation ``L(s, lam, t) = max_mu {lam*mu - H(s, t, mu)}``.

The inner maximization is a vectorized golden-section search on a bracket
that is expanded until it provably contains the maximizer. Concavity of the
objective gives a certified optimality gap from three sample points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .hamiltonian import HamiltonianFamily

__all__ = [
    "BracketError",
    "ArgmaxRecord",
    "ConjugateEvaluator",
    "maximize_concave",
    "conjugate",
    "conjugate_reversed",
    "argmin_selection",
    "conjugate_envelope",
    "reconjugate",
]

INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


class BracketError(RuntimeError):
    """The maximizer escaped every bracket up to the hard cap."""


@dataclass
class ArgmaxRecord:
    mu: np.ndarray
    gap: np.ndarray


def _bracket(f, center, r0, cap):
    """Expand ``[center - R, center + R]`` until the concave ``f`` turns down at both ends."""
    R = np.broadcast_to(np.asarray(r0, dtype=float), np.shape(center)).copy()
    f0 = f(center)
    while True:
        up = (f(center + R) > f(center + 0.5 * R)) | (f(center - R) > f(center - 0.5 * R))
        # also require the ends to sit below the center value
        up |= (f(center + R) > f0) | (f(center - R) > f0)
        if not np.any(up):
            return center - R, center + R
        if np.any(R[up] > cap):
            raise BracketError(f"maximizer not bracketed within |x| <= {cap:g}; check the growth envelopes")
        R = np.where(up, 2.0 * R, R)


def maximize_concave(f, lo, hi, tol=1e-10, max_iter=200):
    """Golden-section maximization of a concave ``f`` on ``[lo, hi]``, elementwise.

    Returns ``(x, fx, gap)`` where ``gap`` bounds ``max f - fx`` under
    concavity, using secant slopes at the final bracket.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    gap = np.full(a.shape, np.inf)
    for _ in range(max_iter):
        left = fc >= fd  # keep [a, d]
        a, b = np.where(left, a, c), np.where(left, d, b)
        new_c = np.where(left, b - INVPHI * (b - a), d)
        new_d = np.where(left, c, a + INVPHI * (b - a))
        fnew = f(np.where(left, new_c, new_d))
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        c, d = new_c, new_d
        if np.max(b - a) < 1e-7 * (1.0 + np.max(np.abs(a))):
            fa, fb = f(a), f(b)
            m = np.where(fc >= fd, c, d)
            fm = np.maximum(fc, fd)
            # concavity: f <= fm + slope * distance on each side of m
            sl = (fm - fa) / np.maximum(m - a, 1e-300)
            sr = (fb - fm) / np.maximum(b - m, 1e-300)
            gap = np.maximum(np.maximum(0.0, -sr) * (m - a), np.maximum(0.0, sl) * (b - m))
            if np.max(gap) <= tol:
                break
    m = np.where(fc >= fd, c, d)
    return m, np.maximum(fc, fd), gap


class ConjugateEvaluator:
    """Lagrangians of a :class:`HamiltonianFamily` on demand.

    Parameters
    ----------
    fam : the Hamiltonian family.
    method : ``"numeric"`` (golden section), ``"closed"`` (closed-form
        conjugate shipped by builtins) or ``"auto"`` (closed when available).
    tol : certified optimality gap of the inner maximization.
    """

    def __init__(self, fam: HamiltonianFamily, method: str = "auto", tol: float = 1e-10,
                 growth: float = 2.0, cap: float = 1e6):
        if method not in ("auto", "numeric", "closed"):
            raise ValueError(f"unknown method {method!r}")
        self.fam = fam
        self.method = method
        self.tol = tol
        self.growth = growth
        self.cap = cap
        self._cache: dict = {}

    def _closed(self, arc):
        lag = self.fam.arcs[arc].lagrangian
        if self.method == "closed" and lag is None:
            raise ValueError(f"arc {arc!r} has no closed-form Lagrangian")
        return lag if self.method in ("auto", "closed") else None

    def conjugate(self, arc, s, lam, t, reverse=False, argmax=True):
        """``(L, ArgmaxRecord)`` on the (possibly inverse) arc, broadcasting inputs.

        With ``argmax=False`` the closed-form route skips locating the maximizer
        and the record's ``mu`` is NaN.
        """
        s, lam, t = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (s, lam, t)))
        s_n, t_n = self.fam._check(arc, s, t)
        if reverse:
            s_n, lam = self.fam.net.arcs[arc].length - s_n, -lam
        lag = self._closed(arc)
        ah = self.fam.arcs[arc]
        if lag is not None:
            mu = _inverse_dh(ah, s_n, t_n, lam) if argmax else np.full(lam.shape, np.nan)
            val = np.asarray(lag(s_n, lam, t_n), dtype=float)
            mu = -mu if reverse else mu
            return val, ArgmaxRecord(mu, np.zeros(val.shape))
        f = lambda m: lam * m - ah.h(s_n, t_n, m)  # noqa: E731
        lo, hi = _bracket(f, np.zeros(lam.shape), 1.0 + np.abs(lam), self.cap)
        mu, val, gap = maximize_concave(f, lo, hi, tol=self.tol)
        mu = -mu if reverse else mu
        return val, ArgmaxRecord(mu, gap)

    def lagrangian(self, arc, s, lam, t, reverse=False):
        return self.conjugate(arc, s, lam, t, reverse=reverse, argmax=False)[0]

    def lagrangian_table(self, arc, s, lam, t, reverse=False):
        """Memoized lagrangian on a solver lattice (key excludes geometry)."""
        s = np.asarray(s, dtype=float)
        lam = np.asarray(lam, dtype=float)
        key = (arc, reverse, s.shape, s.tobytes(), lam.shape, lam.tobytes(),
               float(t) if self.fam.arcs[arc].time_dependent else None)
        out = self._cache.get(key)
        if out is None:
            out = self.lagrangian(arc, s, lam, t, reverse=reverse)
            out.setflags(write=False)
            self._cache[key] = out
        return out

    def dump_csv(self, path, arc, s, lam, t):
        """Write the conjugate table ``arc,s,lam,t,L,mu,gap`` for debugging."""
        S, Lm, Tt = np.meshgrid(np.atleast_1d(s), np.atleast_1d(lam), np.atleast_1d(t), indexing="ij")
        val, rec = self.conjugate(arc, S, Lm, Tt)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arc", "s", "lambda", "t", "L", "mu", "gap"])
            for row in zip(S.ravel(), Lm.ravel(), Tt.ravel(), val.ravel(), rec.mu.ravel(), rec.gap.ravel()):
                w.writerow([arc, *(repr(float(x)) for x in row)])


def _inverse_dh(ah, s, t, lam):
    """mu with dH/dmu(mu) = lam, by bisection on the monotone derivative."""
    if ah.dh is None:
        return np.full(np.shape(lam), np.nan)
    lo = -np.ones(np.shape(lam))
    hi = np.ones(np.shape(lam))
    for _ in range(200):
        bad = ah.dh(s, t, lo) > lam
        if not np.any(bad):
            break
        lo = np.where(bad, 2 * lo, lo)
    for _ in range(200):
        bad = ah.dh(s, t, hi) < lam
        if not np.any(bad):
            break
        hi = np.where(bad, 2 * hi, hi)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        below = ah.dh(s, t, mid) < lam
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def conjugate(ce: ConjugateEvaluator, arc, s, lam, t):
    return ce.conjugate(arc, s, lam, t)


def conjugate_reversed(ce: ConjugateEvaluator, arc, s, lam, t):
    """Lagrangian of the inverse arc, routed through the native one."""
    return ce.lagrangian(arc, s, lam, t, reverse=True)


def argmin_selection(ce: ConjugateEvaluator, arc, t_grid, reverse=False):
    """Per-time minimizer ``mu(t)`` of ``mu -> H(0, t, mu)``.

    Since ``-L(0, 0, t) = min_mu H(0, t, mu)``, this is the argmax record of
    the conjugate at zero speed. Returns ``(mu, L00)`` arrays.
    """
    t = np.asarray(t_grid, dtype=float)
    ah = ce.fam.arcs[arc]
    s0 = np.zeros(t.shape)
    s_n = s0 if not reverse else np.full(t.shape, ce.fam.net.arcs[arc].length)
    sign = -1.0 if reverse else 1.0
    f = lambda m: -ah.h(s_n, t, sign * m)  # noqa: E731
    lo, hi = _bracket(f, np.zeros(t.shape), np.ones(t.shape), ce.cap)
    mu, val, _ = maximize_concave(f, lo, hi, tol=ce.tol)
    return mu, val


def conjugate_envelope(f, r, tol=1e-12, cap=1e8):
    """``f*(r) = sup_{x >= 0} {r x - f(x)}`` for a convex nondecreasing ``f`` on R+.

    Used on the growth envelopes (θ, Θ); ``r`` is taken as ``|r|``.
    """
    r = np.abs(np.asarray(r, dtype=float))
    g = lambda x: r * x - f(x)  # noqa: E731
    hi = 1.0 + r
    g0 = g(np.zeros(r.shape))
    while True:
        up = (g(hi) > g(0.5 * hi)) | (g(hi) > g0)
        if not np.any(up):
            break
        if np.any(hi[up] > cap):
            raise BracketError("envelope conjugate unbounded: envelope is not superlinear")
        hi = np.where(up, 2.0 * hi, hi)
    x, val, _ = maximize_concave(g, np.zeros(r.shape), hi, tol=tol)
    return np.maximum(val, g0)


def reconjugate(ce: ConjugateEvaluator, arc, s, mu, t, tol=None):
    """``max_lam {lam * mu - L(s, lam, t)}``, which recovers ``H(s, t, mu)`` for convex ``H``.

    ``L`` is whatever ``ce`` returns, so with ``method="numeric"`` both
    conjugations are numerical.
    """
    s, mu, t = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (s, mu, t)))
    f = lambda lam: lam * mu - ce.lagrangian(arc, s, lam, t)  # noqa: E731
    lo, hi = _bracket(f, np.zeros(mu.shape), 1.0 + np.abs(mu), ce.cap)
    _, val, _ = maximize_concave(f, lo, hi, tol=ce.tol if tol is None else tol)
    return val
