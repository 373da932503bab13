import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjnet import (ArcHamiltonian, ConjugateEvaluator, Envelopes, builtin_family, conjugate_envelope, exponential,
                   path_network, power_p, quadratic_minus_potential)
from hjnet.legendre import BracketError, argmin_selection, conjugate_reversed, reconjugate

NET = path_network([1.0])


def evaluator(H, method="numeric", envelopes=None):
    return ConjugateEvaluator(builtin_family(NET, 1.0, H, envelopes=envelopes), method=method)


def dense_oracle(h, lam):
    mu = np.arange(-10.0, 10.0 + 1e-12, 1e-5)
    vals = lam * mu - h(mu)
    i = int(np.argmax(vals))
    return vals[i], mu[i]


@pytest.mark.parametrize("method", ["numeric", "closed"])
def test_quadratic_with_potential(method):
    ce = evaluator(quadratic_minus_potential(-0.3), method)  # H = mu^2/2 + 0.3
    L, rec = ce.conjugate("e0", 0.5, 1.0, 0.5)
    assert float(L) == pytest.approx(1.0 / 2 - 0.3, abs=1e-9)
    ce = evaluator(quadratic_minus_potential(0.3), method)  # H = mu^2/2 - 0.3
    L, rec = ce.conjugate("e0", 0.5, 1.0, 0.5)
    assert float(L) == pytest.approx(0.8, abs=1e-9)
    assert float(rec.mu) == pytest.approx(1.0, abs=1e-5)
    L, rec = ce.conjugate("e0", 0.5, 0.0, 0.5)
    assert float(L) == pytest.approx(0.3, abs=1e-9)
    assert float(rec.mu) == pytest.approx(0.0, abs=1e-5)


def test_cosh_against_dense_grid():
    ce = evaluator(exponential())
    L, rec = ce.conjugate("e0", 0.2, 1.0, 0.1)
    ref, mu_ref = dense_oracle(lambda m: np.cosh(m) - 1.0, 1.0)
    assert float(L) == pytest.approx(math.asinh(1) - math.sqrt(2) + 1, abs=1e-9)
    assert float(L) == pytest.approx(ref, abs=1e-9)
    assert float(rec.mu) == pytest.approx(mu_ref, abs=1e-4)


@given(st.floats(0, 1), st.floats(-4, 4), st.floats(0, 1))
def test_numeric_matches_closed_form(s, lam, t):
    H = power_p(3.0, 1.0, "0.2*s + 0.1*t")
    a = evaluator(H, "numeric").lagrangian("e0", s, lam, t)
    b = evaluator(H, "closed").lagrangian("e0", s, lam, t)
    assert float(a) == pytest.approx(float(b), abs=1e-8)


@given(st.floats(0, 1), st.floats(-3, 3), st.floats(0, 1), st.floats(-3, 3))
def test_young_fenchel(s, lam, t, mu):
    ce = evaluator(exponential(1.0, "0.3*s*t"))
    L, rec = ce.conjugate("e0", s, lam, t)
    H = ce.fam.h("e0", s, t, mu)
    assert lam * mu <= float(L + H + rec.gap) + 1e-12


@given(st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_convex_in_speed(s, l1, l2, t):
    ce = evaluator(exponential(1.0, "0.3*s"))
    Lm = ce.lagrangian("e0", s, 0.5 * (l1 + l2), t)
    assert float(Lm) <= 0.5 * float(ce.lagrangian("e0", s, l1, t) + ce.lagrangian("e0", s, l2, t)) + 1e-9


def test_reversal_even_hamiltonian():
    ce = evaluator(exponential(1.0, "s*s"))
    for s, lam in [(0.2, 0.7), (0.9, -1.3)]:
        assert float(conjugate_reversed(ce, "e0", s, lam, 0.3)) == float(ce.lagrangian("e0", 1 - s, lam, 0.3))


def test_reversal_potential_shift():
    ce = evaluator(quadratic_minus_potential("s"), "closed")
    s, lam = 0.2, 0.7
    diff = float(conjugate_reversed(ce, "e0", s, lam, 0.0) - ce.lagrangian("e0", s, lam, 0.0))
    assert diff == pytest.approx((1 - s) - s)


@given(st.integers(0, 64), st.floats(-3, 3), st.floats(0, 1))
def test_double_reversal(k, lam, t):
    s = k / 64  # dyadic, so 1 - (1 - s) == s and the routing is exact
    ce = evaluator(power_p(2.5, 1.0, "s*t + 0.1*s"))
    once = ce.lagrangian("e0", 1 - s, -lam, t, reverse=True)
    assert float(once) == float(ce.lagrangian("e0", s, lam, t))


def test_involution_numeric():
    ce = evaluator(quadratic_minus_potential("0.3*sin(2*s)*cos(t)"))
    S, T, M = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 1, 7), np.linspace(-3, 3, 7), indexing="ij")
    assert np.abs(reconjugate(ce, "e0", S, M, T) - ce.fam.h("e0", S, T, M)).max() <= 1e-7


def test_argmin_selection_examples():
    t = np.linspace(0, 1, 11)
    mu, _ = argmin_selection(evaluator(quadratic_minus_potential(0.0)), "e0", t)
    assert np.allclose(mu, 0, atol=1e-5)
    mu, _ = argmin_selection(evaluator(exponential()), "e0", t)
    assert np.allclose(mu, 0, atol=1e-5)
    tilted = ArcHamiltonian(lambda s, t, m: 0.5 * m ** 2 - t * m + 0.0 * s)
    env = Envelopes(lambda r: 0.25 * np.asarray(r) ** 2 - 1.0, lambda r: np.asarray(r) ** 2 + 1.0, 0.0, 2.0, 1.0)
    ce = evaluator(tilted, envelopes=env)
    mu, L00 = argmin_selection(ce, "e0", t)
    grid = np.linspace(-2, 2, 400001)
    brute = np.array([grid[np.argmin(0.5 * grid ** 2 - tt * grid)] for tt in t])
    assert np.allclose(mu, t, atol=1e-5) and np.allclose(mu, brute, atol=1e-5)
    # H(0, t, mu(t)) = -L(0, 0, t)
    assert np.allclose(-ce.fam.h("e0", 0.0, t, mu), L00, atol=1e-9)
    assert np.allclose(L00, ce.lagrangian("e0", 0.0, 0.0, t), atol=1e-9)


def test_envelope_conjugate_quadratic():
    r = np.array([0.0, 1.0, 3.0])
    assert np.allclose(conjugate_envelope(lambda x: 0.5 * x * x, r), 0.5 * r * r, atol=1e-9)


def test_envelope_conjugate_linear_unbounded():
    with pytest.raises(BracketError):
        conjugate_envelope(lambda x: np.asarray(x) * 1.0, np.array(2.0))


def test_bracket_cap_signals_misdeclaration():
    # linear growth has an unbounded conjugate at |lam| > slope
    lin = ArcHamiltonian(lambda s, t, m: np.abs(m) + 0.0 * s)
    env = Envelopes(lambda r: np.asarray(r) * 1.0, lambda r: np.asarray(r) + 1.0, 0.0, 0.0, 1.0)
    ce = ConjugateEvaluator(builtin_family(NET, 1.0, lin, envelopes=env), cap=1e4)
    with pytest.raises(BracketError):
        ce.lagrangian("e0", 0.5, 2.0, 0.5)


def test_memo_table_reuses_values():
    ce = evaluator(quadratic_minus_potential(0.1), "closed")
    s = np.linspace(0, 1, 5)
    a = ce.lagrangian_table("e0", s, s, 0.2)
    assert ce.lagrangian_table("e0", s, s, 0.7) is a  # time-independent key


def test_dump_csv(tmp_path):
    ce = evaluator(quadratic_minus_potential(0.0), "closed")
    path = tmp_path / "L.csv"
    ce.dump_csv(path, "e0", [0.0, 1.0], [0.0, 1.0], [0.0])
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:5] == ["arc", "s", "lambda", "t", "L"] and len(lines) == 5
