import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjnet import compile_expression
from hjnet.expressions import ExpressionError


def test_constant_and_vectorized():
    f = compile_expression("max(sin(t), 0.5)")
    assert f(0.0) == 0.5
    assert np.allclose(f(np.array([0.0, np.pi / 2])), [0.5, 1.0])


def test_numeric_literal_broadcasts():
    f = compile_expression(2.5, ("s", "t"))
    assert f(np.zeros(3), 0.0).shape == (3,)
    assert f.names == frozenset()


def test_names_recorded():
    assert "t" not in compile_expression("sqrt(s) + 1", ("s", "t")).names
    assert "t" in compile_expression("s * t", ("s", "t")).names


@pytest.mark.parametrize("bad", ["__import__('os')", "t.real", "[t]", "t if t else 0", "foo(t)", "x + 1", "'a'"])
def test_rejects_unsafe_or_unknown(bad):
    with pytest.raises(ExpressionError):
        compile_expression(bad)


def test_syntax_error():
    with pytest.raises(ExpressionError):
        compile_expression("1 +")


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_matches_python_arithmetic(a, b):
    f = compile_expression("2*s - t**2 + abs(s*t)", ("s", "t"))
    assert f(a, b) == pytest.approx(2 * a - b ** 2 + abs(a * b))
