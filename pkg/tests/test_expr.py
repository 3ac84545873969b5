import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_bsvie.errors import ExpressionError
from volterra_bsvie.expr import Expression


@pytest.mark.parametrize("text, env, expected", [
    ("-2^2", {}, -4.0),
    ("2^3^2", {}, 512.0),
    ("1 - 2 - 3", {}, -4.0),
    ("8 / 4 / 2", {}, 1.0),
    ("2 * x + 1", {"x": 3.0}, 7.0),
    ("min(x, 1) + max(x, 1)", {"x": 0.25}, 1.25),
    ("exp(0) + sin(0) + cos(0)", {}, 2.0),
    ("1.5e-1 + .5", {}, 0.65),
])
def test_evaluation_and_precedence(text, env, expected):
    assert Expression(text)(env) == pytest.approx(expected)


def test_vectorised_evaluation_broadcasts():
    out = Expression("s * x")(s=np.array([[1.0], [2.0]]), x=np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(out, [[1, 2, 3], [2, 4, 6]])


@pytest.mark.parametrize("text, pos", [
    ("1 +", 3),
    ("x $ 2", 2),
    ("sin(x", 5),
    ("foo(x)", 0),
    ("w + 1", 0),
    ("min(x)", 0),
    ("(1 + 2))", 7),
])
def test_errors_carry_positions(text, pos):
    with pytest.raises(ExpressionError) as info:
        Expression(text)
    assert info.value.position == pos
    assert f"(at position {pos})" in str(info.value)


def test_empty_expression():
    with pytest.raises(ExpressionError, match="empty"):
        Expression("   ")


def test_unbound_variable():
    with pytest.raises(ExpressionError, match="'y' not bound"):
        Expression("x + y")(x=1.0)


@pytest.mark.parametrize("text, var, expected", [
    ("x * y + sin(x)", "x", "y + cos(x)"),
    ("-x^2", "x", "-(2 * x)"),
    ("exp(-t) * x", "x", "exp(-t)"),
    ("s^2", "x", "0"),
    ("z + 0.5 * v", "z", "1"),
])
def test_symbolic_derivative(text, var, expected):
    assert Expression(text).diff(var) == Expression(expected)


def test_unknown_derivative_variable():
    with pytest.raises(ExpressionError):
        Expression("x").diff("q")


def test_constant_folding_and_variables():
    e = Expression("2 * 3 + 1")
    assert e.is_constant and e.constant_value == 7.0
    assert Expression("s * x + t").variables == {"s", "t", "x"}
    assert Expression("x") != Expression("y")


# random expression text over a few variables
_leaf = st.one_of(st.sampled_from(["x", "y", "s"]), st.integers(0, 9).map(str),
                  st.floats(0.1, 5.0).map(lambda v: f"{v:.3f}"))


def _extend(inner):
    binary = st.tuples(inner, st.sampled_from(["+", "-", "*", "^"]), inner).map(
        lambda t: f"({t[0]} {t[1]} {t[2]})" if t[1] != "^" else f"({t[0]}) ^ 2")
    unary = st.tuples(st.sampled_from(["-", "sin", "cos"]), inner).map(
        lambda t: f"-({t[1]})" if t[0] == "-" else f"{t[0]}({t[1]})")
    return st.one_of(binary, unary)


_exprs = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(_exprs)
def test_printing_round_trips(text):
    e = Expression(text)
    again = Expression(str(e))
    assert again == e
    env = {"x": 0.3, "y": -0.7, "s": 1.1}
    a, b = float(e(env)), float(again(env))
    assert a == b or (math.isnan(a) and math.isnan(b))


@settings(max_examples=100, deadline=None)
@given(_exprs, st.floats(-1.0, 1.0))
def test_derivative_matches_finite_difference(text, x):
    e, d = Expression(text), Expression(text).diff("x")
    h = 1e-6
    env = {"y": 0.4, "s": 0.9}
    fd = (float(e(env, x=x + h)) - float(e(env, x=x - h))) / (2 * h)
    exact = float(d(env, x=x))
    assert fd == pytest.approx(exact, rel=1e-4, abs=1e-4 * max(1.0, abs(float(e(env, x=x)))))
