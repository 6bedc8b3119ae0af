import numpy as np
import pytest

from smp_lab.errors import ExpressionError
from smp_lab.expr import Expression, compile_expression, tokenize


@pytest.mark.parametrize("text,expected", [
    ("1 + 2 * 3", 7.0),
    ("(1 + 2) * 3", 9.0),
    ("2 ^ 3 ^ 2", 512.0),
    ("-2 ^ 2", -4.0),
    ("2 ^ -1", 0.5),
    ("8 / 4 / 2", 1.0),
    ("1 - 2 - 3", -4.0),
    ("1.5e1 + .5", 15.5),
    ("--3", 3.0),
    ("max(1, min(4, 2)) + sqrt(9)", 5.0),
])
def test_constant_values(text, expected):
    assert Expression(text, ())() == pytest.approx(expected)


def test_variables_and_functions():
    e = compile_expression("sin(x) * y + exp(-t) - cos(u) / (1 + v^2)")
    x, y, t, u, v = 0.3, 2.0, 0.5, 1.1, -0.4
    assert e(t, x, y, u, v) == pytest.approx(np.sin(x) * y + np.exp(-t) - np.cos(u) / (1 + v ** 2))
    assert e.used == {"x", "y", "t", "u", "v"}


def test_vectorized():
    e = Expression("x^2 + t", ("t", "x"))
    xs = np.linspace(-1, 1, 5)
    assert np.allclose(e(0.5, xs), xs ** 2 + 0.5)


def test_numbers_are_accepted():
    e = Expression(0.25, ("t",))
    assert e(3.0) == 0.25 and e.text == "0.25"


@pytest.mark.parametrize("text,token,position", [
    ("x*+u", "+", 2),
    ("x + ", "", 3),
    ("x $ 2", "$", 2),
    ("2 (x)", "(", 2),
    ("foo(x)", "foo", 0),
    ("q + 1", "q", 0),
    ("min(x)", "min", 0),
    ("(x + 1", "", 6),
])
def test_errors_carry_token_and_position(text, token, position):
    with pytest.raises(ExpressionError) as exc:
        compile_expression(text)
    assert exc.value.token == token
    assert exc.value.position == position
    assert exc.value.exit_code == 2


def test_no_eval_of_python_names():
    with pytest.raises(ExpressionError):
        compile_expression("__import__(x)")


def test_tokenizer_positions():
    toks = tokenize("  a+ 12.5")
    assert [(k, v, p) for k, v, p in toks] == [("name", "a", 2), ("op", "+", 3), ("num", "12.5", 5),
                                              ("end", "", 9)]


def test_arity_checked_at_call():
    with pytest.raises(TypeError):
        Expression("x", ("x",))(1.0, 2.0)
