import math

import numpy as np
import pytest

from solvers import ExpressionDomainError, ExpressionSyntaxError, UnknownIdentifier, differentiate, parse
from solvers.expr import spatial_variables, state_variables

XS = spatial_variables(2)


def test_parse_and_evaluate():
    e = parse("x1^2 + sin(x2)", XS)
    assert e(2.0, 0.0) == pytest.approx(4.0)
    assert e(np.array([1.0, 2.0]), 0.5) == pytest.approx([1 + math.sin(0.5), 4 + math.sin(0.5)])


def test_power_alias_and_printing():
    a = parse("x1**3", XS)
    b = parse("x1^3", XS)
    assert a.tree == b.tree
    assert a.text == "x1^3"


def test_constants():
    e = parse("pi*x1 + E", XS)
    assert e(1.0, 0.0) == pytest.approx(math.pi + math.e)


def test_state_variable():
    F = parse("exp(u) + x1*u", state_variables(2))
    assert F(2.0, 0.0, 1.0) == pytest.approx(math.e + 2.0)
    assert F.depends_on("u")


def test_unknown_identifier_position():
    with pytest.raises(UnknownIdentifier) as info:
        parse("x1 + y", XS)
    assert info.value.name == "y"
    assert info.value.position == 6
    assert "position 6" in str(info.value)


def test_leading_whitespace_shifts_position():
    with pytest.raises(UnknownIdentifier) as info:
        parse("  q", XS)
    assert info.value.position == 3


def test_unbalanced_parentheses():
    with pytest.raises(ExpressionSyntaxError, match="unbalanced"):
        parse("sin(x1", XS)


def test_function_needs_argument_list():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse("sin x1", XS)
    assert info.value.position == 1


def test_variable_is_not_callable():
    with pytest.raises(ExpressionSyntaxError, match="not a function"):
        parse("x1(2)", XS)


def test_invalid_syntax_reports_position():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse("x1 + * 2", XS)
    assert info.value.position >= 1
    assert info.value.stage == "expr.parse"


def test_empty_expression():
    with pytest.raises(ExpressionSyntaxError, match="empty"):
        parse("   ", XS)


def test_differentiate():
    e = parse("x1^2*x2", XS)
    d = differentiate(e, "x1")
    assert d(3.0, 2.0) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        e.differentiate("u")


def test_gradient_and_hessian():
    e = parse("x1^2 + 3*x1*x2", XS)
    g = [gi(1.0, 2.0) for gi in e.gradient(XS)]
    assert g == pytest.approx([8.0, 3.0])
    H = [[h(1.0, 2.0) for h in row] for row in e.hessian(XS)]
    assert np.allclose(H, [[2.0, 3.0], [3.0, 0.0]])


def test_domain_error_names_the_point():
    e = parse("log(x1)", XS)
    with pytest.raises(ExpressionDomainError) as info:
        e(np.array([1.0, -1.0]), 0.0)
    assert "x1=-1" in str(info.value)
    assert info.value.stage == "expr.evaluate"


def test_division_by_zero():
    e = parse("1/x1", XS)
    with pytest.raises(ExpressionDomainError):
        e(0.0, 1.0)


def test_constant_broadcasts_to_input_shape():
    e = parse("2", XS)
    out = e(np.zeros((3, 4)), 0.0)
    assert out.shape == (3, 4)
    assert np.all(out == 2.0)
    assert e.is_constant


def test_substitute():
    e = parse("x1 + x2", XS)
    s = e.substitute({"x1": parse("2*x2", XS)})
    assert s(5.0, 1.0) == pytest.approx(3.0)


@pytest.mark.parametrize(
    "text, point",
    [
        ("sin(x1)*cos(x2)", (0.3, -0.7)),
        ("exp(x1 - x2^2)", (0.2, 0.5)),
        ("log(1 + x1^2) / sqrt(2 + x2)", (0.9, 0.4)),
        ("tanh(3*x1*x2) + x1^3", (-0.4, 0.6)),
        ("(x1 + 2)^(1/3) * pi", (0.5, 0.0)),
    ],
)
def test_derivatives_match_central_differences(text, point):
    e = parse(text, XS)
    h = 1e-5
    for i, g in enumerate(e.gradient(XS)):
        step = np.eye(2)[i] * h
        fd = (e(*(np.array(point) + step)) - e(*(np.array(point) - step))) / (2 * h)
        assert float(g(*point)) == pytest.approx(float(fd), rel=1e-6, abs=1e-9)


def test_printed_form_parses_back():
    e = parse("x1^2*sin(x2) - E/(1 + x1)", XS)
    assert parse(e.text, XS).tree == e.tree


CONSTANTS = ("2", "3", "1/2", "3/4", "pi")
UNARY = ("sin({})", "cos({})", "tanh({})", "exp(tanh({}))", "log(1 + ({})^2)", "sqrt(2 + sin({}))", "({})^2")
BINARY = ("({}) + ({})", "({}) - ({})", "({})*({})", "({})/(2 + cos({}))")


def random_text(rng: np.random.Generator, depth: int) -> str:
    if depth == 0 or rng.random() < 0.2:
        leaves = ("x1", "x2") + CONSTANTS
        return leaves[rng.integers(len(leaves))]
    if rng.random() < 0.5:
        return UNARY[rng.integers(len(UNARY))].format(random_text(rng, depth - 1))
    return BINARY[rng.integers(len(BINARY))].format(random_text(rng, depth - 1), random_text(rng, depth - 1))


@pytest.mark.parametrize("seed", range(100))
def test_random_expressions_differentiate_and_print(seed):
    rng = np.random.default_rng(seed)
    e = parse(random_text(rng, 6), XS)
    assert parse(e.text, XS).tree == e.tree

    point = rng.uniform(-0.5, 0.5, 2)
    value = abs(float(e(*point)))
    h = 1e-5
    for i, g in enumerate(e.gradient(XS)):
        step = np.eye(2)[i] * h
        fd = (e(*(point + step)) - e(*(point - step))) / (2 * h)
        assert float(g(*point)) == pytest.approx(float(fd), rel=1e-6, abs=1e-7 * (1 + value))
