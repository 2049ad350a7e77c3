import numpy as np
import pytest

from mfclab import expressions as ex


def test_variable_eval():
    e = ex.parse_coefficient("x[0]")
    assert ex.evaluate(e, x=np.array([2.0]), m1=np.array([0.0]), m2=0.0) == 2.0


def test_quadratic_deviation():
    e = ex.parse_coefficient("0.5*(x[0]-m1[0])^2")
    v = ex.evaluate(e, x=np.array([3.0]), m1=np.array([1.0]), m2=1.0)
    assert v == 2.0


def test_log_domain_error():
    e = ex.parse_coefficient("log(x[0])")
    with pytest.raises(ex.EvaluationError):
        ex.evaluate(e, x=np.array([-1.0]), m1=np.array([0.0]), m2=0.0)


def test_division_by_zero():
    e = ex.parse_coefficient("1/x[0]")
    with pytest.raises(ex.EvaluationError):
        ex.evaluate(e, x=np.array([0.0]), m1=None, m2=None)


def test_sqrt_domain():
    with pytest.raises(ex.EvaluationError):
        ex.evaluate(ex.parse_coefficient("sqrt(x[0])"), x=np.array([-4.0]))


def test_precedence():
    assert ex.evaluate(ex.parse_coefficient("2^3^2")) == 512.0
    assert ex.evaluate(ex.parse_coefficient("-2^2")) == -4.0
    assert ex.evaluate(ex.parse_coefficient("2*3+4")) == 10.0
    assert ex.evaluate(ex.parse_coefficient("10 - 4 - 3")) == 3.0
    assert ex.evaluate(ex.parse_coefficient("2^(-1)")) == 0.5
    assert ex.evaluate(ex.parse_coefficient("2^-1")) == 0.5


def test_number_formats():
    assert ex.evaluate(ex.parse_coefficient("2.5e-3")) == 2.5e-3
    assert ex.evaluate(ex.parse_coefficient(".5")) == 0.5
    assert ex.evaluate(ex.parse_coefficient("1e3")) == 1000.0


def test_functions():
    assert abs(ex.evaluate(ex.parse_coefficient("exp(1)")) - np.e) < 1e-15
    assert ex.evaluate(ex.parse_coefficient("abs(-3)")) == 3.0
    assert abs(ex.evaluate(ex.parse_coefficient("tanh(0)"))) == 0.0


def test_syntax_error_position_and_expected():
    with pytest.raises(ex.ExpressionSyntaxError) as info:
        ex.parse_coefficient("x[0] + * 2")
    assert info.value.position == 7
    assert "number" in info.value.expected
    with pytest.raises(ex.ExpressionSyntaxError) as info:
        ex.parse_coefficient("(1 + 2")
    assert ")" in info.value.expected


def test_unknown_identifier():
    with pytest.raises(ex.ExpressionSyntaxError) as info:
        ex.parse_coefficient("y + 1")
    assert "unknown identifier" in str(info.value)


def test_empty_expression():
    with pytest.raises(ex.ExpressionSyntaxError):
        ex.parse_coefficient("   ")


def _random_tree(g, depth):
    if depth == 0 or g.uniform() < 0.3:
        kind = g.integers(0, 4)
        if kind == 0:
            return ex.Num(float(np.round(g.uniform(0, 9), 3)))
        if kind == 1:
            return ex.Var("x", int(g.integers(0, 2)))
        if kind == 2:
            return ex.Var("m1", int(g.integers(0, 2)))
        return ex.Var("m2", 0)
    kind = g.integers(0, 3)
    if kind == 0:
        op = str(g.choice(["+", "-", "*", "/", "^"]))
        return ex.BinOp(op, _random_tree(g, depth - 1), _random_tree(g, depth - 1))
    if kind == 1:
        return ex.Neg(_random_tree(g, depth - 1))
    fn = str(g.choice(list(ex.FUNCTIONS)))
    return ex.Call(fn, _random_tree(g, depth - 1))


def test_print_parse_roundtrip_random_trees():
    g = np.random.default_rng(9)
    for _ in range(200):
        tree = _random_tree(g, 4)
        printed = ex.print_coefficient(tree)
        reparsed = ex.parse_coefficient(printed)
        assert reparsed == tree, printed
        assert ex.print_coefficient(reparsed) == printed


def test_registry_expressions_are_fixed_points():
    from mfclab.models import REGISTRY

    for model in REGISTRY.values():
        exprs = list(model.drift) + [e for row in model.sigma for e in row]
        exprs += [model.l1, model.terminal]
        for e in exprs:
            printed = ex.print_coefficient(e)
            assert ex.print_coefficient(ex.parse_coefficient(printed)) == printed


def test_vectorized_broadcast():
    e = ex.parse_coefficient("x[0]*m1[1] + m2")
    x = np.zeros((5, 3, 2)) + 2.0
    m1 = np.zeros((5, 1, 2)) + 3.0
    m2 = np.zeros((5, 1)) + 1.0
    out = ex.evaluate(e, x, m1, m2)
    assert out.shape == (5, 3)
    assert np.all(out == 7.0)


def test_free_variables():
    e = ex.parse_coefficient("x[0] + m2*cos(m1[1])")
    assert ex.free_variables(e) == {"x", "m1", "m2"}
