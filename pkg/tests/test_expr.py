import numpy as np
import pytest

from pmcgraph.expr import EvalDomainError, ParseError, eval_checked, parse_expr

VARS = ("x1", "x2", "z", "y1", "y2", "t")


def ev(text, variables=VARS, **env):
    node = parse_expr(text, variables)
    return eval_checked(node, env)


def test_arithmetic_precedence():
    assert ev("2+3*4") == 14.0
    assert ev("2*3+4") == 10.0
    assert ev("6/3/2") == 1.0
    assert ev("2-3-4") == -5.0
    assert ev("2^3^2") == 512.0  # right-associative
    assert ev("-z^2", z=3.0) == -9.0
    assert ev("2^-3") == 0.125
    assert ev("(2+3)*4") == 20.0
    assert ev("--5") == 5.0


def test_literals():
    assert ev("0.5") == 0.5
    assert ev(".25") == 0.25
    assert ev("1e3") == 1000.0
    assert ev("2.5e-2") == 0.025


def test_functions():
    assert ev("sin(0)") == 0.0
    assert abs(ev("cos(0)") - 1.0) == 0.0
    assert ev("min(z, 2)", z=5.0) == 2.0
    assert ev("max(z, 2)", z=5.0) == 5.0
    assert ev("abs(z)", z=-3.5) == 3.5
    assert abs(ev("tanh(100)") - 1.0) < 1e-12
    assert ev("sqrt(z)", z=9.0) == 3.0
    assert abs(ev("ln(exp(2))") - 2.0) < 1e-15
    assert abs(ev("tan(0.5)") - np.tan(0.5)) < 1e-15


def test_sample_curvature_expression():
    # frozen: 0.5*sin(0) + 0.1*sin(2*pi*0.25) = 0.1
    got = ev("0.5*sin(z)+0.1*sin(6.283185307179586*x1)", x1=0.25, z=0.0)
    assert abs(got - 0.1) < 1e-15


def test_vectorized_eval_broadcast():
    z = np.linspace(-1.0, 1.0, 11)
    got = ev("z^2 + x1", z=z, x1=2.0)
    assert np.allclose(got, z**2 + 2.0, atol=1e-15)


def test_parse_error_positions():
    with pytest.raises(ParseError) as err:
        parse_expr("foo(z)", VARS)
    assert err.value.position == 1
    assert "foo" in str(err.value)

    with pytest.raises(ParseError) as err:
        parse_expr("z + $", VARS)
    assert err.value.position == 5

    with pytest.raises(ParseError) as err:
        parse_expr("(z", VARS)
    assert "')'" in str(err.value)

    with pytest.raises(ParseError):
        parse_expr("z +", VARS)

    with pytest.raises(ParseError):
        parse_expr("", VARS)

    with pytest.raises(ParseError):
        parse_expr("sin(z, x1)", VARS)


def test_unknown_identifier_lists_allowed():
    with pytest.raises(ParseError) as err:
        parse_expr("q + 1", ("x1", "z"))
    msg = str(err.value)
    assert "'q'" in msg and "x1" in msg and "z" in msg


def test_variable_scoping():
    # r is only a variable where the caller says so
    node = parse_expr("1/r", ("r",))
    assert eval_checked(node, {"r": 2.0}) == 0.5
    with pytest.raises(ParseError):
        parse_expr("1/r", VARS)


def test_derivatives_basic():
    node = parse_expr("sin(z)*x1", VARS)
    dz = node.diff("z")
    got = eval_checked(dz, {"z": 0.3, "x1": 2.0})
    assert abs(got - 2.0 * np.cos(0.3)) < 1e-15

    cube = parse_expr("z^3", VARS).diff("z")
    assert eval_checked(cube, {"z": 2.0}) == 12.0

    selfpow = parse_expr("z^z", VARS).diff("z")
    want = 4.0 * (np.log(2.0) + 1.0)
    assert abs(eval_checked(selfpow, {"z": 2.0}) - want) < 1e-14


def test_derivative_of_absent_variable_is_exact_zero():
    # the partial must fold away completely, leaving no ln/div residue that
    # could go non-finite where the original expression is defined
    node = parse_expr("x1^2 + ln(x1)", ("x1", "z"))
    dz = node.diff("z")
    assert eval_checked(dz, {"x1": -5.0}) == 0.0


def test_derivative_abs_min_max():
    dabs = parse_expr("abs(z)", VARS).diff("z")
    assert eval_checked(dabs, {"z": -2.0}) == -1.0
    assert eval_checked(dabs, {"z": 3.0}) == 1.0

    dmin = parse_expr("min(z, 3-z)", VARS).diff("z")
    assert eval_checked(dmin, {"z": 1.0}) == 1.0   # left branch active
    assert eval_checked(dmin, {"z": 2.5}) == -1.0  # right branch active

    dmax = parse_expr("max(z, 3-z)", VARS).diff("z")
    assert eval_checked(dmax, {"z": 1.0}) == -1.0


def test_non_finite_eval_names_the_point():
    node = parse_expr("1/z", VARS)
    z = np.array([1.0, 0.0, 2.0])
    with pytest.raises(EvalDomainError) as err:
        eval_checked(node, {"z": z})
    assert "z=0" in str(err.value)

    with pytest.raises(EvalDomainError):
        eval_checked(parse_expr("ln(z)", VARS), {"z": -1.0})


def test_division_not_checked_until_evaluation():
    node = parse_expr("1/z", VARS)  # parses fine
    assert eval_checked(node, {"z": 4.0}) == 0.25
