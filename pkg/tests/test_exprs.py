import math

import pytest
from hypothesis import given, strategies as st

from adlab import exprs
from adlab.exprs import (
    BinOp, Call, ExprError, Neg, Num, ValidationFailed, Var,
    check_bounds, evaluate, guarded_div, guarded_pow, parse, print_expr,
    require_positive, to_python_source, variables_of,
)


# ---------------------------------------------------------------------------
# Parsing and evaluation
# ---------------------------------------------------------------------------


def ev(source, **env):
    return evaluate(parse(source, variables=tuple(env)), env)


def test_literal_and_variables():
    assert ev("2 + tanh(y - x)", x=0.0, y=0.0) == 2.0
    assert ev("x", x=3.5) == 3.5
    assert ev("1.5e2", x=0.0) == 150.0


def test_precedence_and_associativity():
    assert ev("1 + 2 * 3 ^ 2", x=0.0) == 19.0
    assert ev("2 ^ 3 ^ 2", x=0.0) == 512.0  # right-associative
    assert ev("-x ^ 2", x=3.0) == -9.0      # unary minus binds below ^
    assert ev("(1 + 2) * 3", x=0.0) == 9.0
    assert ev("2 ^ -1", x=0.0) == 0.5


def test_functions():
    assert ev("min(x, 2)", x=5.0) == 2.0
    assert ev("max(x, 2)", x=5.0) == 5.0
    assert ev("abs(-x)", x=3.0) == 3.0
    assert ev("cos(x)", x=0.0) == 1.0
    assert ev("sin(x)", x=0.0) == 0.0
    assert ev("exp(x)", x=0.0) == 1.0


@pytest.mark.parametrize("bad", [
    "x +", "min(x)", "max(x, 1, 2)", "foo(x)", "z", "1..2", "x $ y", "(x",
    "x y",
])
def test_parse_errors(bad):
    with pytest.raises(ExprError):
        parse(bad, variables=("x", "y"))


def test_error_carries_offset():
    with pytest.raises(ExprError) as err:
        parse("x + $", variables=("x",))
    assert err.value.position == 4


def test_guarded_division():
    assert guarded_div(1.0, 0.0) == exprs.GUARD_LARGE
    assert guarded_div(-1.0, 0.0) == -exprs.GUARD_LARGE
    assert guarded_div(0.0, 0.0) == 0.0
    assert ev("1 / (x - x)", x=2.0) == exprs.GUARD_LARGE


def test_guarded_power():
    assert guarded_pow(0.0, 0.0) == 1.0
    assert ev("0 ^ 0", x=0.0) == 1.0
    assert guarded_pow(-2.0, 0.5) == 0.0      # non-integer power of a negative
    assert guarded_pow(0.0, -1.0) == exprs.GUARD_LARGE
    assert guarded_pow(1e200, 3.0) == exprs.GUARD_LARGE
    assert guarded_pow(-1e200, 3.0) == -exprs.GUARD_LARGE


def test_exp_is_clamped():
    assert ev("exp(x)", x=1e4) == exprs.GUARD_LARGE


def test_variables_of():
    node = parse("2 + tanh(y - x)", variables=("x", "y"))
    assert variables_of(node) == {"x", "y"}
    assert variables_of(parse("3", variables=("x",))) == set()


# ---------------------------------------------------------------------------
# Printer round trip and codegen equivalence (property tests)
# ---------------------------------------------------------------------------

_nums = st.floats(min_value=0.0, max_value=8.0, allow_nan=False).map(
    lambda v: Num(float(v)))
_vars = st.sampled_from(["x", "y"]).map(Var)


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(lambda a, b, op: BinOp(op, a, b),
                  children, children, st.sampled_from(["+", "-", "*", "/", "^"])),
        st.builds(lambda a, f: Call(f, (a,)),
                  children, st.sampled_from(["tanh", "sin", "cos", "abs"])),
        st.builds(lambda a, b, f: Call(f, (a, b)),
                  children, children, st.sampled_from(["min", "max"])),
    )


_asts = st.recursive(_nums | _vars, _extend, max_leaves=12)


@given(_asts)
def test_print_parse_roundtrip_preserves_value(ast):
    env = {"x": 0.3, "y": -0.7}
    reparsed = parse(print_expr(ast), variables=("x", "y"))
    assert evaluate(reparsed, env) == evaluate(ast, env)


@given(_asts, st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))
def test_python_source_matches_interpreter(ast, x, y):
    src = to_python_source(ast)
    fn = eval(f"lambda x, y: {src}",
              {"math": math, "_gdiv": guarded_div, "_gpow": guarded_pow})
    assert fn(x, y) == evaluate(ast, {"x": x, "y": y})


# ---------------------------------------------------------------------------
# Bounds verification
# ---------------------------------------------------------------------------


def test_check_bounds_reports_extremes():
    node = parse("2 + tanh(y - x)", variables=("x", "y"))
    rep = check_bounds(node, {"x": (-10, 10), "y": (-10, 10)}, grid_n=41)
    assert 1.0 <= rep.min_observed < 1.01
    assert 2.99 < rep.max_observed <= 3.0
    assert rep.passed


def test_require_positive_rejects_sign_changes():
    node = parse("x", variables=("x",))
    with pytest.raises(ValidationFailed):
        require_positive(node, {"x": (-1.0, 1.0)}, variables=["x"])


def test_require_positive_respects_margin():
    node = parse("0.0005", variables=("x",))
    with pytest.raises(ValidationFailed):
        require_positive(node, {"x": (0.0, 1.0)}, margin=1e-3, variables=["x"])
    require_positive(node, {"x": (0.0, 1.0)}, margin=1e-4, variables=["x"])


def test_check_bounds_constant_expression():
    rep = check_bounds(parse("2", variables=("x",)), {}, variables=[])
    assert rep.min_observed == rep.max_observed == 2.0
