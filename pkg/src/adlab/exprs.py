"""Small expression language for model ingredients.

Expressions are written over a declared set of variables (``b`` uses
``{x, y}``, ``theta`` and mutation scales use ``{x}``), numeric literals,
the binary operators ``+ - * / ^`` and the functions ``tanh``, ``exp``,
``sin``, ``cos``, ``abs`` (unary) and ``min``, ``max`` (binary).

Evaluation is total on finite inputs: division by zero returns
``sign(numerator) * 1e300`` and ``0^0`` evaluates to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

GUARD_LARGE = 1e300

_UNARY_FUNCS = {"tanh", "exp", "sin", "cos", "abs"}
_BINARY_FUNCS = {"min", "max"}
_FUNC_ARITY = {name: 1 for name in _UNARY_FUNCS}
_FUNC_ARITY.update({name: 2 for name in _BINARY_FUNCS})


class ExprError(ValueError):
    """Parse or validation failure, carrying the source offset."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


class ValidationFailed(ValueError):
    """A bounds check on an expression did not pass."""


# ---------------------------------------------------------------------------
# AST nodes

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


# ---------------------------------------------------------------------------
# Tokenizer

_SINGLE = set("+-*/^(),")


def _tokenize(source):
    tokens = []  # (kind, text, pos)
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _SINGLE:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            try:
                float(source[i:j])
            except ValueError:
                raise ExprError(f"bad numeric literal {source[i:j]!r}", i)
            tokens.append(("num", source[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ExprError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent; ^ binds tightest and is right-associative)

class _Parser:
    def __init__(self, tokens, variables, source):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables
        self.source = source

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text):
        kind, tok, pos = self.peek()
        if tok != text:
            raise ExprError(f"expected {text!r}, found {tok or 'end of input'!r}", pos)
        return self.next()

    def parse_expression(self):
        node = self.parse_term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            node = BinOp(op, node, self.parse_unary())
        return node

    def parse_unary(self):
        kind, tok, pos = self.peek()
        if tok == "-":
            self.next()
            return Neg(self.parse_unary())
        if tok == "+":
            self.next()
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self):
        base = self.parse_primary()
        if self.peek()[1] == "^":
            self.next()
            # Right-associative; exponent may carry a unary minus.
            return BinOp("^", base, self.parse_unary())
        return base

    def parse_primary(self):
        kind, tok, pos = self.next()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            if tok in _FUNC_ARITY:
                self.expect("(")
                args = [self.parse_expression()]
                while self.peek()[1] == ",":
                    self.next()
                    args.append(self.parse_expression())
                self.expect(")")
                if len(args) != _FUNC_ARITY[tok]:
                    raise ExprError(
                        f"{tok} expects {_FUNC_ARITY[tok]} argument(s), got {len(args)}",
                        pos,
                    )
                return Call(tok, tuple(args))
            if tok in self.variables:
                return Var(tok)
            raise ExprError(f"unknown identifier {tok!r}", pos)
        if tok == "(":
            node = self.parse_expression()
            self.expect(")")
            return node
        raise ExprError(f"unexpected {tok or 'end of input'!r}", pos)


def parse(source, variables=("x", "y")):
    """Parse ``source`` into an AST over the declared ``variables``."""
    tokens = _tokenize(source)
    parser = _Parser(tokens, frozenset(variables), source)
    node = parser.parse_expression()
    kind, tok, pos = parser.peek()
    if kind != "end":
        raise ExprError(f"unexpected trailing input {tok!r}", pos)
    return node


# ---------------------------------------------------------------------------
# Printer (canonical, fully parenthesized below the top level)

def print_expr(node):
    return _print(node)


def _print(node):
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_print(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_print(node.left)} {node.op} {_print(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation

def guarded_div(a, b):
    if b == 0.0:
        return math.copysign(GUARD_LARGE, a) if a != 0.0 else 0.0
    return a / b


def guarded_pow(a, b):
    if a == 0.0 and b == 0.0:
        return 1.0
    if a < 0.0 and b != math.floor(b):
        return 0.0
    if a == 0.0 and b < 0.0:
        return GUARD_LARGE
    try:
        r = math.pow(a, b)
    except OverflowError:
        negative = a < 0.0 and math.floor(b) % 2 != 0
        return -GUARD_LARGE if negative else GUARD_LARGE
    if r > GUARD_LARGE:
        return GUARD_LARGE
    if r < -GUARD_LARGE:
        return -GUARD_LARGE
    return r


_FUNC_IMPL = {
    "tanh": math.tanh,
    "exp": lambda v: min(math.exp(min(v, 700.0)), GUARD_LARGE),
    "sin": math.sin,
    "cos": math.cos,
    "abs": abs,
    "min": min,
    "max": max,
}


def evaluate(node, env):
    """Evaluate the AST at the variable assignment ``env`` (name -> float)."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(env[node.name])
    if isinstance(node, Neg):
        return -evaluate(node.arg, env)
    if isinstance(node, BinOp):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return guarded_div(a, b)
        return guarded_pow(a, b)
    if isinstance(node, Call):
        args = [evaluate(a, env) for a in node.args]
        return _FUNC_IMPL[node.func](*args)
    raise TypeError(f"not an expression node: {node!r}")


def variables_of(node):
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables_of(node.arg)
    if isinstance(node, BinOp):
        return variables_of(node.left) | variables_of(node.right)
    if isinstance(node, Call):
        out = set()
        for a in node.args:
            out |= variables_of(a)
        return out
    return set()


# ---------------------------------------------------------------------------
# Code generation (for the jitted simulation kernels)

def to_python_source(node):
    """Render the AST as a Python expression string using guard helpers.

    The string refers to ``_gdiv``/``_gpow`` for the guarded operators and
    ``math.*`` for functions, so it can be compiled into a function that
    numba can jit.
    """
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_python_source(node.arg)})"
    if isinstance(node, BinOp):
        a = to_python_source(node.left)
        b = to_python_source(node.right)
        if node.op == "/":
            return f"_gdiv({a}, {b})"
        if node.op == "^":
            return f"_gpow({a}, {b})"
        return f"({a} {node.op} {b})"
    if isinstance(node, Call):
        args = ", ".join(to_python_source(a) for a in node.args)
        py = {"abs": "abs", "min": "min", "max": "max"}.get(node.func, f"math.{node.func}")
        return f"{py}({args})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Bounds verification

@dataclass(frozen=True)
class BoundsReport:
    min_observed: float
    max_observed: float
    grid_step: float
    margin: float

    @property
    def passed(self):
        return self.min_observed - self.margin > 0.0


def check_bounds(node, domain, grid_n=101, margin=1e-3, variables=None):
    """Scan ``node`` on a regular grid over ``domain`` and report min/max.

    ``domain`` maps each variable name to an ``(lo, hi)`` interval; the
    scan uses ``grid_n`` points per axis. Raises :class:`ValidationFailed`
    when the observed minimum minus ``margin`` is not positive (positivity
    is what the model requires of b and theta).
    """
    if grid_n < 2:
        raise ExprError("grid_n must be at least 2")
    if variables is None:
        variables = sorted(domain)
    axes = []
    step = 0.0
    for name in variables:
        lo, hi = domain[name]
        axes.append([lo + (hi - lo) * k / (grid_n - 1) for k in range(grid_n)])
        step = max(step, (hi - lo) / (grid_n - 1))

    lo_obs, hi_obs = math.inf, -math.inf
    env = {}

    def scan(depth):
        nonlocal lo_obs, hi_obs
        if depth == len(variables):
            v = evaluate(node, env)
            if v < lo_obs:
                lo_obs = v
            if v > hi_obs:
                hi_obs = v
            return
        for val in axes[depth]:
            env[variables[depth]] = val
            scan(depth + 1)

    if not variables:
        lo_obs = hi_obs = evaluate(node, {})
    else:
        scan(0)
    report = BoundsReport(lo_obs, hi_obs, step, margin)
    return report


def require_positive(node, domain, grid_n=101, margin=1e-3, variables=None, what="expression"):
    report = check_bounds(node, domain, grid_n, margin, variables)
    if not report.passed:
        raise ValidationFailed(
            f"{what} must be positive on the domain: grid minimum "
            f"{report.min_observed:g} minus margin {margin:g} is not > 0"
        )
    return report
