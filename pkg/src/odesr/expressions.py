"""Symbolic expression trees for ODE right-hand sides.

An expression is an immutable tree of constants, variables and operators.
Binary operators are restricted to {add, mul}; subtraction and division
are expressed through negation and reciprocal unaries. Trees are hashable,
compared structurally, and never simplified.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Union

UNARY_OPS = (
    "sin", "cos", "tan", "cot", "exp", "log", "sqrt", "abs",
    "inv", "pow2", "pow3", "neg",
)
BINARY_OPS = ("add", "mul")

# Subset the random generator draws from; the rest exists so benchmark
# equations can be represented and evaluated.
GENERATOR_UNARY_OPS = ("sin", "inv", "pow2")

_UNARY_SET = frozenset(UNARY_OPS)
_BINARY_SET = frozenset(BINARY_OPS)


class MalformedExpressionError(ValueError):
    """Raised when a symbol sequence or infix string is not a valid expression."""


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Variable:
    index: int


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expression"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expression"
    right: "Expression"


Expression = Union[Constant, Variable, Unary, Binary]


@dataclass(frozen=True)
class OdeSystem:
    """A D-dimensional first-order ODE right-hand side, one expression per component."""

    dimension: int
    components: tuple[Expression, ...]

    def __post_init__(self):
        if self.dimension < 1 or len(self.components) != self.dimension:
            raise ValueError(
                f"system needs exactly {self.dimension} components, got {len(self.components)}"
            )
        for comp in self.components:
            for node in iter_nodes(comp):
                if isinstance(node, Variable) and node.index >= self.dimension:
                    raise ValueError(
                        f"variable x_{node.index} out of range for dimension {self.dimension}"
                    )

    @classmethod
    def from_components(cls, components) -> "OdeSystem":
        components = tuple(components)
        return cls(dimension=len(components), components=components)


def iter_nodes(expr: Expression) -> Iterator[Expression]:
    """Preorder iteration over every node of the tree."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.child)
        elif isinstance(node, Binary):
            stack.append(node.right)
            stack.append(node.left)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(expr: Expression, x) -> float:
    """Evaluate at a point. Domain violations yield NaN instead of raising."""
    try:
        return _eval(expr, x)
    except (ValueError, OverflowError, ZeroDivisionError):
        return float("nan")


def _eval(expr: Expression, x) -> float:
    if isinstance(expr, Constant):
        return expr.value
    if isinstance(expr, Variable):
        return float(x[expr.index])
    if isinstance(expr, Unary):
        v = _eval(expr.child, x)
        op = expr.op
        if op == "sin":
            return math.sin(v)
        if op == "cos":
            return math.cos(v)
        if op == "tan":
            return math.tan(v)
        if op == "cot":
            return math.cos(v) / math.sin(v)
        if op == "exp":
            return math.exp(v)
        if op == "log":
            return math.log(v)
        if op == "sqrt":
            return math.sqrt(v)
        if op == "abs":
            return abs(v)
        if op == "inv":
            return 1.0 / v
        if op == "pow2":
            return v * v
        if op == "pow3":
            return v * v * v
        if op == "neg":
            return -v
        raise MalformedExpressionError(f"unknown unary operator {op!r}")
    l = _eval(expr.left, x)
    r = _eval(expr.right, x)
    if expr.op == "add":
        return l + r
    if expr.op == "mul":
        return l * r
    raise MalformedExpressionError(f"unknown binary operator {expr.op!r}")


_PY_UNARY = {
    "sin": "math.sin({0})",
    "cos": "math.cos({0})",
    "tan": "math.tan({0})",
    "cot": "(math.cos({0}) / math.sin({0}))",
    "exp": "math.exp({0})",
    "log": "math.log({0})",
    "sqrt": "math.sqrt({0})",
    "abs": "abs({0})",
    "inv": "(1.0 / {0})",
    "pow2": "({0}) ** 2",
    "pow3": "({0}) ** 3",
    "neg": "(-({0}))",
}


def _py_source(expr: Expression) -> str:
    if isinstance(expr, Constant):
        return repr(float(expr.value))
    if isinstance(expr, Variable):
        return f"x[{expr.index}]"
    if isinstance(expr, Unary):
        return _PY_UNARY[expr.op].format(_py_source(expr.child))
    l, r = _py_source(expr.left), _py_source(expr.right)
    return f"({l} + {r})" if expr.op == "add" else f"({l} * {r})"


def compile_system(sys: OdeSystem) -> Callable:
    """Compile all components into a single fast callable x -> tuple of D floats.

    Domain violations surface as NaN in every slot, matching `evaluate`.
    Used by the integrator where per-call overhead of tree walking matters.
    """
    body = ", ".join(_py_source(c) for c in sys.components)
    src = f"def _rhs(x):\n    return ({body},)"
    namespace = {"math": math}
    exec(compile(src, "<ode-system>", "exec"), namespace)
    raw = namespace["_rhs"]
    nan_tuple = (float("nan"),) * sys.dimension

    def rhs(x):
        try:
            return raw(x)
        except (ValueError, OverflowError, ZeroDivisionError):
            return nan_tuple

    return rhs


# ---------------------------------------------------------------------------
# Prefix form
# ---------------------------------------------------------------------------

def to_prefix(expr: Expression) -> list:
    """Preorder symbol list; constants appear as bare floats."""
    out: list = []
    _prefix(expr, out)
    return out


def _prefix(expr: Expression, out: list) -> None:
    if isinstance(expr, Constant):
        out.append(float(expr.value))
    elif isinstance(expr, Variable):
        out.append(f"x_{expr.index}")
    elif isinstance(expr, Unary):
        out.append(expr.op)
        _prefix(expr.child, out)
    else:
        out.append(expr.op)
        _prefix(expr.left, out)
        _prefix(expr.right, out)


_VAR_RE = re.compile(r"^x_(\d+)$")


def parse_prefix(symbols) -> Expression:
    """Inverse of `to_prefix`. Raises MalformedExpressionError on bad input."""
    expr, pos = _parse_at(list(symbols), 0)
    if pos != len(symbols):
        raise MalformedExpressionError(f"trailing symbols after position {pos}")
    return expr


def _parse_at(symbols: list, pos: int):
    if pos >= len(symbols):
        raise MalformedExpressionError("truncated symbol sequence")
    sym = symbols[pos]
    if isinstance(sym, (int, float)) and not isinstance(sym, bool):
        return Constant(float(sym)), pos + 1
    if not isinstance(sym, str):
        raise MalformedExpressionError(f"unknown symbol {sym!r}")
    m = _VAR_RE.match(sym)
    if m:
        return Variable(int(m.group(1))), pos + 1
    if sym in _UNARY_SET:
        child, pos = _parse_at(symbols, pos + 1)
        return Unary(sym, child), pos
    if sym in _BINARY_SET:
        left, pos = _parse_at(symbols, pos + 1)
        right, pos = _parse_at(symbols, pos)
        return Binary(sym, left, right), pos
    raise MalformedExpressionError(f"unknown symbol {sym!r}")


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------

def complexity(expr: Expression) -> int:
    """Total count of operators, variables and constants."""
    return sum(1 for _ in iter_nodes(expr))


def system_complexity(sys: OdeSystem) -> int:
    return sum(complexity(c) for c in sys.components)


# ---------------------------------------------------------------------------
# Infix rendering
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW = 1, 2, 3, 4


def to_infix(expr: Expression) -> str:
    """Human-readable infix text with explicit parentheses where needed.

    Constants carry 17 significant digits so the numeric value survives
    a print/parse round trip bitwise.
    """
    text, _ = _infix(expr)
    return text


def _infix(expr: Expression):
    if isinstance(expr, Constant):
        text = format(expr.value, ".17g")
        return text, _PREC_UNARY if expr.value >= 0 else _PREC_ADD
    if isinstance(expr, Variable):
        return f"x_{expr.index}", _PREC_POW
    if isinstance(expr, Unary):
        child, cprec = _infix(expr.child)
        if expr.op == "neg":
            inner = child if cprec >= _PREC_MUL else f"({child})"
            return f"-{inner}", _PREC_ADD
        if expr.op == "inv":
            inner = child if cprec >= _PREC_POW else f"({child})"
            return f"1/{inner}", _PREC_MUL
        if expr.op == "pow2":
            inner = child if cprec >= _PREC_POW else f"({child})"
            return f"{inner}**2", _PREC_POW
        if expr.op == "pow3":
            inner = child if cprec >= _PREC_POW else f"({child})"
            return f"{inner}**3", _PREC_POW
        return f"{expr.op}({child})", _PREC_POW
    left, lprec = _infix(expr.left)
    right, rprec = _infix(expr.right)
    if expr.op == "add":
        rtext = right if rprec >= _PREC_ADD else f"({right})"
        ltext = left if lprec >= _PREC_ADD else f"({left})"
        return f"{ltext} + {rtext}", _PREC_ADD
    ltext = left if lprec >= _PREC_MUL else f"({left})"
    rtext = right if rprec >= _PREC_MUL else f"({right})"
    return f"{ltext} * {rtext}", _PREC_MUL


def system_to_infix(sys: OdeSystem) -> list[str]:
    return [to_infix(c) for c in sys.components]


# ---------------------------------------------------------------------------
# Infix parsing (used to load benchmark equations from their text source)
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(x_\d+|c_\d+|[A-Za-z]+)"
    r"|(\*\*|[()+\-*/^]))"
)

_FUNC_NAMES = frozenset(
    {"sin", "cos", "tan", "cot", "exp", "log", "sqrt", "abs"}
)


def parse_infix(text: str, params: Mapping[str, float] | None = None) -> Expression:
    """Parse infix text into an Expression.

    Supports +, -, *, /, ** (also ^), unary minus, the function names in
    `_FUNC_NAMES`, variables x_0.., and parameter placeholders c_0.. which
    are substituted from `params`. Division lowers to mul/inv, subtraction
    to add/neg, powers to pow2/pow3/product chains (or exp(c*log(x)) for
    non-integer exponents).
    """
    tokens = _tokenize(text)
    parser = _InfixParser(tokens, dict(params or {}))
    expr = parser.parse_expr()
    if parser.pos != len(tokens):
        raise MalformedExpressionError(f"unexpected token {tokens[parser.pos]!r} in {text!r}")
    return expr


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise MalformedExpressionError(f"cannot tokenize at {text[pos:]!r}")
        tokens.append(m.group(0).strip())
        pos = m.end()
    return tokens


class _InfixParser:
    def __init__(self, tokens: list[str], params: dict):
        self.tokens = tokens
        self.params = params
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise MalformedExpressionError("unexpected end of input")
        self.pos += 1
        return tok

    def parse_expr(self) -> Expression:
        node = self.parse_term()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.parse_term()
            if op == "-":
                rhs = _negate(rhs)
            node = Binary("add", node, rhs)
        return node

    def parse_term(self) -> Expression:
        node = self.parse_factor()
        while self.peek() in ("*", "/"):
            op = self.take()
            rhs = self.parse_factor()
            if op == "/":
                rhs = Unary("inv", rhs)
            node = Binary("mul", node, rhs)
        return node

    def parse_factor(self) -> Expression:
        if self.peek() == "-":
            self.take()
            return _negate(self.parse_factor())
        if self.peek() == "+":
            self.take()
            return self.parse_factor()
        return self.parse_power()

    def parse_power(self) -> Expression:
        base = self.parse_atom()
        if self.peek() in ("**", "^"):
            self.take()
            exponent = self.parse_factor()
            return _lower_power(base, exponent)
        return base

    def parse_atom(self) -> Expression:
        tok = self.take()
        if tok == "(":
            node = self.parse_expr()
            if self.take() != ")":
                raise MalformedExpressionError("missing closing parenthesis")
            return node
        if re.fullmatch(r"\d.*|\.\d.*", tok):
            return Constant(float(tok))
        m = _VAR_RE.match(tok)
        if m:
            return Variable(int(m.group(1)))
        if tok.startswith("c_"):
            if tok not in self.params:
                raise MalformedExpressionError(f"unbound parameter {tok!r}")
            return Constant(float(self.params[tok]))
        if tok in _FUNC_NAMES:
            if self.take() != "(":
                raise MalformedExpressionError(f"function {tok!r} needs parentheses")
            arg = self.parse_expr()
            if self.take() != ")":
                raise MalformedExpressionError(f"unclosed argument of {tok!r}")
            return Unary(tok, arg)
        raise MalformedExpressionError(f"unknown token {tok!r}")


def _negate(expr: Expression) -> Expression:
    if isinstance(expr, Constant):
        return Constant(-expr.value)
    return Unary("neg", expr)


def _lower_power(base: Expression, exponent: Expression) -> Expression:
    if not isinstance(exponent, Constant):
        raise MalformedExpressionError("exponent must be a number or bound parameter")
    p = exponent.value
    if p == int(p):
        n = int(p)
        if n == 0:
            return Constant(1.0)
        if n < 0:
            return Unary("inv", _int_power(base, -n))
        return _int_power(base, n)
    # non-integer exponent: valid on positive bases only, like the source equations
    return Unary("exp", Binary("mul", Constant(p), Unary("log", base)))


def _int_power(base: Expression, n: int) -> Expression:
    if n == 1:
        return base
    if n == 2:
        return Unary("pow2", base)
    if n == 3:
        return Unary("pow3", base)
    if n % 2 == 0:
        return Unary("pow2", _int_power(base, n // 2))
    return Binary("mul", _int_power(base, n - 1), base)


# ---------------------------------------------------------------------------
# Constant access (used by the parameter refinement step)
# ---------------------------------------------------------------------------

def collect_constants(sys: OdeSystem) -> list[float]:
    """All constants in preorder, component by component."""
    values = []
    for comp in sys.components:
        for node in iter_nodes(comp):
            if isinstance(node, Constant):
                values.append(node.value)
    return values


def replace_constants(sys: OdeSystem, values) -> OdeSystem:
    """Rebuild the system with constants substituted in `collect_constants` order."""
    values = list(values)
    it = iter(values)
    new_components = tuple(_replace(c, it) for c in sys.components)
    try:
        next(it)
    except StopIteration:
        return OdeSystem(sys.dimension, new_components)
    raise ValueError("too many constant values supplied")


def _replace(expr: Expression, it) -> Expression:
    if isinstance(expr, Constant):
        try:
            return Constant(float(next(it)))
        except StopIteration:
            raise ValueError("not enough constant values supplied") from None
    if isinstance(expr, Variable):
        return expr
    if isinstance(expr, Unary):
        return Unary(expr.op, _replace(expr.child, it))
    return Binary(expr.op, _replace(expr.left, it), _replace(expr.right, it))


def substitute_variables(expr: Expression, mapping: Mapping[int, Expression]) -> Expression:
    """Replace every Variable(i) with mapping[i] (identity where missing)."""
    if isinstance(expr, Constant):
        return expr
    if isinstance(expr, Variable):
        return mapping.get(expr.index, expr)
    if isinstance(expr, Unary):
        return Unary(expr.op, substitute_variables(expr.child, mapping))
    return Binary(
        expr.op,
        substitute_variables(expr.left, mapping),
        substitute_variables(expr.right, mapping),
    )
