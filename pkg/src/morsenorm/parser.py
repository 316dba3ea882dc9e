"""Polynomial expression language and JSON problem files.

Grammar (whitespace is ignored)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | VARIABLE | '(' expr ')'
    NUMBER  := digits ['.' digits] [('e'|'E') ['+'|'-'] digits]
    VARIABLE:= 'x' digits                 # x1 .. xn

Rational literals are written ``p/q``; division is only allowed by
constants.  Exponents must evaluate to non-negative integer constants.
Decimal literals are read as exact rationals (``0.1 == 1/10``).
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import jsonschema
from gmpy2 import mpq

from .jets import Jet, exact_det, grlex_key

__all__ = [
    "ParseError",
    "TruncationWarning",
    "SpecError",
    "SchemaError",
    "InvariantError",
    "parse_expression",
    "format_jet",
    "ProblemSpec",
    "load_problem",
    "problem_from_dict",
    "PROBLEM_SCHEMA",
]


class ParseError(ValueError):
    """Malformed expression.

    Attributes
    ----------
    position : int
        0-based character offset of the offending token (``len(text)`` at end of input).
    expected : tuple of str
        Token kinds that would have been accepted there.
    """

    def __init__(self, message, position, expected=()):
        self.message = message
        self.position = position
        self.expected = tuple(expected)
        detail = f" (expected {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class TruncationWarning(UserWarning):
    """An expression has terms above the requested truncation order."""


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)|(?P<var>x\d+)|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    pos = 0
    tokens = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos,
                             ("number", "variable", "operator"))
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


MAX_DEGREE = 256

# AST nodes are tuples: ("num", Fraction), ("var", i), ("neg", x), (op, a, b)

class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = n
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            raise ParseError("empty expression", 0, ("number", "variable", "'('"))
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos, ("operator", "end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            _, op, pos = self.take()
            rhs = self.unary()
            if op == "/" and _degree(rhs) > 0:
                raise ParseError("division by a non-constant expression", pos, ("constant divisor",))
            node = (op, node, rhs)
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            inner = self.unary()
            return ("neg", inner) if val == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            epos = self.peek()[2]
            exp_node = self.unary()
            if _degree(exp_node) > 0:
                raise ParseError("exponent must be a constant", epos, ("integer",))
            e = _constant_value(exp_node)
            if e is None or e.denominator != 1 or e < 0:
                raise ParseError("exponent must be a non-negative integer", epos, ("integer",))
            if _degree(base) * int(e) > MAX_DEGREE or int(e) > 16 * MAX_DEGREE:
                raise ParseError(f"degree exceeds {MAX_DEGREE}", epos, ("smaller exponent",))
            return ("^", base, int(e))
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", Fraction(val))
        if kind == "var":
            idx = int(val[1:])
            if not 1 <= idx <= self.n:
                raise ParseError(f"unknown variable {val} (dimension is {self.n})", pos,
                                 tuple(f"x{j}" for j in range(1, self.n + 1)))
            return ("var", idx - 1)
        if kind == "op" and val == "(":
            node = self.expr()
            k2, v2, p2 = self.take()
            if not (k2 == "op" and v2 == ")"):
                raise ParseError(f"unexpected token {v2!r}" if v2 else "unexpected end of input", p2, ("')'",))
            return node
        expected = ("number", "variable", "'('")
        if kind == "end":
            raise ParseError("unexpected end of input", pos, expected)
        raise ParseError(f"unexpected token {val!r}", pos, expected)


def _degree(node):
    tag = node[0]
    if tag == "num":
        return 0
    if tag == "var":
        return 1
    if tag == "neg":
        return _degree(node[1])
    if tag == "^":
        return _degree(node[1]) * node[2]
    if tag == "*":
        return _degree(node[1]) + _degree(node[2])
    if tag == "/":
        return _degree(node[1])
    return max(_degree(node[1]), _degree(node[2]))


def _constant_value(node):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        return None
    if tag == "neg":
        v = _constant_value(node[1])
        return None if v is None else -v
    if tag == "^":
        v = _constant_value(node[1])
        return None if v is None else v ** node[2]
    a, b = _constant_value(node[1]), _constant_value(node[2])
    if a is None or b is None:
        return None
    if tag == "/":
        return None if b == 0 else a / b
    return {"+": a + b, "-": a - b, "*": a * b}[tag]


def _evaluate(node, n, order):
    tag = node[0]
    if tag == "num":
        return Jet.constant(n, order, node[1])
    if tag == "var":
        return Jet.variable(n, node[1], order)
    if tag == "neg":
        return -_evaluate(node[1], n, order)
    if tag == "^":
        return _evaluate(node[1], n, order) ** node[2]
    a = _evaluate(node[1], n, order)
    b = _evaluate(node[2], n, order)
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    c = b.constant_term()
    if c == 0:
        raise ZeroDivisionError("division by zero in expression")
    return a.scale(1 / c)


def parse_expression(text: str, n: int, order: int | None = None) -> Jet:
    """Parse a polynomial in ``x1..xn`` into an exact :class:`Jet`.

    Parameters
    ----------
    text : str
        Expression in the grammar of this module.
    n : int
        Number of variables.
    order : int, optional
        Truncation order.  Terms above it are dropped with a
        :class:`TruncationWarning`.  By default the full polynomial is kept
        (order = its degree).

    Raises
    ------
    ParseError
        On any syntax error, unknown variable or illegal exponent/division.
    """
    if not isinstance(text, str):
        raise ParseError("expression must be a string", 0, ("string",))
    parser = _Parser(text, n)
    tree = parser.parse()
    try:
        full = _evaluate(tree, n, max(_degree(tree), 0))
    except ZeroDivisionError as exc:
        raise ParseError(str(exc), 0, ("nonzero divisor",)) from None
    if order is None:
        return full
    if full.degree() > order:
        warnings.warn(f"expression {text!r} has degree {full.degree()} > order {order}; truncated",
                      TruncationWarning, stacklevel=2)
    return Jet._raw(n, order, {a: c for a, c in full.terms.items() if sum(a) <= order}, full.exact)


def _format_coeff(c):
    if isinstance(c, float):
        return repr(abs(c))
    c = abs(c)
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def _format_monomial(a):
    parts = []
    for j, e in enumerate(a):
        if e == 1:
            parts.append(f"x{j + 1}")
        elif e > 1:
            parts.append(f"x{j + 1}^{e}")
    return "*".join(parts)


def format_jet(jet: Jet) -> str:
    """Canonical text of a jet, re-parseable by :func:`parse_expression`.

    Terms appear in graded-lex order; rational coefficients print as ``p/q``.
    """
    if jet.is_zero():
        return "0"
    out = []
    for a in sorted(jet.terms, key=grlex_key):
        c = jet.terms[a]
        neg = c < 0
        mon = _format_monomial(a)
        mag = _format_coeff(c)
        if not mon:
            body = mag
        elif mag == "1":
            body = mon
        else:
            body = f"{mag}*{mon}"
        if not out:
            out.append(f"-{body}" if neg else body)
        else:
            out.append(f" - {body}" if neg else f" + {body}")
    return "".join(out)


# -- problem files -------------------------------------------------------------

PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "function": {"type": "string"},
        "metric": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "string"}},
        },
        "field": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "order": {"type": "integer", "minimum": 2},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "bump": {
            "type": "object",
            "properties": {
                "inner": {"type": "number", "exclusiveMinimum": 0},
                "outer": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {
                "float_zero": {"type": "number", "exclusiveMinimum": 0},
                "ode": {"type": "number", "exclusiveMinimum": 0},
                "conjugacy": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "resonance_order": {"type": "integer", "minimum": 2},
        "seeds": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "description": {"type": "string"},
    },
    "required": ["dimension"],
    "additionalProperties": False,
}

DEFAULTS = {
    "order": 8,
    "radius": 1.0,
    "bump": {"inner": 0.5, "outer": 1.0},
    "tolerances": {"float_zero": 1e-12, "ode": 1e-10, "conjugacy": 1e-6},
}


class SpecError(ValueError):
    """Invalid problem specification."""


class SchemaError(SpecError):
    def __init__(self, message, path):
        self.path = path
        super().__init__(f"{path}: {message}")


class InvariantError(SpecError):
    def __init__(self, invariant, message):
        self.invariant = invariant
        super().__init__(f"invariant '{invariant}' violated: {message}")


@dataclass(frozen=True)
class ProblemSpec:
    """Validated problem: a Morse function with a metric, or a raw vector field.

    Polynomials are stored in full (no truncation); consumers truncate to
    ``order`` as needed.  ``defaults`` lists the keys that were filled in.
    """

    n: int
    order: int
    radius: float
    bump_inner: float
    bump_outer: float
    float_zero: float
    ode_tol: float
    conjugacy_tol: float
    resonance_order: int
    function: Jet | None = None
    metric: tuple | None = None
    field: tuple | None = None
    function_text: str | None = None
    metric_text: tuple | None = None
    field_text: tuple | None = None
    seeds: tuple | None = None
    description: str | None = None
    defaults: tuple = dc_field(default=())

    @property
    def mode(self) -> str:
        return "function" if self.function is not None else "field"

    def to_dict(self) -> dict:
        """Resolved spec in file form (all defaults explicit)."""
        d = {"dimension": self.n}
        if self.description is not None:
            d["description"] = self.description
        if self.mode == "function":
            d["function"] = self.function_text
            d["metric"] = [list(r) for r in self.metric_text]
        else:
            d["field"] = list(self.field_text)
        d["order"] = self.order
        d["radius"] = self.radius
        d["bump"] = {"inner": self.bump_inner, "outer": self.bump_outer}
        d["tolerances"] = {"float_zero": self.float_zero, "ode": self.ode_tol,
                           "conjugacy": self.conjugacy_tol}
        d["resonance_order"] = self.resonance_order
        if self.seeds is not None:
            d["seeds"] = [list(s) for s in self.seeds]
        return d

    def replace(self, **changes) -> "ProblemSpec":
        d = self.to_dict()
        d.update(changes)
        return problem_from_dict(d)


def _parse_in(text, n, path):
    try:
        return parse_expression(text, n)
    except ParseError as exc:
        raise SchemaError(f"{exc}", path) from None


def problem_from_dict(data: dict) -> ProblemSpec:
    """Validate a decoded problem file and fill defaults."""
    validator = jsonschema.Draft7Validator(PROBLEM_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/" + "/".join(str(p) for p in err.absolute_path)
        raise SchemaError(err.message, path)
    n = data["dimension"]
    has_f, has_v = "function" in data, "field" in data
    if has_f == has_v:
        raise SchemaError("exactly one of 'function' or 'field' is required", "/")
    if has_v and "metric" in data:
        raise SchemaError("'metric' only applies with 'function'", "/metric")

    filled = []
    order = data.get("order")
    if order is None:
        order = DEFAULTS["order"]
        filled.append("order")
    radius = data.get("radius")
    if radius is None:
        radius = DEFAULTS["radius"]
        filled.append("radius")
    bump = dict(data.get("bump", {}))
    for key in ("inner", "outer"):
        if key not in bump:
            bump[key] = DEFAULTS["bump"][key]
            filled.append(f"bump.{key}")
    tols = dict(data.get("tolerances", {}))
    for key in ("float_zero", "ode", "conjugacy"):
        if key not in tols:
            tols[key] = DEFAULTS["tolerances"][key]
            filled.append(f"tolerances.{key}")
    res_order = data.get("resonance_order")
    if res_order is None:
        res_order = order
        filled.append("resonance_order")

    if not 0 < bump["inner"] < bump["outer"] <= radius:
        raise InvariantError("bump", f"need 0 < inner ({bump['inner']}) < outer ({bump['outer']})"
                                     f" <= radius ({radius})")

    function = metric = fld = None
    f_text = m_text = v_text = None
    if has_f:
        f_text = data["function"]
        function = _parse_in(f_text, n, "/function")
        m_text = data.get("metric")
        if m_text is None:
            m_text = [["1" if i == j else "0" for j in range(n)] for i in range(n)]
            filled.append("metric")
        if len(m_text) != n or any(len(r) != n for r in m_text):
            raise SchemaError(f"metric must be {n}x{n}", "/metric")
        metric = tuple(tuple(_parse_in(m_text[i][j], n, f"/metric/{i}/{j}") for j in range(n))
                       for i in range(n))
        for i in range(n):
            for j in range(i):
                if metric[i][j] != metric[j][i]:
                    raise InvariantError("metric_symmetric", f"g[{i + 1}][{j + 1}] != g[{j + 1}][{i + 1}]")
        g0 = [[metric[i][j].constant_term() for j in range(n)] for i in range(n)]
        for r in range(1, n + 1):
            if exact_det([row[:r] for row in g0[:r]]) <= 0:
                raise InvariantError("metric_positive_definite",
                                     "metric at the origin is not positive definite")
        m_text = tuple(tuple(r) for r in m_text)
    else:
        v_text = tuple(data["field"])
        if len(v_text) != n:
            raise SchemaError(f"field needs {n} components, got {len(v_text)}", "/field")
        fld = tuple(_parse_in(t, n, f"/field/{i}") for i, t in enumerate(v_text))
        for i, c in enumerate(fld):
            if c.constant_term() != 0:
                raise InvariantError("field_vanishes_at_origin", f"component {i + 1} has a constant term")

    seeds = data.get("seeds")
    if seeds is not None:
        if any(len(s) != n for s in seeds):
            raise SchemaError(f"seeds must have {n} coordinates", "/seeds")
        if any(math.hypot(*s) > radius for s in seeds):
            raise InvariantError("seeds_in_domain", "every seed must lie within the domain radius")
        seeds = tuple(tuple(float(v) for v in s) for s in seeds)

    return ProblemSpec(
        n=n, order=order, radius=float(radius), bump_inner=float(bump["inner"]),
        bump_outer=float(bump["outer"]), float_zero=float(tols["float_zero"]),
        ode_tol=float(tols["ode"]), conjugacy_tol=float(tols["conjugacy"]),
        resonance_order=res_order, function=function, metric=metric, field=fld,
        function_text=f_text, metric_text=m_text, field_text=v_text, seeds=seeds,
        description=data.get("description"), defaults=tuple(filled),
    )


def load_problem(path) -> ProblemSpec:
    """Read and validate a JSON problem file.

    Raises
    ------
    SchemaError
        Malformed JSON, schema violation (with the JSON path), or bad expression.
    InvariantError
        A named invariant fails (``bump``, ``metric_symmetric``, ...).
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise SpecError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno})", "/") from None
    if not isinstance(data, dict):
        raise SchemaError("top level must be an object", "/")
    return problem_from_dict(data)


def rational(value) -> mpq:
    """Exact rational from an int, Fraction, mpq or decimal string."""
    if isinstance(value, str):
        f = Fraction(value)
        return mpq(f.numerator, f.denominator)
    return mpq(value)
