"""A small arithmetic expression language for inline problem coefficients.

Grammar: numbers, the variables ``s t x y z u v a``, binary ``+ - * / ^``,
unary minus, parentheses and the functions ``sin cos exp min max``.
``^`` is right associative and binds tighter than unary minus.

Expressions are stored as nested tuples, simplified on construction, and can
be differentiated symbolically.  Two expressions compare equal when their
simplified trees are equal.
"""
from __future__ import annotations

import re
from typing import Mapping

import numpy as np

from .errors import ExpressionError

__all__ = ["Expression", "parse", "VARIABLES", "FUNCTIONS"]

VARIABLES = ("s", "t", "x", "y", "z", "u", "v", "a")
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "min": 2, "max": 2}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")
_BINARY = {"+": (10, "add"), "-": (10, "sub"), "*": (20, "mul"), "/": (20, "div"), "^": (30, "pow")}


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        start = m.start(m.lastindex)
        num, name, sym = m.groups()
        if num is not None:
            out.append(("num", float(num), start))
        elif name is not None:
            out.append(("name", name, start))
        else:
            if sym not in "+-*/^(),":
                raise ExpressionError(f"unexpected character {sym!r}", start)
            out.append(("sym", sym, start))
        pos = m.end()
    out.append(("end", None, len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, sym):
        kind, val, pos = self.take()
        if kind != "sym" or val != sym:
            raise ExpressionError(f"expected {sym!r}", pos)

    def parse(self):
        if self.peek()[0] == "end":
            raise ExpressionError("empty expression", 0)
        node = self.expr(0)
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", pos)
        return node

    def expr(self, min_bp):
        left = self.prefix()
        while True:
            kind, val, pos = self.peek()
            if kind != "sym" or val not in _BINARY:
                return left
            bp, op = _BINARY[val]
            if bp < min_bp:
                return left
            self.take()
            # '^' is right associative
            right = self.expr(bp if op == "pow" else bp + 1)
            left = (op, left, right)

    def prefix(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", val)
        if kind == "sym" and val == "-":
            return ("neg", self.expr(25))
        if kind == "sym" and val == "+":
            return self.expr(25)
        if kind == "sym" and val == "(":
            node = self.expr(0)
            self.expect(")")
            return node
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.expr(0)]
                while self.peek()[:2] == ("sym", ","):
                    self.take()
                    args.append(self.expr(0))
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ExpressionError(f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", pos)
                return (val, *args)
            if val in VARIABLES:
                return ("var", val)
            raise ExpressionError(f"unknown name {val!r}", pos)
        if kind == "end":
            raise ExpressionError("unexpected end of expression", pos)
        raise ExpressionError(f"unexpected token {val!r}", pos)


# ---------------------------------------------------------------- simplify

def _num(v):
    return ("num", float(v))


def _is_num(n, value=None):
    return n[0] == "num" and (value is None or n[1] == value)


_FOLD = {
    "add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b, "pow": lambda a, b: a ** b,
}
_UNARY_NP = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log}


def simplify(n):
    op = n[0]
    if op in ("num", "var"):
        return n
    args = tuple(simplify(c) for c in n[1:])
    if all(_is_num(c) for c in args) and op != "select":
        vals = [c[1] for c in args]
        try:
            if op == "neg":
                return _num(-vals[0])
            if op in _FOLD:
                if op == "div" and vals[1] == 0:
                    raise ZeroDivisionError
                return _num(_FOLD[op](*vals))
            if op in _UNARY_NP:
                return _num(float(_UNARY_NP[op](vals[0])))
            if op == "min":
                return _num(min(vals))
            if op == "max":
                return _num(max(vals))
        except (ZeroDivisionError, OverflowError, ValueError):
            pass
    if op == "neg":
        (a,) = args
        if a[0] == "neg":
            return a[1]
        return ("neg", a)
    if op == "add":
        a, b = args
        if _is_num(a, 0.0):
            return b
        if _is_num(b, 0.0):
            return a
        if b[0] == "neg":
            return simplify(("sub", a, b[1]))
    elif op == "sub":
        a, b = args
        if _is_num(b, 0.0):
            return a
        if _is_num(a, 0.0):
            return simplify(("neg", b))
        if a == b:
            return _num(0.0)
    elif op == "mul":
        a, b = args
        if _is_num(a, 0.0) or _is_num(b, 0.0):
            return _num(0.0)
        if _is_num(a, 1.0):
            return b
        if _is_num(b, 1.0):
            return a
        if _is_num(a, -1.0):
            return simplify(("neg", b))
        if _is_num(b, -1.0):
            return simplify(("neg", a))
    elif op == "div":
        a, b = args
        if _is_num(a, 0.0) and not _is_num(b, 0.0):
            return _num(0.0)
        if _is_num(b, 1.0):
            return a
    elif op == "pow":
        a, b = args
        if _is_num(b, 0.0):
            return _num(1.0)
        if _is_num(b, 1.0):
            return a
    return (op, *args)


# ------------------------------------------------------------------ diff

def _d(n, var):
    op = n[0]
    if op == "num":
        return _num(0.0)
    if op == "var":
        return _num(1.0 if n[1] == var else 0.0)
    if op == "neg":
        return ("neg", _d(n[1], var))
    if op in ("add", "sub"):
        return (op, _d(n[1], var), _d(n[2], var))
    if op == "mul":
        a, b = n[1], n[2]
        return ("add", ("mul", _d(a, var), b), ("mul", a, _d(b, var)))
    if op == "div":
        a, b = n[1], n[2]
        return ("div", ("sub", ("mul", _d(a, var), b), ("mul", a, _d(b, var))), ("pow", b, _num(2.0)))
    if op == "pow":
        a, b = n[1], n[2]
        db = simplify(_d(b, var))
        if _is_num(db, 0.0):
            return ("mul", ("mul", b, ("pow", a, ("sub", b, _num(1.0)))), _d(a, var))
        return ("mul", n, ("add", ("mul", db, ("log", a)), ("div", ("mul", b, _d(a, var)), a)))
    if op == "sin":
        return ("mul", ("cos", n[1]), _d(n[1], var))
    if op == "cos":
        return ("neg", ("mul", ("sin", n[1]), _d(n[1], var)))
    if op == "exp":
        return ("mul", n, _d(n[1], var))
    if op == "log":
        return ("div", _d(n[1], var), n[1])
    if op in ("min", "max"):
        a, b = n[1], n[2]
        first, second = (a, b) if op == "min" else (b, a)
        # select(p, q, A, B) = A where p <= q else B
        return ("select", first, second, _d(a, var) if op == "min" else _d(b, var),
                _d(b, var) if op == "min" else _d(a, var))
    if op == "select":
        return ("select", n[1], n[2], _d(n[3], var), _d(n[4], var))
    raise ExpressionError(f"cannot differentiate node {op!r}")


# --------------------------------------------------------------- printing

_PREC = {"add": 10, "sub": 10, "mul": 20, "div": 20, "neg": 25, "pow": 30}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _fmt_num(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(n, parent=0):
    op = n[0]
    if op == "num":
        s = _fmt_num(n[1])
        return f"({s})" if n[1] < 0 and parent else s
    if op == "var":
        return n[1]
    if op == "neg":
        s = "-" + to_string(n[1], _PREC["neg"])
        return f"({s})" if parent >= _PREC["neg"] else s
    if op in _SYM:
        p = _PREC[op]
        left_p = p + 1 if op == "pow" else p
        right_p = p if op == "pow" else p + 1
        s = f"{to_string(n[1], left_p)} {_SYM[op]} {to_string(n[2], right_p)}"
        return f"({s})" if parent > p else s
    args = ", ".join(to_string(c) for c in n[1:])
    return f"{op}({args})"


# -------------------------------------------------------------- evaluate

def _compile(n):
    op = n[0]
    if op == "num":
        val = n[1]
        return lambda env: val
    if op == "var":
        name = n[1]

        def get(env):
            try:
                return env[name]
            except KeyError:
                raise ExpressionError(f"variable {name!r} not bound") from None
        return get
    kids = [_compile(c) for c in n[1:]]
    if op == "neg":
        (a,) = kids
        return lambda env: -a(env)
    if op in _FOLD:
        fn = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide, "pow": np.power}[op]
        a, b = kids
        return lambda env: fn(a(env), b(env))
    if op in _UNARY_NP:
        fn = _UNARY_NP[op]
        (a,) = kids
        return lambda env: fn(a(env))
    if op == "min":
        a, b = kids
        return lambda env: np.minimum(a(env), b(env))
    if op == "max":
        a, b = kids
        return lambda env: np.maximum(a(env), b(env))
    if op == "select":
        p, q, A, B = kids
        return lambda env: np.where(np.less_equal(p(env), q(env)), A(env), B(env))
    raise ExpressionError(f"unknown node {op!r}")


def _variables(n, acc):
    if n[0] == "var":
        acc.add(n[1])
    elif n[0] != "num":
        for c in n[1:]:
            _variables(c, acc)
    return acc


class Expression:
    """Parsed, simplified expression with numpy evaluation."""

    __slots__ = ("node", "_fn")

    def __init__(self, source):
        node = _Parser(source).parse() if isinstance(source, str) else source
        self.node = simplify(node)
        self._fn = _compile(self.node)

    @property
    def variables(self) -> frozenset:
        return frozenset(_variables(self.node, set()))

    @property
    def is_constant(self) -> bool:
        return self.node[0] == "num"

    @property
    def constant_value(self):
        return self.node[1] if self.is_constant else None

    def diff(self, var: str) -> "Expression":
        if var not in VARIABLES:
            raise ExpressionError(f"unknown variable {var!r}")
        return Expression(_d(self.node, var))

    def __call__(self, env: Mapping[str, object] | None = None, **kwargs):
        env = dict(env or {}, **kwargs)
        with np.errstate(all="ignore"):
            return self._fn(env)

    def __str__(self):
        return to_string(self.node)

    def __repr__(self):
        return f"Expression({str(self)!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.node == other.node

    def __hash__(self):
        return hash(self.node)


def parse(text: str) -> Expression:
    return Expression(text)
