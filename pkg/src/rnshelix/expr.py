"""Scalar expressions over named variables with second-order forward-mode jets.

Expressions are parsed into an immutable tree and compiled on first use into
straight-line Python that propagates value, gradient and Hessian together.
Structurally zero derivative entries are dropped at compile time, which keeps
the hot path (surface partials inside the ODE right-hand sides) cheap.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt")
CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed source text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at byte {offset})")


class UndeclaredIdentifier(ExprSyntaxError):
    def __init__(self, name: str, offset: int, source: str = ""):
        self.name = name
        super().__init__(f'undeclared identifier "{name}"', offset, source)


class ExprDomainError(ExprError):
    """Evaluation left an operator's domain (division by zero, ln of x <= 0, ...)."""

    def __init__(self, message: str, node: "Node"):
        self.node = node
        super().__init__(f"{message} in '{to_text(node)}'")


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Num | Var | Neg | BinOp | Pow | Call


@dataclass(frozen=True)
class ExprAst:
    root: Node
    variables: tuple[str, ...]
    _compiled: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __str__(self) -> str:
        return to_text(self.root)

    def value(self, point: Sequence[float]) -> float:
        return evaluate(self, point)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            ws = len(source[pos:]) - len(source[pos:].lstrip())
            bad = pos + ws
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", _byte(source, bad), source)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


def _byte(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.source = source
        self.vars = {name: i for i, name in enumerate(variables)}
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, _byte(self.source, tok[2]), self.source)

    def expect(self, text: str):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != text:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            self.fail(f"expected {text!r}, found {found}")
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            exponent = self.exponent()
            if _has_var(exponent):
                self.fail("exponent must be a constant", tok)
            node = Pow(node, float(_eval_node(exponent, (), math)))
        return node

    def exponent(self) -> Node:
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            inner = self.exponent()
            return Neg(inner) if tok[1] == "-" else inner
        return self.atom()

    def atom(self) -> Node:
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    self.fail(f'unknown function "{text}"', tok)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in self.vars:
                return Var(text, self.vars[text])
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if text in FUNCTIONS:
                self.fail(f'function "{text}" needs an argument', tok)
            raise UndeclaredIdentifier(text, _byte(self.source, tok[2]), self.source)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.fail("unexpected end of input", tok)
        self.fail(f"unexpected token {text!r}", tok)


def _has_var(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, (Neg, Call)):
        return _has_var(node.arg)
    if isinstance(node, Pow):
        return _has_var(node.base)
    return _has_var(node.left) or _has_var(node.right)


def parse_expr(source: str, variables: Sequence[str]) -> ExprAst:
    """Parse ``source`` into an :class:`ExprAst` over ``variables``.

    Precedence from tightest: ``^`` (constant exponent), unary minus, ``* /``,
    ``+ -``. Binary operators of equal precedence associate to the left.
    ``**`` is accepted as a synonym for ``^`` and ``pi`` is built in.
    """
    if not isinstance(source, str) or source.strip() == "":
        raise ExprSyntaxError("empty expression", 0, source or "")
    variables = tuple(variables)
    if len(set(variables)) != len(variables):
        raise ExprError(f"duplicate variable names in {variables}")
    for name in variables:
        if name in FUNCTIONS or name in CONSTANTS:
            raise ExprError(f'variable name "{name}" is reserved')
    return ExprAst(_Parser(source, variables).parse(), variables)


def constant(source: str) -> float:
    """Evaluate a variable-free expression such as ``"pi/3"``."""
    return evaluate(parse_expr(str(source), ()), ())


# --------------------------------------------------------------------------
# Canonical text
# --------------------------------------------------------------------------


def _num_text(value: float) -> str:
    if value == math.pi:
        return "pi"
    text = repr(float(value))
    if text in ("inf", "-inf", "nan"):
        raise ExprError(f"cannot serialize non-finite constant {text}")
    return text


def to_text(node: Node) -> str:
    """Fully parenthesized serialization; ``parse_expr`` reads it back exactly."""
    if isinstance(node, ExprAst):
        node = node.root
    if isinstance(node, Num):
        text = _num_text(abs(node.value))
        return f"(-{text})" if math.copysign(1.0, node.value) < 0 else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Pow):
        exponent = _num_text(abs(node.exponent))
        if node.exponent < 0:
            exponent = f"(-{exponent})"
        return f"({to_text(node.base)}^{exponent})"
    return f"{node.func}({to_text(node.arg)})"


# --------------------------------------------------------------------------
# Value-only evaluation (generic over the numeric library)
# --------------------------------------------------------------------------


def _eval_node(node: Node, point, lib):
    if isinstance(node, Num):
        return node.value if lib is math else lib.mpf(node.value)
    if isinstance(node, Var):
        return point[node.index]
    if isinstance(node, Neg):
        return -_eval_node(node.arg, point, lib)
    if isinstance(node, BinOp):
        a = _eval_node(node.left, point, lib)
        b = _eval_node(node.right, point, lib)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0:
            raise ExprDomainError("division by zero", node)
        return a / b
    if isinstance(node, Pow):
        a = _eval_node(node.base, point, lib)
        p = node.exponent
        if float(p).is_integer():
            if p < 0 and a == 0:
                raise ExprDomainError("zero to a negative power", node)
            return a ** int(p)
        if a <= 0:
            raise ExprDomainError("non-integer power of a non-positive base", node)
        return a ** (p if lib is math else lib.mpf(p))
    a = _eval_node(node.arg, point, lib)
    if node.func == "ln":
        if a <= 0:
            raise ExprDomainError("ln of a non-positive argument", node)
        return lib.log(a)
    if node.func == "sqrt":
        if a < 0:
            raise ExprDomainError("sqrt of a negative argument", node)
        return lib.sqrt(a)
    return getattr(lib, node.func)(a)


def evaluate(ast: ExprAst, point: Sequence, lib=math):
    """Plain value of ``ast`` at ``point``.

    ``lib`` supplies sin/cos/tan/exp/log/sqrt; passing :mod:`mpmath` evaluates
    in arbitrary precision (used as an independent oracle in the tests).
    """
    if len(point) != len(ast.variables):
        raise ExprError(f"expected {len(ast.variables)} coordinates, got {len(point)}")
    return _eval_node(ast.root, tuple(point), lib)


# --------------------------------------------------------------------------
# Jet compilation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Jet2:
    value: float
    grad: np.ndarray
    hess: np.ndarray


class _Jet:
    """Compile-time jet: names of generated locals, ``None`` for structural zeros."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v = v
        self.g = g
        self.h = h

    @property
    def const(self) -> bool:
        return all(x is None for x in self.g)


def _times(x: str, y: str) -> str:
    if x == "1.0":
        return y
    if y == "1.0":
        return x
    return f"{x} * {y}"


def _sum(terms):
    terms = [t for t in terms if t is not None]
    if not terms:
        return None
    return " + ".join(terms)


class _Codegen:
    def __init__(self, nvars: int, order: int):
        self.n = nvars
        self.order = order
        self.lines: list[str] = []
        self.nodes: list[Node] = []
        self.count = 0
        self.pairs = [(i, j) for i in range(nvars) for j in range(i, nvars)]

    def tmp(self, expr: str | None) -> str | None:
        if expr is None:
            return None
        name = f"t{self.count}"
        self.count += 1
        self.lines.append(f"{name} = {expr}")
        return name

    def guard(self, cond: str, message: str, node: Node):
        self.nodes.append(node)
        self.lines.append(f"if {cond}: _fail({message!r}, {len(self.nodes) - 1})")

    def zero_h(self):
        return {p: None for p in self.pairs}

    def const(self, value: str) -> _Jet:
        return _Jet(value, [None] * self.n, self.zero_h())

    def var(self, index: int) -> _Jet:
        g = [None] * self.n
        g[index] = "1.0"
        return _Jet(f"x{index}", g, self.zero_h())

    def neg(self, a: _Jet) -> _Jet:
        return _Jet(
            self.tmp(f"-{a.v}"),
            [self.tmp(f"-{x}") if x else None for x in a.g],
            {p: self.tmp(f"-{x}") if x else None for p, x in a.h.items()},
        )

    def add(self, a: _Jet, b: _Jet, sign: str) -> _Jet:
        def comb(x, y):
            if x is None and y is None:
                return None
            if y is None:
                return x
            if x is None:
                return self.tmp(f"{sign}{y}") if sign == "-" else y
            return self.tmp(f"{x} {sign} {y}")

        return _Jet(
            self.tmp(f"{a.v} {sign} {b.v}"),
            [comb(x, y) for x, y in zip(a.g, b.g)],
            {p: comb(a.h[p], b.h[p]) for p in self.pairs},
        )

    def mul(self, a: _Jet, b: _Jet) -> _Jet:
        v = self.tmp(f"{a.v} * {b.v}")
        g = [
            self.tmp(_sum([_times(a.v, gb) if gb else None, _times(b.v, ga) if ga else None]))
            for ga, gb in zip(a.g, b.g)
        ]
        h = {}
        if self.order >= 2:
            for i, j in self.pairs:
                terms = [
                    _times(a.v, b.h[i, j]) if b.h[i, j] else None,
                    _times(b.v, a.h[i, j]) if a.h[i, j] else None,
                    _times(a.g[i], b.g[j]) if a.g[i] and b.g[j] else None,
                ]
                if i != j:
                    terms.append(_times(a.g[j], b.g[i]) if a.g[j] and b.g[i] else None)
                else:
                    terms[-1] = "2.0 * " + _times(a.g[i], b.g[i]) if a.g[i] and b.g[i] else None
                h[i, j] = self.tmp(_sum(terms))
        else:
            h = self.zero_h()
        return _Jet(v, g, h)

    def chain(self, a: _Jet, v: str, d1: str, d2: str | None) -> _Jet:
        """Apply a scalar function with value ``v``, derivatives ``d1``, ``d2``."""
        if a.const:
            return _Jet(v, [None] * self.n, self.zero_h())
        g = [(x if d1 == "1.0" else d1 if x == "1.0" else self.tmp(f"{d1} * {x}")) if x else None for x in a.g]
        h = {}
        if self.order >= 2:
            for i, j in self.pairs:
                terms = [
                    _times(d1, a.h[i, j]) if a.h[i, j] else None,
                    _times(_times(d2, a.g[i]), a.g[j]) if a.g[i] and a.g[j] else None,
                ]
                h[i, j] = self.tmp(_sum(terms))
        else:
            h = self.zero_h()
        return _Jet(v, g, h)

    def recip(self, b: _Jet, node: Node) -> _Jet:
        self.guard(f"{b.v} == 0.0", "division by zero", node)
        r = self.tmp(f"1.0 / {b.v}")
        if b.const:
            return self.const(r)
        d1 = self.tmp(f"-{r} * {r}")
        d2 = self.tmp(f"2.0 * {r} * {r} * {r}") if self.order >= 2 else None
        return self.chain(b, r, d1, d2)

    def ipow(self, a: _Jet, k: int) -> _Jet:
        result = None
        base = a
        while k:
            if k & 1:
                result = base if result is None else self.mul(result, base)
            k >>= 1
            if k:
                base = self.mul(base, base)
        return result

    def emit(self, node: Node) -> _Jet:
        if isinstance(node, Num):
            return self.const(repr(node.value))
        if isinstance(node, Var):
            return self.var(node.index)
        if isinstance(node, Neg):
            return self.neg(self.emit(node.arg))
        if isinstance(node, BinOp):
            a = self.emit(node.left)
            b = self.emit(node.right)
            if node.op in "+-":
                return self.add(a, b, node.op)
            if node.op == "*":
                return self.mul(a, b)
            return self.mul(a, self.recip(b, node))
        if isinstance(node, Pow):
            a = self.emit(node.base)
            p = node.exponent
            if p.is_integer():
                k = int(p)
                if k == 0:
                    return self.const("1.0")
                if k > 0:
                    return self.ipow(a, k)
                return self.recip(self.ipow(a, -k), node)
            self.guard(f"{a.v} <= 0.0", "non-integer power of a non-positive base", node)
            v = self.tmp(f"{a.v} ** {p!r}")
            d1 = self.tmp(f"{p!r} * {a.v} ** {p - 1.0!r}")
            d2 = self.tmp(f"{p * (p - 1.0)!r} * {a.v} ** {p - 2.0!r}") if self.order >= 2 else None
            return self.chain(a, v, d1, d2)
        return self.call(node)

    def call(self, node: Call) -> _Jet:
        a = self.emit(node.arg)
        f = node.func
        two = self.order >= 2
        if f == "sin":
            v = self.tmp(f"_sin({a.v})")
            if a.const:
                return self.const(v)
            c = self.tmp(f"_cos({a.v})")
            return self.chain(a, v, c, self.tmp(f"-{v}") if two else None)
        if f == "cos":
            v = self.tmp(f"_cos({a.v})")
            if a.const:
                return self.const(v)
            s = self.tmp(f"_sin({a.v})")
            return self.chain(a, v, self.tmp(f"-{s}"), self.tmp(f"-{v}") if two else None)
        if f == "tan":
            c = self.tmp(f"_cos({a.v})")
            self.guard(f"{c} == 0.0", "tan at a pole", node)
            v = self.tmp(f"_tan({a.v})")
            if a.const:
                return self.const(v)
            d1 = self.tmp(f"1.0 + {v} * {v}")
            return self.chain(a, v, d1, self.tmp(f"2.0 * {v} * {d1}") if two else None)
        if f == "exp":
            v = self.tmp(f"_exp({a.v})")
            return self.chain(a, v, v, v) if not a.const else self.const(v)
        if f == "ln":
            self.guard(f"{a.v} <= 0.0", "ln of a non-positive argument", node)
            v = self.tmp(f"_log({a.v})")
            if a.const:
                return self.const(v)
            r = self.tmp(f"1.0 / {a.v}")
            return self.chain(a, v, r, self.tmp(f"-{r} * {r}") if two else None)
        if f == "sqrt":
            if a.const:
                self.guard(f"{a.v} < 0.0", "sqrt of a negative argument", node)
                return self.const(self.tmp(f"_sqrt({a.v})"))
            self.guard(f"{a.v} <= 0.0", "sqrt of a non-positive argument", node)
            v = self.tmp(f"_sqrt({a.v})")
            d1 = self.tmp(f"0.5 / {v}")
            return self.chain(a, v, d1, self.tmp(f"-0.5 * {d1} / {a.v}") if two else None)
        raise ExprError(f"unknown function {f}")


def compile_jets(asts: Sequence[ExprAst], order: int = 2) -> Callable[..., tuple]:
    """Compile several expressions over the same variables into one function.

    The returned callable takes the coordinates positionally and returns a flat
    tuple: for each expression its value, then the gradient, then (order 2)
    the upper-triangular Hessian entries row by row.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    variables = asts[0].variables
    for ast in asts:
        if ast.variables != variables:
            raise ExprError("all expressions must share the same variable list")
    n = len(variables)
    gen = _Codegen(n, max(order, 1))
    outputs: list[str] = []
    for ast in asts:
        jet = gen.emit(ast.root)
        outputs.append(jet.v)
        if order >= 1:
            outputs.extend(x or "0.0" for x in jet.g)
        if order >= 2:
            outputs.extend(jet.h[p] or "0.0" for p in gen.pairs)
    args = ", ".join(f"x{i}" for i in range(n))
    body = "\n    ".join(gen.lines) or "pass"
    source = f"def _jet({args}):\n    {body}\n    return ({', '.join(outputs)},)\n"
    nodes = gen.nodes

    def _fail(message, index):
        raise ExprDomainError(message, nodes[index])

    namespace = {
        "_sin": math.sin,
        "_cos": math.cos,
        "_tan": math.tan,
        "_exp": math.exp,
        "_log": math.log,
        "_sqrt": math.sqrt,
        "_fail": _fail,
    }
    exec(compile(source, "<jet>", "exec"), namespace)
    fn = namespace["_jet"]
    fn.source = source
    return fn


def _compiled(ast: ExprAst, order: int):
    fn = ast._compiled.get(order)
    if fn is None:
        fn = compile_jets([ast], order)
        ast._compiled[order] = fn
    return fn


def eval_jet2(ast: ExprAst, point: Sequence[float]) -> Jet2:
    """Second-order jet of ``ast`` at ``point`` (forward mode)."""
    n = len(ast.variables)
    if len(point) != n:
        raise ExprError(f"expected {n} coordinates, got {len(point)}")
    out = _compiled(ast, 2)(*(float(x) for x in point))
    grad = np.array(out[1 : 1 + n], dtype=float)
    hess = np.empty((n, n))
    k = 1 + n
    for i in range(n):
        for j in range(i, n):
            hess[i, j] = hess[j, i] = out[k]
            k += 1
    return Jet2(float(out[0]), grad, hess)
