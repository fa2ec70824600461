"""A small expression language for drivers and terminal vectors.

Grammar (usual precedence, left associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | atom
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Driver variables: ``t y yp i ip z1..zN zp1..zpN`` plus ``snorm(z)`` and
``snorm_p(zp)``; ``i``/``ip`` are 1-based state numbers.  Driver functions:
``min max abs sin cos tanh``.  Terminal expressions see only ``i`` and may
also use ``exp log sqrt pow``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .bsde import Driver
from .chain import Generator, seminorm_batch
from .errors import DimensionMismatch, ExprSyntaxError, UnknownVariable


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
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


DRIVER_FUNCS = {"min": (2, None), "max": (2, None), "abs": (1, 1), "sin": (1, 1),
                "cos": (1, 1), "tanh": (1, 1), "snorm": (1, 1), "snorm_p": (1, 1)}
TERMINAL_FUNCS = {"min": (2, None), "max": (2, None), "abs": (1, 1), "sin": (1, 1),
                  "cos": (1, 1), "tanh": (1, 1), "exp": (1, 1), "log": (1, 1),
                  "sqrt": (1, 1), "pow": (2, 2)}
DRIVER_VARS = {"t", "y", "yp", "i", "ip"}
TERMINAL_VARS = {"i"}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")


def _tokenize(text):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        num, name, sym = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            toks.append(("num", num, start))
        elif name is not None:
            toks.append(("name", name, start))
        else:
            toks.append(("sym", sym, start))
        pos = m.end()
    toks.append(("end", None, len(text)))
    return toks


class _Parser:
    def __init__(self, text, variables, funcs, N):
        self.toks = _tokenize(text)
        self.k = 0
        self.variables = variables
        self.funcs = funcs
        self.N = N

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def fail(self, expected):
        kind, val, pos = self.peek()
        raise ExprSyntaxError(pos, expected, val)

    def expect(self, sym):
        if self.peek()[:2] != ("sym", sym):
            self.fail([repr(sym)])
        self.take()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(["operator", "end of input"])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("sym", "+"), ("sym", "-")):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("sym", "*"), ("sym", "/")):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("sym", "-"):
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Num(float(val))
        if kind == "name":
            self.take()
            if self.peek()[:2] == ("sym", "("):
                return self.call(val, pos)
            if not self._known(val):
                raise UnknownVariable(val, pos)
            return Var(val)
        if (kind, val) == ("sym", "("):
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        self.fail(["number", "identifier", "'('", "'-'"])

    def call(self, name, pos):
        if name not in self.funcs:
            raise UnknownVariable(name, pos)
        self.expect("(")
        if name in ("snorm", "snorm_p"):
            want = "z" if name == "snorm" else "zp"
            if self.peek()[:2] != ("name", want):
                self.fail([want])
            self.take()
            self.expect(")")
            return Call(name, (Var(want),))
        args = [self.expr()]
        while self.peek()[:2] == ("sym", ","):
            self.take()
            args.append(self.expr())
        self.expect(")")
        lo, hi = self.funcs[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ExprSyntaxError(pos, [f"{name} with {lo}{'' if hi == lo else '+'} argument(s)"], name)
        return Call(name, tuple(args))

    def _known(self, name):
        if name in self.variables:
            return True
        if self.funcs is DRIVER_FUNCS:
            m = re.fullmatch(r"(zp|z)([1-9]\d*)", name)
            if m:
                return self.N is None or int(m.group(2)) <= self.N
        return False


def parse_driver(text: str, N: int | None = None):
    """Parse driver text into an expression tree (see module docstring)."""
    if not text.strip():
        raise ExprSyntaxError(0, ["expression"], None)
    return _Parser(text, DRIVER_VARS, DRIVER_FUNCS, N).parse()


def parse_terminal(text: str):
    if not text.strip():
        raise ExprSyntaxError(0, ["expression"], None)
    return _Parser(text, TERMINAL_VARS, TERMINAL_FUNCS, None).parse()


def format_expr(node) -> str:
    """Fully parenthesized text; ``parse_driver(format_expr(e)) == e``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + format_expr(node.arg)
    if isinstance(node, BinOp):
        return f"({format_expr(node.left)} {node.op} {format_expr(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(format_expr(a) for a in node.args)})"
    raise TypeError(node)


def free_variables(node) -> set:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return free_variables(node.arg)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    return set().union(*(free_variables(a) for a in node.args))


_UNARY = {"abs": np.abs, "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp,
          "log": np.log, "sqrt": np.sqrt}
_BIN = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}


def evaluate(node, env):
    """Evaluate with numpy broadcasting; ``env`` maps names (and the special
    keys ``snorm``/``snorm_p``) to values or zero-argument callables."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        v = env[node.name]
        return v() if callable(v) else v
    if isinstance(node, Neg):
        return np.negative(evaluate(node.arg, env))
    if isinstance(node, BinOp):
        with np.errstate(divide="ignore", invalid="ignore"):
            return _BIN[node.op](evaluate(node.left, env), evaluate(node.right, env))
    f = node.func
    if f in ("snorm", "snorm_p"):
        return env[f]()
    args = [evaluate(a, env) for a in node.args]
    if f == "min":
        return _fold(np.minimum, args)
    if f == "max":
        return _fold(np.maximum, args)
    if f == "pow":
        return np.power(args[0], args[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return _UNARY[f](args[0])


def _fold(fn, args):
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out


@dataclass(frozen=True)
class DriverExpr:
    tree: object
    lipschitz: float
    text: str = ""

    @classmethod
    def parse(cls, text: str, lipschitz: float, N: int | None = None) -> "DriverExpr":
        return cls(parse_driver(text, N), float(lipschitz), text)

    def to_driver(self, gen: Generator) -> Driver:
        tree, N = self.tree, gen.N
        for name in free_variables(tree):
            m = re.fullmatch(r"(zp|z)(\d+)", name)
            if m and int(m.group(2)) > N:
                raise DimensionMismatch(f"{name} used but N={N}")

        def f(t, ip, yp, zp, i, y, z):
            zp = np.asarray(zp, dtype=float)
            z = np.asarray(z, dtype=float)
            env = {"t": t, "y": y, "yp": yp, "i": np.asarray(i) + 1, "ip": np.asarray(ip) + 1,
                   "snorm": lambda: seminorm_batch(gen.phi_table(t), z, i),
                   "snorm_p": lambda: seminorm_batch(gen.phi_table(t), zp, ip)}
            for k in range(N):
                env[f"z{k + 1}"] = (lambda k=k: z[..., k])
                env[f"zp{k + 1}"] = (lambda k=k: zp[..., k])
            out = evaluate(tree, env)
            return np.asarray(out, dtype=float) + 0.0 * (np.asarray(yp) + np.asarray(y))

        return Driver(f, self.lipschitz, self.text or format_expr(tree))


def terminal_vector(text: str, N: int) -> np.ndarray:
    tree = parse_terminal(text)
    vals = evaluate(tree, {"i": np.arange(1, N + 1, dtype=float)})
    return np.broadcast_to(np.asarray(vals, dtype=float), (N,)).copy()
