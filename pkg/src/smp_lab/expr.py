"""Small arithmetic expression language for scenario files.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Functions: ``sin cos exp sqrt`` (one argument) and ``min max`` (two).
Expressions compile to NumPy closures; nothing is passed to ``eval``.
"""

import re

import numpy as np

from .errors import ExpressionError

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


def tokenize(text):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        number, name, op = m.groups()
        start = m.start(m.lastindex)
        if number is not None:
            tokens.append(("num", number, start))
        elif name is not None:
            tokens.append(("name", name, start))
        elif op in "+-*/^(),":
            tokens.append(("op", op, start))
        else:
            raise ExpressionError(f"unexpected character {op!r} at position {start} in {text!r}",
                                  token=op, position=start)
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, variables):
        self.text = text
        self.variables = tuple(variables)
        self.tokens = tokenize(text)
        self.k = 0
        self.used = set()

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def fail(self, tok, what):
        kind, value, pos = tok
        shown = "end of input" if kind == "end" else repr(value)
        raise ExpressionError(f"{what}: unexpected {shown} at position {pos} in {self.text!r}",
                              token=value, position=pos)

    def expect(self, op):
        tok = self.take()
        if tok[:2] != ("op", op):
            self.fail(tok, f"expected {op!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(self.peek(), "trailing input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            node = _binary(np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            rhs = self.unary()
            node = _binary(np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            inner = self.unary()
            return lambda env: np.negative(inner(env))
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            exponent = self.unary()
            return _binary(np.power, base, exponent)
        return base

    def atom(self):
        tok = self.take()
        kind, value, pos = tok
        if kind == "num":
            c = float(value)
            return lambda env: c
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                return self.call(tok)
            if value not in self.variables:
                raise ExpressionError(
                    f"unknown variable {value!r} at position {pos} in {self.text!r}; "
                    f"allowed: {', '.join(self.variables)}", token=value, position=pos)
            self.used.add(value)
            return lambda env: env[value]
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        self.fail(tok, "expected a number, variable, function or '('")

    def call(self, tok):
        _, name, pos = tok
        if name not in FUNCTIONS:
            raise ExpressionError(f"unknown function {name!r} at position {pos} in {self.text!r}",
                                  token=name, position=pos)
        arity, fn = FUNCTIONS[name]
        self.expect("(")
        args = [self.expr()]
        while self.peek()[:2] == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != arity:
            raise ExpressionError(f"{name} takes {arity} argument(s), got {len(args)}",
                                  token=name, position=pos)
        if arity == 1:
            a = args[0]
            return lambda env: fn(a(env))
        a, b = args
        return lambda env: fn(a(env), b(env))


def _binary(fn, lhs, rhs):
    return lambda env: fn(lhs(env), rhs(env))


class Expression:
    """Compiled expression; call with one positional argument per variable."""

    def __init__(self, text, variables):
        if not isinstance(text, str):
            text = repr(float(text))
        parser = _Parser(text, variables)
        self._node = parser.parse()
        self.text = text
        self.variables = tuple(variables)
        self.used = frozenset(parser.used)

    def __call__(self, *args):
        if len(args) != len(self.variables):
            raise TypeError(f"expression takes {len(self.variables)} arguments")
        with np.errstate(all="ignore"):
            return self._node(dict(zip(self.variables, args)))

    def __repr__(self):
        return f"Expression({self.text!r}, {self.variables})"


def compile_expression(text, variables=("t", "x", "y", "u", "v")):
    return Expression(text, variables)
