"""Recursive-descent parser for the expression grammar in :mod:`.expr`."""
from __future__ import annotations

import re

from .canonical import canonicalize
from .expr import (
    FIXED,
    POINT,
    Add,
    Cond,
    CondExp,
    Const,
    Delta,
    DiracRatio,
    EstimandRef,
    Expr,
    Product,
    Quotient,
    Ref,
    SumInt,
    Var,
)

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


def _tokenize(text: str):
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        num, name, sym = m.groups()
        if num is not None:
            out.append(("num", num))
        elif name is not None:
            out.append(("name", name))
        elif sym is not None and not sym.isspace():
            out.append(("sym", sym))
        pos = m.end()
    out.append(("end", ""))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0
        self.text = text

    def peek(self, k=0):
        return self.toks[self.i + k]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value or kind
            raise ValueError(f"expected {want!r} but found {tok[1]!r} in {self.text!r}")
        self.i += 1
        return tok

    def at(self, kind, value=None):
        tok = self.toks[self.i]
        return tok[0] == kind and (value is None or tok[1] == value)

    # grammar ---------------------------------------------------------------

    def expr(self):
        terms = []
        sign = 1.0
        if self.at("sym", "-"):
            self.take()
            sign = -1.0
        elif self.at("sym", "+"):
            self.take()
        t = self.term()
        terms.append(t if sign > 0 else Product((Const(-1.0), t)))
        while self.at("sym", "+") or self.at("sym", "-"):
            op = self.take()[1]
            t = self.term()
            terms.append(t if op == "+" else Product((Const(-1.0), t)))
        return terms[0] if len(terms) == 1 else Add(tuple(terms))

    def term(self):
        node = self.factor()
        while self.at("sym", "*") or self.at("sym", "/"):
            op = self.take()[1]
            rhs = self.factor()
            if op == "*":
                node = Product(node.factors + (rhs,)) if isinstance(node, Product) else Product((node, rhs))
            else:
                node = Quotient(node, rhs)
        return node

    def factor(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return Const(float(val))
        if kind == "sym" and val == "(":
            self.take()
            e = self.expr()
            self.take("sym", ")")
            return e
        if kind == "sym" and val == "-":
            self.take()
            return Product((Const(-1.0), self.factor()))
        if kind == "name":
            nxt = self.peek(1)
            if val == "Psi":
                self.take()
                return EstimandRef()
            if val in ("P", "I", "D") and nxt == ("sym", "("):
                self.take()
                self.take("sym", "(")
                left = self.refs()
                right = ()
                if val != "I" and self.at("sym", "|"):
                    self.take()
                    right = self.refs()
                self.take("sym", ")")
                if val == "P":
                    return Cond(left, right)
                if val == "D":
                    return DiracRatio(left, right)
                return Delta(left)
            if val == "E" and nxt == ("sym", "["):
                self.take()
                self.take("sym", "[")
                target = self.ref()
                given = ()
                if self.at("sym", "|"):
                    self.take()
                    given = self.refs()
                self.take("sym", "]")
                return CondExp(target, given)
            if val == "Sum" and nxt == ("sym", "["):
                self.take()
                self.take("sym", "[")
                names = [self.take("name")[1]]
                while self.at("sym", ","):
                    self.take()
                    names.append(self.take("name")[1])
                self.take("sym", "]")
                self.take("sym", "(")
                body = self.expr()
                self.take("sym", ")")
                return SumInt(tuple(names), body)
            return Var(self.ref())
        raise ValueError(f"unexpected {val!r} in {self.text!r}")

    def refs(self):
        out = [self.ref()]
        while self.at("sym", ","):
            self.take()
            out.append(self.ref())
        return tuple(out)

    def ref(self):
        name = self.take("name")[1]
        if self.at("sym", "~"):
            self.take()
            return Ref(name, POINT)
        if self.at("sym", "="):
            self.take()
            sign = 1.0
            if self.at("sym", "-"):
                self.take()
                sign = -1.0
            return Ref(name, FIXED, sign * float(self.take("num")[1]))
        return Ref(name)


def parse_raw(text: str) -> Expr:
    """Parse without simplifying."""
    p = _Parser(text)
    e = p.expr()
    p.take("end")
    return e


def parse(text: str) -> Expr:
    """Parse and canonicalize, so ``parse(pretty_print(e)) == canonicalize(e)``."""
    return canonicalize(parse_raw(text))
