"""Immutable expression trees for identification functionals and their influence functions.

Text grammar (what :func:`pretty_print` emits and :func:`iflunch.symbolic.parse`
reads)::

    expr    := ["-"] term (("+" | "-") term)*
    term    := factor (("*" | "/") factor)*          left associative
    factor  := number | "Psi" | "(" expr ")"
             | "P(" refs ["|" refs] ")"              conditional probability
             | "E[" ref ["|" refs] "]"               conditional expectation
             | "I(" refs ")"                         point-mass indicator
             | "D(" refs ["|" refs] ")"              Dirac ratio pair
             | "Sum[" names "](" expr ")"            sum / integral
             | ref                                   outcome weight
    ref     := name | name "~" | name "=" number

``y`` is a bound variable, ``y~`` the point at which the influence function
is evaluated, and ``t=1`` a variable held at a fixed value.  ``I(t=1)`` is
one when the point's ``t`` equals 1; ``I(y)`` is one when the bound ``y``
equals the point's ``y``.  ``D(a|b)`` stands for
``I(a,b)/P(a,b) - I(b)/P(b)``, with the second term equal to 1 when ``b``
is empty.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

BOUND, POINT, FIXED = "bound", "point", "fixed"


def _fmt_number(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True, order=True)
class Ref:
    """A variable occurrence: bound (``y``), at the point (``y~``) or fixed (``t=1``)."""

    name: str
    mode: str = BOUND
    value: Optional[float] = None

    def __post_init__(self):
        if self.mode not in (BOUND, POINT, FIXED):
            raise ValueError(f"unknown reference mode {self.mode!r}")
        if (self.mode == FIXED) != (self.value is not None):
            raise ValueError("fixed references need a value; others must not have one")
        if self.value is not None:
            object.__setattr__(self, "value", float(self.value))

    def text(self) -> str:
        if self.mode == POINT:
            return f"{self.name}~"
        if self.mode == FIXED:
            return f"{self.name}={_fmt_number(self.value)}"
        return self.name

    def sort_key(self):
        return (self.name, self.mode, -1e300 if self.value is None else self.value)


def _refs(refs) -> Tuple[Ref, ...]:
    refs = tuple(refs)
    names = [r.name for r in refs]
    if len(set(names)) != len(names):
        raise ValueError(f"variable listed twice in {[r.text() for r in refs]}")
    return tuple(sorted(refs, key=Ref.sort_key))


class Expr:
    """Base class; concrete nodes are frozen dataclasses."""

    def __str__(self) -> str:
        return pretty_print(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var(Expr):
    """Outcome weight such as the ``y`` in a sum of ``y * P(y|...)``."""

    ref: Ref


@dataclass(frozen=True)
class EstimandRef(Expr):
    """The estimand value itself, printed ``Psi``."""


@dataclass(frozen=True)
class Cond(Expr):
    """``P(a|b)``; a marginal when ``b`` is empty."""

    a: Tuple[Ref, ...]
    b: Tuple[Ref, ...] = ()

    def __post_init__(self):
        a, b = _refs(self.a), _refs(self.b)
        if not a:
            raise ValueError("conditional needs at least one variable left of the bar")
        if {r.name for r in a} & {r.name for r in b}:
            raise ValueError("conditional sets must be disjoint")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class Delta(Expr):
    """Point-mass indicator over ``refs``."""

    refs: Tuple[Ref, ...]

    def __post_init__(self):
        object.__setattr__(self, "refs", _refs(self.refs))


@dataclass(frozen=True)
class DiracRatio(Expr):
    """``I(a,b)/P(a,b) - I(b)/P(b)`` (second term 1 when ``b`` is empty)."""

    a: Tuple[Ref, ...]
    b: Tuple[Ref, ...] = ()

    def __post_init__(self):
        a, b = _refs(self.a), _refs(self.b)
        if not a:
            raise ValueError("Dirac ratio needs a non-empty left set")
        if {r.name for r in a} & {r.name for r in b}:
            raise ValueError("Dirac ratio sets must be disjoint")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class CondExp(Expr):
    """``E[y|b]`` for a bound outcome ``y``."""

    target: Ref
    given: Tuple[Ref, ...] = ()

    def __post_init__(self):
        given = _refs(self.given)
        if self.target.name in {r.name for r in given}:
            raise ValueError("expectation target also appears in the conditioning set")
        object.__setattr__(self, "given", given)


@dataclass(frozen=True)
class Product(Expr):
    factors: Tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass(frozen=True)
class Quotient(Expr):
    num: Expr
    den: Expr


@dataclass(frozen=True)
class Add(Expr):
    terms: Tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class SumInt(Expr):
    """Sum (integral for continuous variables) of ``body`` over ``names``."""

    names: Tuple[str, ...]
    body: Expr

    def __post_init__(self):
        names = tuple(sorted(set(self.names)))
        if not names:
            raise ValueError("SumInt needs at least one variable")
        object.__setattr__(self, "names", names)


ATOMS = (Const, Var, EstimandRef, Cond, Delta, DiracRatio, CondExp)


def neg(e: Expr) -> Expr:
    """Negate ``e``, keeping it in the form the printer emits."""
    if isinstance(e, Const):
        return Const(-e.value)
    if isinstance(e, Product) and e.factors and isinstance(e.factors[0], Const):
        c = -e.factors[0].value
        rest = e.factors[1:]
        if c == 1.0:
            return rest[0] if len(rest) == 1 else Product(rest)
        return Product((Const(c),) + rest)
    if isinstance(e, Quotient):
        return Quotient(neg(e.num), e.den)
    if isinstance(e, SumInt):
        return SumInt(e.names, neg(e.body))
    return Product((Const(-1.0), e))


def is_negative(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value < 0
    if isinstance(e, Product):
        return bool(e.factors) and isinstance(e.factors[0], Const) and e.factors[0].value < 0
    if isinstance(e, Quotient):
        return is_negative(e.num)
    if isinstance(e, SumInt):
        return is_negative(e.body)
    return False


# --------------------------------------------------------------------------
# printing


def _refs_text(refs) -> str:
    return ",".join(r.text() for r in refs)


def _pp_factor(e: Expr) -> str:
    if isinstance(e, (Add, Quotient)) or (isinstance(e, Const) and e.value < 0):
        return f"({pretty_print(e)})"
    if isinstance(e, Product) and len(e.factors) != 1:
        return f"({pretty_print(e)})"
    return pretty_print(e)


def pretty_print(e: Expr) -> str:
    """Deterministic text form of ``e``; re-parses to the same canonical tree."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.ref.text()
    if isinstance(e, EstimandRef):
        return "Psi"
    if isinstance(e, Cond):
        return f"P({_refs_text(e.a)}|{_refs_text(e.b)})" if e.b else f"P({_refs_text(e.a)})"
    if isinstance(e, Delta):
        return f"I({_refs_text(e.refs)})"
    if isinstance(e, DiracRatio):
        return f"D({_refs_text(e.a)}|{_refs_text(e.b)})" if e.b else f"D({_refs_text(e.a)})"
    if isinstance(e, CondExp):
        inner = e.target.text() + (f"|{_refs_text(e.given)}" if e.given else "")
        return f"E[{inner}]"
    if isinstance(e, SumInt):
        return f"Sum[{','.join(e.names)}]({pretty_print(e.body)})"
    if isinstance(e, Product):
        if not e.factors:
            return "1"
        parts = []
        for k, f in enumerate(e.factors):
            if k == 0 and isinstance(f, Const) and f.value < 0 and len(e.factors) > 1:
                c = -f.value
                parts.append("-" if c == 1.0 else f"-{_fmt_number(c)}")
                continue
            parts.append(_pp_factor(f))
        text = " * ".join(p for p in parts if p != "-")
        return "-" + text if parts[0] == "-" else text
    if isinstance(e, Quotient):
        num = pretty_print(e.num) if not isinstance(e.num, (Add, Quotient)) else f"({pretty_print(e.num)})"
        den = e.den
        if isinstance(den, (Product, Quotient, Add)) or (isinstance(den, Const) and den.value < 0):
            return f"{num} / ({pretty_print(den)})"
        return f"{num} / {pretty_print(den)}"
    if isinstance(e, Add):
        if not e.terms:
            return "0"
        out = []
        for k, t in enumerate(e.terms):
            if is_negative(t):
                body = pretty_print(neg(t))
                out.append(f"-{body}" if k == 0 else f" - {body}")
            else:
                body = pretty_print(t)
                out.append(body if k == 0 else f" + {body}")
        return "".join(out)
    raise TypeError(f"cannot print {type(e).__name__}")


# --------------------------------------------------------------------------
# JSON tree form


def to_json(e: Expr) -> dict:
    def refs(rs):
        return [ref_to_json(r) for r in rs]

    if isinstance(e, Const):
        return {"type": "Const", "value": e.value}
    if isinstance(e, Var):
        return {"type": "Var", "ref": ref_to_json(e.ref)}
    if isinstance(e, EstimandRef):
        return {"type": "Psi"}
    if isinstance(e, Cond):
        return {"type": "Cond", "a": refs(e.a), "b": refs(e.b)}
    if isinstance(e, Delta):
        return {"type": "Delta", "refs": refs(e.refs)}
    if isinstance(e, DiracRatio):
        return {"type": "DiracRatio", "a": refs(e.a), "b": refs(e.b)}
    if isinstance(e, CondExp):
        return {"type": "CondExp", "target": ref_to_json(e.target), "given": refs(e.given)}
    if isinstance(e, Product):
        return {"type": "Product", "factors": [to_json(f) for f in e.factors]}
    if isinstance(e, Quotient):
        return {"type": "Quotient", "num": to_json(e.num), "den": to_json(e.den)}
    if isinstance(e, Add):
        return {"type": "Add", "terms": [to_json(t) for t in e.terms]}
    if isinstance(e, SumInt):
        return {"type": "SumInt", "names": list(e.names), "body": to_json(e.body)}
    raise TypeError(type(e).__name__)


def ref_to_json(r: Ref) -> dict:
    out = {"name": r.name, "mode": r.mode}
    if r.value is not None:
        out["value"] = r.value
    return out


def ref_from_json(d: dict) -> Ref:
    return Ref(d["name"], d.get("mode", BOUND), d.get("value"))


def from_json(d: dict) -> Expr:
    kind = d["type"]
    refs = lambda key: tuple(ref_from_json(r) for r in d.get(key, []))  # noqa: E731
    if kind == "Const":
        return Const(d["value"])
    if kind == "Var":
        return Var(ref_from_json(d["ref"]))
    if kind == "Psi":
        return EstimandRef()
    if kind == "Cond":
        return Cond(refs("a"), refs("b"))
    if kind == "Delta":
        return Delta(refs("refs"))
    if kind == "DiracRatio":
        return DiracRatio(refs("a"), refs("b"))
    if kind == "CondExp":
        return CondExp(ref_from_json(d["target"]), refs("given"))
    if kind == "Product":
        return Product(tuple(from_json(f) for f in d["factors"]))
    if kind == "Quotient":
        return Quotient(from_json(d["num"]), from_json(d["den"]))
    if kind == "Add":
        return Add(tuple(from_json(t) for t in d["terms"]))
    if kind == "SumInt":
        return SumInt(tuple(d["names"]), from_json(d["body"]))
    raise ValueError(f"unknown expression node {kind!r}")
