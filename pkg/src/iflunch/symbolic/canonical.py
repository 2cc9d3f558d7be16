"""Algebraic normal form for influence-function expressions.

Expressions are expanded into a sum of monomials ``c * Sum_S (prod num) /
(prod den)`` and rewritten monomial by monomial until nothing changes:

1. estimand recognition (a monomial containing the whole functional becomes
   ``Psi`` times the remaining factors),
2. sifting (``Sum_v f(v) I(v) = f(v~)``),
3. cancellation of identical numerator and denominator factors,
4. chain-rule peeling of a joint denominator against a numerator factor,
5. marginalisation of a summed variable that appears in one conditional only,
6. folding ``Sum_y y P(y|b)`` into ``E[y|b]``,

after which like terms are combined.  The result is rebuilt with shared
non-value factors pulled out of groups of monomials and terms in a fixed
order, so equal inputs always print identically.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .expr import (
    BOUND,
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
    pretty_print,
)

MAX_PASSES = 100

_CATEGORY = {Delta: 0, Cond: 1, CondExp: 2, Var: 3, Add: 4, EstimandRef: 5}


def atom_key(a: Expr):
    return (_CATEGORY.get(type(a), 9), pretty_print(a))


def _sorted(atoms):
    return tuple(sorted(atoms, key=atom_key))


@dataclass(frozen=True)
class Mono:
    """``coef * Sum_{sums} prod(num) / prod(den)``."""

    coef: float
    sums: frozenset
    num: tuple
    den: tuple

    @staticmethod
    def make(coef, sums, num, den) -> "Mono":
        c = float(coef)
        keep_num, keep_den = [], []
        for a in num:
            c, a = _normalize_atom(c, a, False)
            if a is not None:
                keep_num.append(a)
        for a in den:
            c, a = _normalize_atom(c, a, True)
            if a is not None:
                keep_den.append(a)
        return Mono(c, frozenset(sums), _sorted(keep_num), _sorted(keep_den))


def _normalize_atom(coef, a, in_den):
    if isinstance(a, Const):
        if in_den:
            if a.value == 0:
                raise ZeroDivisionError("division by the constant 0")
            return coef / a.value, None
        return coef * a.value, None
    if isinstance(a, Var) and a.ref.mode == FIXED:
        return _normalize_atom(coef, Const(a.ref.value), in_den)
    if isinstance(a, Delta):
        refs = tuple(r for r in a.refs if r.mode != POINT)
        if not refs:
            return coef, None
        return coef, Delta(refs)
    return coef, a


def mentions(a: Expr) -> set:
    """Bound variable names that occur free in atom ``a``."""
    if isinstance(a, Cond):
        return {r.name for r in a.a + a.b if r.mode == BOUND}
    if isinstance(a, Delta):
        return {r.name for r in a.refs if r.mode == BOUND}
    if isinstance(a, Var):
        return {a.ref.name} if a.ref.mode == BOUND else set()
    if isinstance(a, CondExp):
        return {r.name for r in a.given if r.mode == BOUND}
    if isinstance(a, Add):
        out = set()
        for t in a.terms:
            for m in expand(t):
                out |= free_names(m)
        return out
    return set()


def free_names(m: Mono) -> set:
    out = set()
    for a in m.num + m.den:
        out |= mentions(a)
    return out - set(m.sums)


# --------------------------------------------------------------------------
# expansion


def _mul(x: Mono, y: Mono) -> Mono:
    if x.sums & y.sums or x.sums & free_names(y) or y.sums & free_names(x):
        raise ValueError("summation variable captured by another factor; rename bound variables")
    return Mono.make(x.coef * y.coef, x.sums | y.sums, x.num + y.num, x.den + y.den)


def _reciprocal(m: Mono) -> Mono:
    if m.sums:
        raise ValueError("sums are not allowed in a denominator")
    if m.coef == 0:
        raise ZeroDivisionError("division by zero")
    return Mono.make(1.0 / m.coef, (), m.den, m.num)


ONE = Mono(1.0, frozenset(), (), ())


def expand(e: Expr) -> list:
    """Sum-of-monomials form of ``e``."""
    if isinstance(e, Const):
        return [Mono.make(e.value, (), (), ())]
    if isinstance(e, (Var, EstimandRef, Cond, Delta, CondExp)):
        return [Mono.make(1.0, (), (e,), ())]
    if isinstance(e, DiracRatio):
        ab = e.a + e.b
        first = Mono.make(1.0, (), (Delta(ab),), (Cond(ab),))
        second = Mono.make(-1.0, (), (Delta(e.b),), (Cond(e.b),)) if e.b else Mono.make(-1.0, (), (), ())
        return [first, second]
    if isinstance(e, Product):
        acc = [ONE]
        for f in e.factors:
            parts = expand(f)
            acc = [_mul(a, b) for a in acc for b in parts]
        return acc
    if isinstance(e, Quotient):
        den = expand(e.den)
        if len(den) != 1:
            raise ValueError("denominator must be a single product, not a sum")
        inv = _reciprocal(den[0])
        return [_mul(a, inv) for a in expand(e.num)]
    if isinstance(e, Add):
        return [m for t in e.terms for m in expand(t)]
    if isinstance(e, SumInt):
        out = []
        for m in expand(e.body):
            if m.sums & set(e.names):
                raise ValueError(f"nested sums over the same variable {sorted(m.sums & set(e.names))}")
            out.append(Mono(m.coef, m.sums | frozenset(e.names), m.num, m.den))
        return out
    raise TypeError(f"cannot expand {type(e).__name__}")


# --------------------------------------------------------------------------
# rewrite rules


def _subst_ref(r: Ref, name: str, new: Ref) -> Ref:
    return new if r.name == name and r.mode == BOUND else r


def subst_atom(a: Expr, name: str, new: Ref) -> Expr:
    if isinstance(a, Cond):
        return Cond(tuple(_subst_ref(r, name, new) for r in a.a), tuple(_subst_ref(r, name, new) for r in a.b))
    if isinstance(a, Delta):
        return Delta(tuple(_subst_ref(r, name, new) for r in a.refs))
    if isinstance(a, Var):
        return Var(_subst_ref(a.ref, name, new))
    if isinstance(a, CondExp):
        return CondExp(a.target, tuple(_subst_ref(r, name, new) for r in a.given))
    return a


def _recognize(m: Mono, est: Optional[Mono]):
    if est is None or not est.sums or not est.sums <= m.sums:
        return None
    num, den = Counter(m.num), Counter(m.den)
    need_num, need_den = Counter(est.num), Counter(est.den)
    if need_num - num or need_den - den:
        return None
    rest_num = list((num - need_num).elements())
    rest_den = list((den - need_den).elements())
    for a in rest_num + rest_den:
        if mentions(a) & est.sums:
            return None
    return Mono.make(m.coef / est.coef, m.sums - est.sums, rest_num + [EstimandRef()], rest_den)


def _sift(m: Mono):
    for v in sorted(m.sums):
        hit = any(isinstance(a, Delta) and any(r.name == v and r.mode == BOUND for r in a.refs) for a in m.num)
        if not hit:
            continue
        point = Ref(v, POINT)
        num = [subst_atom(a, v, point) for a in m.num]
        den = [subst_atom(a, v, point) for a in m.den]
        return Mono.make(m.coef, m.sums - {v}, num, den)
    return None


def _cancel(m: Mono):
    num, den = Counter(m.num), Counter(m.den)
    common = num & den
    if not common:
        return None
    return Mono.make(m.coef, m.sums, list((num - common).elements()), list((den - common).elements()))


def _peel(m: Mono):
    for i, d in enumerate(m.den):
        if not isinstance(d, Cond) or len(d.a) < 2:
            continue
        joint = set(d.a)
        given = set(d.b)
        for j, n in enumerate(m.num):
            if not isinstance(n, Cond):
                continue
            top = set(n.a)
            if not top < joint:
                continue
            rest = tuple(sorted(joint - top, key=Ref.sort_key))
            if set(n.b) == set(rest) | given:
                replacement = Cond(rest, d.b)
            elif set(n.b) == given:
                replacement = Cond(rest, tuple(top | given))
            else:
                continue
            num = m.num[:j] + m.num[j + 1 :]
            den = m.den[:i] + (replacement,) + m.den[i + 1 :]
            return Mono.make(m.coef, m.sums, num, den)
    return None


def _marginalize(m: Mono):
    atoms = m.num + m.den
    for v in sorted(m.sums):
        where = [k for k, a in enumerate(atoms) if v in mentions(a)]
        if len(where) != 1 or where[0] >= len(m.num):
            continue
        a = atoms[where[0]]
        if not isinstance(a, Cond) or not any(r.name == v and r.mode == BOUND for r in a.a):
            continue
        left = tuple(r for r in a.a if r.name != v)
        num = list(m.num)
        if left:
            num[where[0]] = Cond(left, a.b)
        else:
            del num[where[0]]
        return Mono.make(m.coef, m.sums - {v}, num, m.den)
    return None


def _fold(m: Mono):
    atoms = m.num + m.den
    for v in sorted(m.sums):
        where = [k for k, a in enumerate(atoms) if v in mentions(a)]
        if len(where) != 2 or any(k >= len(m.num) for k in where):
            continue
        pair = [atoms[k] for k in where]
        var = [a for a in pair if isinstance(a, Var)]
        cond = [a for a in pair if isinstance(a, Cond) and len(a.a) == 1 and a.a[0] == Ref(v)]
        if len(var) != 1 or len(cond) != 1:
            continue
        num = [a for k, a in enumerate(m.num) if k not in where]
        num.append(CondExp(Ref(v), cond[0].b))
        return Mono.make(m.coef, m.sums - {v}, num, m.den)
    return None


_RULES = (_sift, _cancel, _peel, _marginalize, _fold)


def _simplify(m: Mono, est: Optional[Mono]) -> Mono:
    for _ in range(MAX_PASSES):
        new = _recognize(m, est)
        if new is None:
            for rule in _RULES:
                new = rule(m)
                if new is not None:
                    break
        if new is None:
            return m
        m = new
    raise RuntimeError("rewrite rules did not terminate within the pass cap")


def _combine(monos) -> list:
    acc = {}
    for m in monos:
        key = (m.sums, m.num, m.den)
        acc[key] = acc.get(key, 0.0) + m.coef
    return [Mono(c, *k) for k, c in acc.items() if c != 0.0]


def normal_form(e: Expr, estimand: Optional[Expr] = None) -> list:
    """Simplified monomials of ``e`` (before factor collection)."""
    est = None
    if estimand is not None:
        parts = expand(estimand)
        if len(parts) == 1 and not free_names(parts[0]) and parts[0].coef != 0:
            est = parts[0]
    monos = _combine(expand(e))
    for _ in range(MAX_PASSES):
        new = _combine(_simplify(m, est) for m in monos)
        if _key_set(new) == _key_set(monos):
            return _order(new)
        monos = new
    raise RuntimeError("canonicalization did not reach a fixed point within the pass cap")


def _key_set(monos):
    return sorted((sorted(m.sums), repr(m.num), repr(m.den), m.coef) for m in monos)


def _order(monos):
    return sorted(monos, key=lambda m: (sorted(m.sums), [atom_key(a) for a in m.num], [atom_key(a) for a in m.den], m.coef))


# --------------------------------------------------------------------------
# rebuilding a tree


_VALUE = (Var, CondExp, EstimandRef)


def _has_psi(atoms) -> bool:
    for a in atoms:
        if isinstance(a, EstimandRef):
            return True
        if isinstance(a, Add) and "Psi" in pretty_print(a):
            return True
    return False


def _complexity(atoms) -> int:
    total = 0
    for a in atoms:
        total += sum(len(m.num) + len(m.den) for t in a.terms for m in expand(t)) if isinstance(a, Add) else 1
    return total


def _term_expr(coef, sums, num, den) -> Expr:
    factors = ([Const(coef)] if coef != 1.0 else []) + list(num)
    if not factors:
        core = Const(1.0)
    elif len(factors) == 1:
        core = factors[0]
    else:
        core = Product(tuple(factors))
    if den:
        core = Quotient(core, den[0] if len(den) == 1 else Product(tuple(den)))
    return SumInt(tuple(sorted(sums)), core) if sums else core


def _assemble(terms, inner: bool) -> list:
    """Order ``(coef, sums, num, den)`` terms and turn them into expressions."""

    def key(t):
        coef, sums, num, den = t
        expr = _term_expr(abs(coef), sums, num, den)
        sign = (coef < 0,) if inner else ()
        return (_has_psi(num),) + sign + (-_complexity(num + den), pretty_print(expr))

    return sorted(terms, key=key)


def to_expr(monos) -> Expr:
    """Rebuild an expression tree, pulling shared non-value factors out of sums."""
    groups = {}
    order = []
    for m in monos:
        rest = tuple(a for a in m.num if not isinstance(a, _VALUE))
        values = tuple(a for a in m.num if isinstance(a, _VALUE))
        key = (m.sums, rest, m.den)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append((m.coef, values))
    terms = []
    for key in order:
        sums, rest, den = key
        members = groups[key]
        if len(members) >= 2 and (rest or den):
            inner = _assemble([(c, frozenset(), vals, ()) for c, vals in members], inner=True)
            lead = inner[0][0]
            parts = tuple(_term_expr(c / lead, s, n, d) for c, s, n, d in inner)
            group = Add(parts)
            terms.append((lead, sums, _sorted(rest + (group,)), den))
        else:
            for c, vals in members:
                terms.append((c, sums, _sorted(rest + vals), den))
    terms = _assemble(terms, inner=False)
    exprs = [_term_expr(*t) for t in terms]
    if not exprs:
        return Const(0.0)
    return exprs[0] if len(exprs) == 1 else Add(tuple(exprs))


def canonicalize(e: Expr, estimand: Optional[Expr] = None) -> Expr:
    """Canonical simplified form of ``e``.

    With ``estimand`` given (a scalar functional), monomials containing it
    are rewritten in terms of ``Psi``.  Idempotent and value preserving.
    """
    return to_expr(normal_form(e, estimand))
