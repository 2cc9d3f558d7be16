"""Numeric semantics over discrete distributions, plus a finite-difference oracle.

Conditionals are frequency ratios of an :class:`Empirical` table (or values
from user plug-ins), ``I(.)`` compares against the evaluation point and
``Sum[...]`` runs over the observed support of each variable.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Callable, Mapping, Optional

import numpy as np

from .derive import EstimandKind, EstimandSpec
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


class ZeroProbabilityEvent(ValueError):
    def __init__(self, what: str = ""):
        msg = "zero-probability conditioning event"
        super().__init__(f"{msg}: {what}" if what else msg)


class Empirical:
    """Finite (possibly signed) measure over rows of named discrete variables."""

    def __init__(self, names, rows, weights):
        self.names = tuple(str(n).lower() for n in names)
        self.rows = np.atleast_2d(np.asarray(rows, dtype=float))
        self.weights = np.asarray(weights, dtype=float).ravel()
        if self.rows.shape != (self.weights.shape[0], len(self.names)):
            raise ValueError("rows/weights/names shapes disagree")
        self._index = {n: j for j, n in enumerate(self.names)}
        self._cache = {}

    @classmethod
    def from_data(cls, names, data) -> "Empirical":
        """Frequency table of the rows of ``data`` (columns in ``names`` order)."""
        data = np.atleast_2d(np.asarray(data, dtype=float))
        uniq, counts = np.unique(data, axis=0, return_counts=True)
        return cls(names, uniq, counts / data.shape[0])

    @classmethod
    def from_dataset(cls, dataset) -> "Empirical":
        names = [n.lower() for n in dataset.covariate_names] + ["t", "y"]
        data = np.column_stack([dataset.covariates, dataset.treatment, dataset.outcome])
        return cls.from_data(names, data)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self._index[name]]
        except KeyError:
            raise ValueError(f"variable {name!r} not in the table {self.names}") from None

    def support(self, name: str) -> np.ndarray:
        return np.unique(self.column(name))

    def prob(self, assignment: Mapping[str, float]) -> float:
        key = tuple(sorted(assignment.items()))
        hit = self._cache.get(key)
        if hit is None:
            mask = np.ones(self.rows.shape[0], dtype=bool)
            for name, value in key:
                mask &= self.column(name) == value
            hit = float(self.weights[mask].sum())
            self._cache[key] = hit
        return hit

    def mix_point(self, point: Mapping[str, float], eps: float) -> "Empirical":
        """``(1 - eps) * self + eps * delta_point`` (``eps`` may be negative)."""
        row = np.array([float(point[n]) for n in self.names])
        match = np.flatnonzero(np.all(self.rows == row, axis=1))
        rows, weights = self.rows, (1.0 - eps) * self.weights
        if match.size:
            weights = weights.copy()
            weights[match[0]] += eps
        else:
            rows = np.vstack([rows, row])
            weights = np.append(weights, eps)
        return Empirical(self.names, rows, weights)

    def points(self, data=None):
        """Each stored row as a point dictionary."""
        return [dict(zip(self.names, r)) for r in self.rows]


def plugin_key(atom: Expr) -> str:
    """Lookup key for a plug-in: the atom printed with every variable bare."""
    bare = lambda refs: tuple(Ref(r.name) for r in refs)  # noqa: E731
    if isinstance(atom, Cond):
        return pretty_print(Cond(bare(atom.a), bare(atom.b)))
    if isinstance(atom, CondExp):
        return pretty_print(CondExp(Ref(atom.target.name), bare(atom.given)))
    raise TypeError("plug-ins apply to P(.|.) and E[.|.] atoms only")


class _Evaluator:
    def __init__(self, emp: Empirical, point, plugins, psi):
        self.emp = emp
        self.point = {str(k).lower(): float(v) for k, v in (point or {}).items()}
        self.plugins = dict(plugins or {})
        self.psi = psi
        self._psi_value = None

    def ref_value(self, r: Ref, env) -> float:
        if r.mode == FIXED:
            return r.value
        if r.mode == POINT:
            if r.name not in self.point:
                raise ValueError(f"unbound variable {r.name}~ (no value at the point)")
            return self.point[r.name]
        if r.name not in env:
            raise ValueError(f"unbound variable {r.name}")
        return env[r.name]

    def assign(self, refs, env) -> dict:
        return {r.name: self.ref_value(r, env) for r in refs}

    def cond(self, a, b, env, what) -> float:
        joint = self.emp.prob({**self.assign(a, env), **self.assign(b, env)})
        if not b:
            return joint
        marg = self.emp.prob(self.assign(b, env))
        if marg == 0.0:
            raise ZeroProbabilityEvent(what)
        return joint / marg

    def psi_value(self) -> float:
        if self._psi_value is None:
            if self.psi is None:
                raise ValueError("expression contains Psi; pass its value or defining expression")
            if isinstance(self.psi, Expr):
                self._psi_value = _Evaluator(self.emp, {}, self.plugins, None).ev(self.psi, {})
            else:
                self._psi_value = float(self.psi)
        return self._psi_value

    def ev(self, e: Expr, env) -> float:
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            return self.ref_value(e.ref, env)
        if isinstance(e, EstimandRef):
            return self.psi_value()
        if isinstance(e, Cond):
            key = plugin_key(e)
            if key in self.plugins:
                return float(self.plugins[key]({**self.assign(e.a, env), **self.assign(e.b, env)}))
            return self.cond(e.a, e.b, env, pretty_print(e))
        if isinstance(e, Delta):
            return float(all(self.ref_value(r, env) == self.ref_value(Ref(r.name, POINT), env) for r in e.refs))
        if isinstance(e, DiracRatio):
            total = 0.0
            ab = e.a + e.b
            if self.ev(Delta(ab), env):
                p = self.emp.prob(self.assign(ab, env))
                if p == 0.0:
                    raise ZeroProbabilityEvent(pretty_print(e))
                total += 1.0 / p
            if not e.b:
                total -= 1.0
            elif self.ev(Delta(e.b), env):
                p = self.emp.prob(self.assign(e.b, env))
                if p == 0.0:
                    raise ZeroProbabilityEvent(pretty_print(e))
                total -= 1.0 / p
            return total
        if isinstance(e, CondExp):
            key = plugin_key(e)
            if key in self.plugins:
                return float(self.plugins[key](self.assign(e.given, env)))
            given = self.assign(e.given, env)
            if given and self.emp.prob(given) == 0.0:
                raise ZeroProbabilityEvent(pretty_print(e))
            name = e.target.name
            return sum(v * self.cond((Ref(name, FIXED, v),), e.given, env, pretty_print(e))
                       for v in self.emp.support(name))
        if isinstance(e, Product):
            out = 1.0
            for f in e.factors:
                out *= self.ev(f, env)
                if out == 0.0:
                    return 0.0
            return out
        if isinstance(e, Quotient):
            num = self.ev(e.num, env)
            if num == 0.0:
                return 0.0
            den = self.ev(e.den, env)
            if den == 0.0:
                raise ZeroProbabilityEvent(f"denominator {pretty_print(e.den)} is zero")
            return num / den
        if isinstance(e, Add):
            return sum(self.ev(t, env) for t in e.terms)
        if isinstance(e, SumInt):
            supports = [self.emp.support(n) for n in e.names]
            total = 0.0
            for values in itertools.product(*supports):
                inner = dict(env)
                inner.update(zip(e.names, values))
                total += self.ev(e.body, inner)
            return total
        raise TypeError(f"cannot evaluate {type(e).__name__}")


def eval_expr(expr: Expr, empirical: Empirical, point: Optional[Mapping] = None,
              plugins: Optional[Mapping[str, Callable]] = None, psi=None) -> float:
    """Value of ``expr`` under ``empirical`` at ``point``.

    ``plugins`` maps keys such as ``"P(t|x)"`` or ``"E[y|t,x]"`` to callables
    taking a ``{name: value}`` dict; matching atoms use them instead of
    frequency ratios.  ``psi`` is the value of ``Psi`` or an expression for it.
    """
    return _Evaluator(empirical, point, plugins, psi).ev(expr, {})


# --------------------------------------------------------------------------
# finite-difference oracle


def _mass(names, rows, weights, assignment) -> float:
    mask = np.ones(rows.shape[0], dtype=bool)
    for name, value in assignment.items():
        mask &= rows[:, names.index(name)] == value
    return weights[mask].sum()


def functional_value(spec: EstimandSpec, empirical: Empirical) -> float:
    """Evaluate the estimand directly from the probability table.

    The interventional mean uses the truncated factorisation over every
    non-treatment node of the graph, independently of the symbolic path.
    """
    names = list(empirical.names)
    rows, w = empirical.rows, getattr(empirical, "exact_weights", None)
    if w is None:
        w = empirical.weights
    y = spec.outcome
    if y not in names:
        raise ValueError(f"outcome {y!r} not in the table")
    y_col = rows[:, names.index(y)]
    if spec.kind is EstimandKind.POPULATION_MEAN:
        return sum(wi * yi for wi, yi in zip(w, y_col))
    if spec.kind is EstimandKind.AVERAGE_DENSITY:
        return sum(w[y_col == v].sum() ** 2 for v in np.unique(y_col))
    graph = spec.graph
    fixed = dict(spec.treatment)
    free = [v for v in graph.topological_order() if v not in fixed]
    supports = [np.unique(rows[:, names.index(v)]) for v in free]
    total = 0.0
    for values in itertools.product(*supports):
        full = dict(fixed)
        full.update(zip(free, values))
        term = full[y]
        for v in free:
            pa = {p: full[p] for p in graph.parents(v)}
            denom = _mass(names, rows, w, pa) if pa else w.sum()
            if denom == 0:
                raise ZeroProbabilityEvent(f"P({v}|{','.join(pa)}) at {pa}")
            term *= _mass(names, rows, w, {v: full[v], **pa}) / denom
            if term == 0:
                break
        total += term
    return total


def _exact_mix(empirical: Empirical, point, eps: Fraction):
    weights = [Fraction(w).limit_denominator(10**12) for w in empirical.weights]
    row = np.array([point[n] for n in empirical.names])
    match = np.flatnonzero(np.all(empirical.rows == row, axis=1))
    rows = empirical.rows
    weights = [(1 - eps) * w for w in weights]
    if match.size:
        weights[match[0]] += eps
    else:
        rows = np.vstack([rows, row])
        weights.append(eps)
    mixed = Empirical(empirical.names, rows, np.ones(len(weights)))
    mixed.exact_weights = np.array(weights, dtype=object)
    return mixed


def finite_diff_gateaux(spec: EstimandSpec, empirical: Empirical, point: Mapping, eps: float = 1e-5,
                        exact: bool = True) -> float:
    """Central difference of the estimand along ``delta_point``.

    With ``exact`` the two evaluations run in rational arithmetic, so the only
    error left is the ``O(eps^2)`` truncation; otherwise in floating point.
    """
    point = {str(k).lower(): float(v) for k, v in point.items()}
    if exact:
        step = Fraction(eps).limit_denominator(10**12)
        up = functional_value(spec, _exact_mix(empirical, point, step))
        down = functional_value(spec, _exact_mix(empirical, point, -step))
        return float((up - down) / (2 * step))
    up = functional_value(spec, empirical.mix_point(point, eps))
    down = functional_value(spec, empirical.mix_point(point, -eps))
    return float((up - down) / (2.0 * eps))
