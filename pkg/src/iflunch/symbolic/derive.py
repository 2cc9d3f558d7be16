"""Identification by the g-formula and influence functions by Gateaux derivatives."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from .canonical import canonicalize
from .expr import (
    BOUND,
    FIXED,
    Add,
    Cond,
    Const,
    DiracRatio,
    Expr,
    Product,
    Quotient,
    Ref,
    SumInt,
    Var,
    neg,
)
from .graph import CausalGraph, NotIdentifiable, graph_from_json, load_graph


class EstimandKind(str, enum.Enum):
    INTERVENTIONAL_MEAN = "interventional_mean"
    POPULATION_MEAN = "population_mean"
    AVERAGE_DENSITY = "average_density"


@dataclass(frozen=True)
class EstimandSpec:
    """What to differentiate.

    ``treatment`` maps treatment variables to their intervention values for
    an interventional mean; it is ignored by the other kinds.
    """

    kind: EstimandKind
    outcome: str
    treatment: tuple = ()
    graph: Optional[CausalGraph] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimandKind(self.kind))
        object.__setattr__(self, "outcome", self.outcome.lower())
        items = self.treatment.items() if isinstance(self.treatment, Mapping) else self.treatment
        object.__setattr__(self, "treatment", tuple(sorted((str(k).lower(), float(v)) for k, v in items)))
        if self.graph is not None:
            self.graph.require(self.outcome, *(k for k, _ in self.treatment))
        if self.kind is EstimandKind.INTERVENTIONAL_MEAN:
            if not self.treatment:
                raise ValueError("an interventional mean needs at least one treatment value")
            if self.outcome in dict(self.treatment):
                raise ValueError("outcome cannot also be a treatment")
            if self.graph is None:
                raise ValueError("an interventional mean needs a causal graph")

    @classmethod
    def from_json(cls, data, graph: Optional[CausalGraph] = None) -> "EstimandSpec":
        if isinstance(data, str):
            data = json.loads(data)
        if graph is None and "graph" in data:
            g = data["graph"]
            graph = load_graph(g) if isinstance(g, str) else graph_from_json(g)
        return cls(data["kind"], data["outcome"], data.get("treatment", {}), graph)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "outcome": self.outcome}
        if self.treatment:
            out["treatment"] = {k: v for k, v in self.treatment}
        return out


def _ref(v: str, fixed: Mapping[str, float]) -> Ref:
    return Ref(v, FIXED, fixed[v]) if v in fixed else Ref(v)


def g_formula(graph: CausalGraph, outcome: str, treatment: Union[Mapping, set, list, tuple]) -> Expr:
    """Identification functional of ``P(outcome | do(treatment))`` in a fully observed DAG.

    ``treatment`` is either a mapping to intervention values (references
    become fixed, ``t=1``) or a collection of names (left free, ``t``).
    Variables that are not ancestors of the outcome once edges into the
    treatment are cut sum out to one and are left out.
    """
    y = outcome.lower()
    if isinstance(treatment, Mapping):
        fixed = {str(k).lower(): float(v) for k, v in treatment.items()}
        names = set(fixed)
    else:
        fixed = {}
        names = {str(k).lower() for k in treatment}
    graph.require(y, *names)
    if y in names:
        raise ValueError("outcome cannot be one of the treatments")
    keep = graph.ancestors([y], cut=names)
    order = [v for v in reversed(graph.topological_order()) if v in keep and v not in names]
    factors = tuple(Cond((Ref(v),), tuple(_ref(p, fixed) for p in graph.parents(v))) for v in order)
    body = factors[0] if len(factors) == 1 else Product(factors)
    sums = tuple(v for v in order if v != y)
    return SumInt(sums, body) if sums else body


def functional(spec: EstimandSpec) -> Expr:
    """The scalar functional ``Psi(P)`` named by ``spec``."""
    y = spec.outcome
    if spec.kind is EstimandKind.POPULATION_MEAN:
        return SumInt((y,), Product((Var(Ref(y)), Cond((Ref(y),)))))
    if spec.kind is EstimandKind.AVERAGE_DENSITY:
        return SumInt((y,), Product((Cond((Ref(y),)), Cond((Ref(y),)))))
    if spec.graph.bidirected:
        pairs = ", ".join(f"{a}<->{b}" for a, b in spec.graph.bidirected)
        raise NotIdentifiable(f"FAIL: latent confounding ({pairs}); only fully observed DAGs are identified")
    dist = g_formula(spec.graph, y, dict(spec.treatment))
    if isinstance(dist, SumInt):
        inner, sums = dist.body, dist.names
    else:
        inner, sums = dist, ()
    factors = inner.factors if isinstance(inner, Product) else (inner,)
    return SumInt((y,) + tuple(sums), Product((Var(Ref(y)),) + tuple(factors)))


def gateaux_of_conditional(a, b=()) -> Expr:
    """Derivative of ``P_eps(a|b)`` at ``eps=0`` along a point mass: ``P(a|b) D(a|b)``."""
    a, b = tuple(a), tuple(b)
    if not a:
        raise ValueError("left set must be non-empty")
    return Product((Cond(a, b), DiracRatio(a, b)))


def _collect(body: Expr, num: list, den: list, inverted: bool = False):
    if isinstance(body, Cond):
        (den if inverted else num).append(body)
    elif isinstance(body, (Var, Const)):
        pass
    elif isinstance(body, Product):
        for f in body.factors:
            _collect(f, num, den, inverted)
    elif isinstance(body, Quotient):
        _collect(body.num, num, den, inverted)
        _collect(body.den, num, den, not inverted)
    else:
        raise ValueError(f"functional body must be a product/quotient of conditionals, found {type(body).__name__}")


def if_of_interventional(expr: Expr) -> Expr:
    """Influence function of ``Sum_S w * prod P(A_i|B_i) / prod P(C_j|D_j)``.

    Returns the functional's body times the sum of the numerator Dirac
    ratios minus the sum of the denominator ones, inside the same sum.
    """
    if isinstance(expr, SumInt):
        names, body = expr.names, expr.body
    else:
        names, body = (), expr
    num, den = [], []
    _collect(body, num, den)
    if not num and not den:
        raise ValueError("functional contains no conditionals to differentiate")
    bracket = tuple(DiracRatio(c.a, c.b) for c in num) + tuple(neg(DiracRatio(c.a, c.b)) for c in den)
    out = Product((body, Add(bracket)))
    return SumInt(names, out) if names else out


def raw_influence_function(spec: EstimandSpec) -> Expr:
    return if_of_interventional(functional(spec))


def if_of_estimand(spec: EstimandSpec) -> Expr:
    """Simplified analytic influence function of ``spec``."""
    psi = functional(spec)
    return canonicalize(if_of_interventional(psi), estimand=psi)
