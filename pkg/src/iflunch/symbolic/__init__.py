"""Symbolic influence functions for estimands over fully observed causal DAGs."""
from .canonical import canonicalize, expand, normal_form
from .derive import (
    EstimandKind,
    EstimandSpec,
    functional,
    g_formula,
    gateaux_of_conditional,
    if_of_estimand,
    if_of_interventional,
    raw_influence_function,
)
from .evaluate import Empirical, ZeroProbabilityEvent, eval_expr, finite_diff_gateaux, functional_value
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
    from_json,
    neg,
    pretty_print,
    to_json,
)
from .graph import CausalGraph, NotIdentifiable, graph_from_json, load_graph, parse_graph_text
from .parse import parse, parse_raw

__all__ = [
    "Add", "BOUND", "CausalGraph", "Cond", "CondExp", "Const", "Delta", "DiracRatio", "Empirical",
    "EstimandKind", "EstimandRef", "EstimandSpec", "Expr", "FIXED", "NotIdentifiable", "POINT", "Product",
    "Quotient", "Ref", "SumInt", "Var", "ZeroProbabilityEvent", "canonicalize", "eval_expr", "expand",
    "finite_diff_gateaux", "from_json", "functional", "functional_value", "g_formula",
    "gateaux_of_conditional", "graph_from_json", "if_of_estimand", "if_of_interventional", "load_graph",
    "neg", "normal_form", "parse", "parse_graph_text", "parse_raw", "pretty_print",
    "raw_influence_function", "to_json",
]
