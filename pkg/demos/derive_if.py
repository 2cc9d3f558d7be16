"""Derive influence functions symbolically and check them against finite differences.

    python demos/derive_if.py
"""
import numpy as np

from iflunch.symbolic import (
    Empirical,
    EstimandSpec,
    eval_expr,
    finite_diff_gateaux,
    functional,
    if_of_estimand,
    load_graph,
    pretty_print,
)

triangle = load_graph("x -> t\nx -> y\nt -> y")
chain = load_graph("t -> m\nm -> y")
cases = [
    ("population mean", EstimandSpec("population_mean", "y"), ["x", "t", "y"]),
    ("E[Y(t=1)], confounded", EstimandSpec("interventional_mean", "y", {"t": 1}, triangle), ["x", "t", "y"]),
    ("E[Y(t=1)], front door", EstimandSpec("interventional_mean", "y", {"t": 1}, chain), ["t", "m", "y"]),
    ("average density", EstimandSpec("average_density", "y"), ["x", "t", "y"]),
]

rng = np.random.default_rng(0)
for label, spec, names in cases:
    expr = if_of_estimand(spec)
    data = rng.integers(0, 2, size=(64, len(names)))
    emp = Empirical.from_data(names, data)
    point = {k: int(v) for k, v in zip(names, data[0])}
    symbolic = eval_expr(expr, emp, point, psi=functional(spec))
    numeric = finite_diff_gateaux(spec, emp, point)
    print(f"{label}\n  IF = {pretty_print(expr)}\n  at {point}: symbolic {symbolic:+.8f}, "
          f"finite difference {numeric:+.8f}\n")
