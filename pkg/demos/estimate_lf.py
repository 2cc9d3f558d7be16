"""Plug-in, one-step and submodel ATE estimates on one synthetic LF dataset.

    python demos/estimate_lf.py [v1|v2] [seed]
"""
import sys

from iflunch.dgp import generate_lf
from iflunch.estimators import NuisancePair, base_estimate, one_step_ate, submodel_update
from iflunch.learners import Learner, LearnerKind, fit_outcome_learner, fit_propensity_learner

variant = sys.argv[1] if len(sys.argv) > 1 else "v1"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

data = generate_lf(variant, 5000, seed)
outcome = fit_outcome_learner(Learner(LearnerKind.LOGISTIC), data, seed)
# Super Learner propensity with 5 folds keeps the demo fast
propensity = fit_propensity_learner("SL", data, seed, {"folds": 5})
pair = NuisancePair(outcome, propensity)

reports = [
    base_estimate(data, outcome),
    one_step_ate(data, pair, "Onestep w/ SL"),
    submodel_update(data, pair, "Submod w/ SL")[1],
]
print(f"true ATE {data.true_ate:.4f}")
for rep in reports:
    print(f"{rep.method:<14} {rep.psi_hat:.4f}  s.e. {rep.std_err:.4f}  "
          f"95% CI [{rep.ci_low:.4f}, {rep.ci_high:.4f}]")
