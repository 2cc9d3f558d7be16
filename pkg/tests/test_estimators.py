import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iflunch.dgp import Dataset, generate_lf, lf_potential_outcomes, lf_propensity, true_ate_exact
from iflunch.estimators import (
    EstimateReport,
    FunctionOutcome,
    FunctionPropensity,
    NuisancePair,
    aipw_closed_form,
    base_estimate,
    eif_potential_outcome,
    fit_fluctuation,
    if_inference,
    one_step_ate,
    plugin_ate,
    submodel_update,
    targeted_regularization_terms,
)


def _const(v):
    return FunctionOutcome(lambda x, t: v)


def _oracle_m(variant="v1"):
    return FunctionOutcome(lambda x, t: lf_potential_outcomes(x, variant)[0 if int(t) == 1 else 1])


def _random_problem(seed, n=60):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, n)
    t[:2] = [0, 1]
    y = rng.random(n)
    a, b = rng.normal(size=2)
    m = FunctionOutcome(lambda xx, tt: 1 / (1 + np.exp(-(a * xx[:, 0] + b * tt))))
    pi = FunctionPropensity(lambda xx: 1 / (1 + np.exp(-2 * xx[:, 1])))
    return Dataset(x, t, y), NuisancePair(m, pi)


def test_plugin_ate_trivial_cases():
    d = generate_lf("v1", 50, seed=0)
    assert plugin_ate(_const(0.3), d) == 0.0
    assert plugin_ate(FunctionOutcome(lambda x, t: float(t)), d) == 1.0


def test_plugin_ate_with_true_functions():
    d = generate_lf("v1", 100_000, seed=1)
    diff = np.subtract(*lf_potential_outcomes(d.covariates, "v1"))
    assert abs(plugin_ate(_oracle_m(), d) - true_ate_exact("v1")) < 3 * diff.std() / math.sqrt(d.n)


def test_eif_single_point_hand_value():
    d = Dataset(np.zeros((1, 1)), [1], [1.0])
    nuis = NuisancePair(_const(0.4), FunctionPropensity(lambda x: 0.5))
    psi, phi = eif_potential_outcome(d, nuis, 1)
    assert psi == pytest.approx(0.4)
    assert phi[0] == pytest.approx(1.2)


def test_eif_untreated_point_drops_residual():
    d = Dataset(np.zeros((2, 1)), [0, 1], [0.9, 0.2])
    nuis = NuisancePair(FunctionOutcome(lambda x, t: np.array([0.3, 0.5])), FunctionPropensity(lambda x: 0.5))
    psi, phi = eif_potential_outcome(d, nuis, 1)
    assert phi[0] == pytest.approx(0.3 - psi)


def test_eif_centres_when_model_interpolates():
    d = Dataset(np.arange(4.0)[:, None], [1, 1, 1, 1], [0.1, 0.4, 0.6, 0.9])
    nuis = NuisancePair(FunctionOutcome(lambda x, t: np.array([0.1, 0.4, 0.6, 0.9])), FunctionPropensity(lambda x: 0.7))
    assert abs(np.mean(eif_potential_outcome(d, nuis, 1)[1])) < 1e-15
    with pytest.raises(ValueError):
        eif_potential_outcome(d, nuis, 2)


def test_if_inference_examples():
    phi = np.tile([-1.0, 1.0], 50)
    se, lo, hi, p = if_inference(phi, 0.0)
    assert se == pytest.approx(0.1)
    assert (lo, hi) == pytest.approx((-0.196, 0.196), abs=1e-3)
    assert p == 1.0
    se2, lo2, hi2, p2 = if_inference(phi, 0.0, "paper-literal")
    assert se2 == se
    assert hi2 - 0.0 == pytest.approx(0.0196, abs=1e-4)
    assert p2 == 1.0


def test_if_inference_errors():
    with pytest.raises(ValueError, match="degenerate influence function"):
        if_inference(np.ones(10), 0.2)
    with pytest.raises(ValueError):
        if_inference([1.0], 0.0)
    with pytest.raises(ValueError, match="unknown inference mode"):
        if_inference([1.0, -1.0], 0.0, "bayes")


def test_if_inference_p_value_against_normal_tail():
    phi = np.tile([-1.0, 1.0], 50)
    _, _, _, p = if_inference(phi, 0.196)
    assert p == pytest.approx(0.05, abs=2e-4)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_one_step_matches_closed_form_aipw(seed):
    d, nuis = _random_problem(seed)
    assert one_step_ate(d, nuis).psi_hat == pytest.approx(aipw_closed_form(d, nuis), abs=1e-12)


def test_one_step_zero_correction_returns_plugin():
    x = np.arange(8.0)[:, None]
    d = Dataset(x, [0, 1, 0, 1, 0, 1, 0, 1], [0.1, 0.6, 0.3, 0.8, 0.3, 0.8, 0.1, 0.6])
    nuis = NuisancePair(FunctionOutcome(lambda xx, t: 0.7 if int(t) else 0.2), FunctionPropensity(lambda xx: 0.5))
    rep = one_step_ate(d, nuis)
    assert rep.psi_hat == pytest.approx(0.5, abs=1e-15)
    assert rep.metadata["plugin"] == pytest.approx(0.5)
    assert rep.updated


def test_clipping_makes_extreme_propensities_equivalent():
    d, nuis = _random_problem(3)
    a = NuisancePair(nuis.outcome, FunctionPropensity(lambda x: np.where(x[:, 0] > 0, 0.999, 1e-4)))
    b = NuisancePair(nuis.outcome, FunctionPropensity(lambda x: np.where(x[:, 0] > 0, 0.98, 0.02)))
    assert one_step_ate(d, a).psi_hat == one_step_ate(d, b).psi_hat


def test_base_never_needs_propensity():
    d, nuis = _random_problem(4)
    rep = base_estimate(d, nuis.outcome)
    assert rep.psi_hat == pytest.approx(plugin_ate(nuis.outcome, d))
    assert not rep.updated
    with pytest.raises(ValueError, match="propensity"):
        NuisancePair(nuis.outcome).pi(d.covariates)


def test_base_estimate_constant_contrast_has_zero_se():
    d = generate_lf("v1", 20, seed=2)
    rep = base_estimate(d, FunctionOutcome(lambda x, t: 0.6 if int(t) else 0.4))
    assert rep.std_err == 0.0 and rep.psi_hat == pytest.approx(0.2)


def test_fluctuation_single_row_hand_value():
    d = Dataset(np.zeros((2, 1)), [1, 0], [0.6, 0.0])
    nuis = NuisancePair(_const(0.4), FunctionPropensity(lambda x: 0.25))
    assert fit_fluctuation(d, nuis, 1) == pytest.approx(0.2 / 4)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_submodel_solves_estimating_equation(seed):
    d, nuis = _random_problem(seed)
    m_star, rep = submodel_update(d, nuis)
    for arm in (0, 1):
        rows = d.treatment == arm
        h = 1 / nuis.pi_arm(d.covariates[rows], arm)
        assert abs(h @ (d.outcome[rows] - m_star.predict(d.covariates[rows], arm))) < 1e-10
    assert abs(np.mean(rep.if_values)) < 1e-10


def test_submodel_orthogonal_residual_leaves_model():
    d = Dataset(np.zeros((4, 1)), [1, 1, 0, 0], [0.6, 0.2, 0.5, 0.5])
    nuis = NuisancePair(_const(0.4), FunctionPropensity(lambda x: 0.5))
    m_star, rep = submodel_update(d, nuis)
    assert m_star.gamma[1] == pytest.approx(0.0, abs=1e-15)
    assert rep.metadata["psi1"] == pytest.approx(0.4)


def test_submodel_bounds_keep_binary_range():
    d, nuis = _random_problem(5)
    m_star, _ = submodel_update(d, nuis, bounds=(0.0, 1.0))
    for arm in (0, 1):
        pred = m_star.predict(d.covariates, arm)
        assert np.all((pred >= 0) & (pred <= 1))


def test_submodel_needs_both_arms():
    d = Dataset(np.zeros((3, 1)), [1, 1, 1], [1.0, 0.0, 1.0])
    with pytest.raises(ValueError, match="no rows with t=0"):
        submodel_update(d, NuisancePair(_const(0.5), FunctionPropensity(lambda x: 0.5)))


def test_treg_terms_trivial_cases():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 20).astype(float)
    m = rng.uniform(0.1, 0.9, 20)
    arm = rng.integers(0, 2, 20)
    terms = targeted_regularization_terms(y, m, arm, [0.0, 0.0], rng.uniform(1, 3, 20))
    np.testing.assert_array_equal(terms.loss_tl, terms.loss_q)
    inert = targeted_regularization_terms(y, m, arm, [0.3, -0.2], np.zeros(20))
    np.testing.assert_array_equal(inert.gamma_gradient(arm), [0.0, 0.0])


@pytest.mark.parametrize("binary", [True, False])
def test_treg_gamma_gradient_matches_finite_differences(binary):
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 30).astype(float) if binary else rng.normal(size=30)
    m = rng.uniform(0.2, 0.8, 30)
    arm = rng.integers(0, 2, 30)
    clever = rng.uniform(1, 3, 30)
    gamma = np.array([0.02, -0.03])
    g = targeted_regularization_terms(y, m, arm, gamma, clever, binary).gamma_gradient(arm)
    for k in range(2):
        step = np.zeros(2)
        step[k] = 1e-6
        up = targeted_regularization_terms(y, m, arm, gamma + step, clever, binary).total
        down = targeted_regularization_terms(y, m, arm, gamma - step, clever, binary).total
        fd = (up - down) / 2e-6
        assert abs(g[k] - fd) / max(abs(g[k]), abs(fd), 1e-6) < 1e-4


def test_report_json_round_trip():
    d, nuis = _random_problem(6)
    rep = one_step_ate(d, nuis, method="Onestep w/ SL")
    back = EstimateReport.from_dict(json.loads(rep.to_json()))
    assert back.psi_hat == rep.psi_hat and back.method == rep.method
    np.testing.assert_array_equal(back.if_values, rep.if_values)
    assert json.loads(rep.to_json(include_if=False))["if_values"] is None
    assert rep.csv_row()["psi_hat"] == repr(rep.psi_hat)


def _double_robust_bias(outcome, propensity, sims=200, n=5000):
    # a fifth of LF rows have true propensity below .025, so the default clip
    # would itself misspecify the oracle propensity
    nuis = NuisancePair(outcome, propensity, clip_bounds=(1e-9, 1 - 1e-9))
    errors = []
    for s in range(sims):
        d = generate_lf("v1", n, seed=10_000 + s)
        errors.append(one_step_ate(d, nuis).psi_hat - true_ate_exact("v1"))
    errors = np.array(errors)
    return errors.mean(), errors.std(ddof=1) / math.sqrt(sims)


def test_double_robust_with_true_propensity():
    wrong_m = FunctionOutcome(lambda x, t: 0.3 + 0.05 * x[:, 0] + 0.1 * float(t))
    bias, mcse = _double_robust_bias(wrong_m, FunctionPropensity(lf_propensity))
    assert abs(bias) < 2 * mcse


def test_double_robust_with_true_outcome():
    wrong_pi = FunctionPropensity(lambda x: np.full(x.shape[0], 0.3))
    bias, mcse = _double_robust_bias(_oracle_m(), wrong_pi)
    assert abs(bias) < 2 * mcse


@pytest.mark.slow
def test_one_step_improves_misspecified_model_on_v2():
    from iflunch.learners import Learner, LearnerKind, fit_outcome_learner, fit_propensity_learner

    wins = 0
    for s in range(100):
        d = generate_lf("v2", 5000, seed=20_000 + s)
        m = fit_outcome_learner(Learner(LearnerKind.LOGISTIC, {"ridge": 0.0}), d)
        pi = fit_propensity_learner("SL", d, seed=s)
        truth = true_ate_exact("v2")
        wins += abs(one_step_ate(d, NuisancePair(m, pi)).psi_hat - truth) < abs(plugin_ate(m, d) - truth)
    assert wins >= 80
