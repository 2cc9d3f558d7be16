"""Plug-in, one-step and submodel ATE estimators with influence-function inference.

The ATE is treated as two per-arm potential-outcome means that are estimated
separately and then differenced; the per-arm influence-function values are
differenced as well for inference.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

CLIP_BOUNDS = (0.025, 0.975)
FLUCTUATION_BOUNDS = (1e-6, 1.0 - 1e-6)
Z_975 = 1.959963984540054

METHOD_LABELS = (
    "Base",
    "Onestep",
    "Submod",
    "Treg",
    "Treg+Submod",
    "Onestep w/ SL",
    "Submod w/ SL",
    "Treg w/ SL",
    "Treg+Submod w/ SL",
)


@dataclass
class EstimateReport:
    psi_hat: float
    if_values: np.ndarray
    std_err: float
    ci_low: float
    ci_high: float
    p_value: float
    method: str = ""
    updated: bool = False
    metadata: dict = field(default_factory=dict)

    def to_dict(self, include_if: bool = True) -> dict:
        out = asdict(self)
        out["if_values"] = [float(v) for v in self.if_values] if include_if else None
        for key in ("psi_hat", "std_err", "ci_low", "ci_high", "p_value"):
            out[key] = float(out[key])
        return out

    def to_json(self, include_if: bool = True) -> str:
        return json.dumps(self.to_dict(include_if), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateReport":
        data = dict(data)
        data["if_values"] = np.asarray(data.get("if_values") or [], dtype=float)
        return cls(**data)

    def csv_row(self) -> dict:
        return {
            "method": self.method,
            "psi_hat": repr(float(self.psi_hat)),
            "std_err": repr(float(self.std_err)),
            "ci_low": repr(float(self.ci_low)),
            "ci_high": repr(float(self.ci_high)),
            "p_value": repr(float(self.p_value)),
            "updated": str(self.updated),
        }


@dataclass(frozen=True)
class NuisancePair:
    """Outcome model ``m(t, x)`` and propensity model ``pi(x)``.

    ``propensity`` may be ``None`` for strategies that never look at it.
    Propensity predictions are clipped to ``clip_bounds`` before any division.
    """

    outcome: object
    propensity: Optional[object] = None
    clip_bounds: tuple = CLIP_BOUNDS

    def m(self, x, t_star: int) -> np.ndarray:
        return np.asarray(self.outcome.predict(x, t_star), dtype=float)

    def pi(self, x) -> np.ndarray:
        if self.propensity is None:
            raise ValueError("this estimator needs a propensity model")
        p = np.asarray(self.propensity.predict(x), dtype=float)
        return np.clip(p, *self.clip_bounds)

    def pi_arm(self, x, t_star: int) -> np.ndarray:
        p = self.pi(x)
        return p if t_star == 1 else 1.0 - p


@dataclass(frozen=True)
class FunctionOutcome:
    """Outcome model from a plain callable ``f(x, t)``."""

    fn: object

    def predict(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(x, t), dtype=float), (x.shape[0],)).copy()


@dataclass(frozen=True)
class FunctionPropensity:
    fn: object

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(x), dtype=float), (x.shape[0],)).copy()


# --------------------------------------------------------------------------
# plug-in and influence function


def plugin_ate(m, dataset) -> float:
    x = dataset.covariates
    return float(np.mean(m.predict(x, 1) - m.predict(x, 0)))


def eif_potential_outcome(dataset, nuisances: NuisancePair, t_star: int):
    """Return ``(psi_hat, phi)`` for the mean potential outcome under ``t_star``."""
    if t_star not in (0, 1):
        raise ValueError("t_star must be 0 or 1")
    x, t, y = dataset.covariates, dataset.treatment, dataset.outcome
    m = nuisances.m(x, t_star)
    psi = float(np.mean(m))
    h = (t == t_star) / nuisances.pi_arm(x, t_star)
    return psi, h * (y - m) + m - psi


def if_inference(phi, psi_star: float, mode: str = "standard"):
    """Standard error, 95% CI and two-sided p-value from influence-function values.

    ``mode="paper-literal"`` divides the standard error by an additional
    ``sqrt(n)`` in the interval and the z statistic.
    """
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[0]
    if n < 2:
        raise ValueError("need at least 2 influence-function values")
    var = float(np.mean((phi - phi.mean()) ** 2))
    if not var > 0.0:
        raise ValueError("degenerate influence function (zero variance)")
    se = math.sqrt(var / n)
    if mode == "standard":
        scale = se
    elif mode == "paper-literal":
        scale = se / math.sqrt(n)
    else:
        raise ValueError(f"unknown inference mode {mode!r}")
    z = abs(psi_star) / scale
    p = math.erfc(z / math.sqrt(2.0))
    return se, psi_star - Z_975 * scale, psi_star + Z_975 * scale, min(1.0, p)


def _report(psi, phi, method, updated, mode, **meta) -> EstimateReport:
    se, lo, hi, p = if_inference(phi, psi, mode)
    return EstimateReport(float(psi), np.asarray(phi, dtype=float), se, lo, hi, p, method, updated, dict(meta))


def base_estimate(dataset, outcome_model, method: str = "Base", mode: str = "standard") -> EstimateReport:
    """Plug-in ATE; inference uses the plug-in part of the IF only (no propensity)."""
    x = dataset.covariates
    m1, m0 = outcome_model.predict(x, 1), outcome_model.predict(x, 0)
    psi = float(np.mean(m1 - m0))
    phi = (m1 - m0) - psi
    try:
        se, lo, hi, p = if_inference(phi, psi, mode)
    except ValueError:
        se, lo, hi, p = 0.0, psi, psi, float("nan")
    return EstimateReport(psi, phi, se, lo, hi, p, method, False, {})


def one_step_ate(dataset, nuisances: NuisancePair, method: str = "Onestep", mode: str = "standard") -> EstimateReport:
    """One-step (AIPW) ATE: per-arm plug-in plus the mean influence function."""
    psi1, phi1 = eif_potential_outcome(dataset, nuisances, 1)
    psi0, phi0 = eif_potential_outcome(dataset, nuisances, 0)
    star1 = psi1 + float(np.mean(phi1))
    star0 = psi0 + float(np.mean(phi0))
    return _report(star1 - star0, phi1 - phi0, method, True, mode, plugin=psi1 - psi0, psi1=star1, psi0=star0)


def aipw_closed_form(dataset, nuisances: NuisancePair) -> float:
    x, t, y = dataset.covariates, dataset.treatment, dataset.outcome
    m1, m0 = nuisances.m(x, 1), nuisances.m(x, 0)
    p = nuisances.pi(x)
    return float(np.mean(t / p * (y - m1) - (1 - t) / (1 - p) * (y - m0) + m1 - m0))


# --------------------------------------------------------------------------
# submodel update


@dataclass(frozen=True)
class FluctuatedOutcome:
    """``m*(t, x) = m(t, x) + gamma_t / pi_t(x)``, optionally clamped to ``bounds``."""

    base: object
    propensity: object
    gamma: tuple
    clip_bounds: tuple = CLIP_BOUNDS
    bounds: Optional[tuple] = None

    def predict(self, x, t):
        t = int(t)
        p = np.clip(np.asarray(self.propensity.predict(x), dtype=float), *self.clip_bounds)
        p_arm = p if t == 1 else 1.0 - p
        out = np.asarray(self.base.predict(x, t), dtype=float) + self.gamma[t] / p_arm
        return out if self.bounds is None else np.clip(out, *self.bounds)


def fit_fluctuation(dataset, nuisances: NuisancePair, t_star: int) -> float:
    """Intercept-free least-squares coefficient of the residual on the clever covariate."""
    x, t, y = dataset.covariates, dataset.treatment, dataset.outcome
    rows = t == t_star
    if not np.any(rows):
        raise ValueError(f"no rows with t={t_star}; cannot fit the fluctuation for that arm")
    h = 1.0 / nuisances.pi_arm(x[rows], t_star)
    r = y[rows] - nuisances.m(x[rows], t_star)
    return float(h @ r / (h @ h))


def submodel_update(dataset, nuisances: NuisancePair, method: str = "Submod", mode: str = "standard",
                    bounds: Optional[tuple] = None):
    """Fluctuate ``m`` along the clever covariate so the EIF equation is solved.

    Returns ``(m_star, report)``.  With ``bounds`` set, the updated outcome
    model is clamped to that interval (the estimating equation then holds only
    up to the clamped rows).
    """
    gamma = (fit_fluctuation(dataset, nuisances, 0), fit_fluctuation(dataset, nuisances, 1))
    m_star = FluctuatedOutcome(nuisances.outcome, nuisances.propensity, gamma, nuisances.clip_bounds, bounds)
    updated = NuisancePair(m_star, nuisances.propensity, nuisances.clip_bounds)
    psi1, phi1 = eif_potential_outcome(dataset, updated, 1)
    psi0, phi0 = eif_potential_outcome(dataset, updated, 0)
    report = _report(psi1 - psi0, phi1 - phi0, method, True, mode, gamma0=gamma[0], gamma1=gamma[1], psi1=psi1, psi0=psi0)
    return m_star, report


def clever_covariate(dataset, nuisances: NuisancePair, t_star: int) -> np.ndarray:
    x, t = dataset.covariates, dataset.treatment
    return (t == t_star) / nuisances.pi_arm(x, t_star)


# --------------------------------------------------------------------------
# targeted regularization


@dataclass(frozen=True)
class TregTerms:
    """Per-row targeted-regularization losses and their derivatives."""

    loss_q: np.ndarray
    loss_tl: np.ndarray
    dq_dm: np.ndarray
    dtl_dm: np.ndarray
    dtl_dgamma: np.ndarray

    @property
    def total(self) -> float:
        return float(np.mean(self.loss_q) + np.mean(self.loss_tl))

    def gamma_gradient(self, arm, n_arms: int = 2) -> np.ndarray:
        """Gradient of ``mean(loss_tl)`` with respect to each arm's gamma."""
        arm = np.asarray(arm, dtype=int)
        n = self.loss_tl.shape[0]
        return np.bincount(arm, weights=self.dtl_dgamma, minlength=n_arms) / n


def _nll(y, p):
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def targeted_regularization_terms(y, m, arm, gamma, clever, binary: bool = True) -> TregTerms:
    """Outcome loss of ``m`` and of its fluctuation ``m* = m + gamma[arm] * clever``.

    For binary targets ``m*`` is clamped to ``[1e-6, 1 - 1e-6]`` and both terms
    are Bernoulli negative log-likelihoods; otherwise both are squared errors.
    ``clever`` is ``1 / pi_arm(x)`` for each row's own arm (zero masks a row out
    of the fluctuation).
    """
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    arm = np.asarray(arm, dtype=int)
    clever = np.asarray(clever, dtype=float)
    g = np.asarray(gamma, dtype=float)[arm]
    raw = m + g * clever
    if binary:
        lo, hi = FLUCTUATION_BOUNDS
        m_star = np.clip(raw, lo, hi)
        inside = (raw > lo) & (raw < hi)
        m_q = np.clip(m, 1e-15, 1.0 - 1e-15)
        loss_q = _nll(y, m_q)
        loss_tl = _nll(y, m_star)
        dq_dm = (m_q - y) / (m_q * (1.0 - m_q))
        dtl_dm = np.where(inside, (m_star - y) / (m_star * (1.0 - m_star)), 0.0)
    else:
        loss_q = (m - y) ** 2
        loss_tl = (raw - y) ** 2
        dq_dm = 2.0 * (m - y)
        dtl_dm = 2.0 * (raw - y)
    return TregTerms(loss_q, loss_tl, dq_dm, dtl_dm, dtl_dm * clever)
