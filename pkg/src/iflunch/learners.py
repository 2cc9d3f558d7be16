"""Classical base learners and the Super Learner stacking ensemble.

Every learner follows the same two-step shape: ``Learner.fit(X, y, seed)``
returns an immutable fitted object whose ``predict(X)`` gives the conditional
mean (a probability for binary targets).
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dgp import make_rng

_LOG_EPS = 1e-12


class SuperLearnerWarning(UserWarning):
    """A library member failed to fit and was given zero weight."""


# --------------------------------------------------------------------------
# logistic regression


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coef: np.ndarray
    converged: bool
    n_iter: int
    loglik_trace: tuple = ()

    def decision_function(self, features):
        return self.intercept + np.asarray(features, dtype=float) @ self.coef

    def predict(self, features):
        z = self.decision_function(features)
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def _penalized_loglik(X1, y, beta, ridge):
    z = X1 @ beta
    # y*log(p) + (1-y)*log(1-p) written with logaddexp for stability
    ll = np.sum(y * z - np.logaddexp(0.0, z))
    return ll - 0.5 * ridge * beta @ beta


def fit_logistic(features, target, ridge: float = 0.0, max_iter: int = 100, tol: float = 1e-10) -> LogisticModel:
    """Ridge-penalised logistic regression by iteratively reweighted least squares.

    The penalty ``ridge/2 * ||beta||^2`` covers the intercept as well, which
    keeps the optimum finite for constant or separable targets.  Each Newton
    step is halved until the penalised log-likelihood does not decrease.
    ``target`` may hold fractional values in [0, 1].
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=float).ravel()
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    X1 = np.column_stack([np.ones(X.shape[0]), X])
    beta = np.zeros(X1.shape[1])
    ll = _penalized_loglik(X1, y, beta, ridge)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = 0.5 * (1.0 + np.tanh(0.5 * (X1 @ beta)))
        w = p * (1.0 - p)
        grad = X1.T @ (y - p) - ridge * beta
        hess = (X1 * w[:, None]).T @ X1 + ridge * np.eye(X1.shape[1])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ValueError("singular weighted normal equations; refit with ridge > 0") from None
        if not np.all(np.isfinite(step)):
            raise ValueError("singular weighted normal equations; refit with ridge > 0")
        scale = 1.0
        for _ in range(60):
            cand = beta + scale * step
            ll_new = _penalized_loglik(X1, y, cand, ridge)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            scale *= 0.5
        else:
            cand, ll_new = beta, ll
        delta = np.max(np.abs(cand - beta))
        beta, ll = cand, max(ll_new, ll)
        trace.append(ll)
        if delta < tol * max(1.0, np.max(np.abs(beta))) or np.max(np.abs(grad)) < tol:
            converged = True
            break
    return LogisticModel(float(beta[0]), beta[1:].copy(), converged, it, tuple(trace))


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray

    def predict(self, features):
        return self.intercept + np.asarray(features, dtype=float) @ self.coef


def fit_linear(features, target, ridge: float = 0.0) -> LinearModel:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=float).ravel()
    X1 = np.column_stack([np.ones(X.shape[0]), X])
    if ridge > 0:
        beta = np.linalg.solve(X1.T @ X1 + ridge * np.eye(X1.shape[1]), X1.T @ y)
    else:
        beta = np.linalg.lstsq(X1, y, rcond=None)[0]
    return LinearModel(float(beta[0]), beta[1:].copy())


def add_quadratic_features(features) -> np.ndarray:
    """Append squares (column order) then pairwise products (lexicographic pairs)."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m = X.shape[1]
    squares = X**2
    products = [X[:, i] * X[:, j] for i in range(m) for j in range(i + 1, m)]
    parts = [X, squares]
    if products:
        parts.append(np.column_stack(products))
    return np.hstack(parts)


# --------------------------------------------------------------------------
# nearest neighbours


def _knn_indices(train, query, k, chunk=512):
    """Indices of the k nearest training rows, ties broken by lowest index."""
    out = np.empty((query.shape[0], k), dtype=np.intp)
    sq_train = np.einsum("ij,ij->i", train, train)
    cols = np.arange(train.shape[0])
    for start in range(0, query.shape[0], chunk):
        q = query[start : start + chunk]
        d = sq_train[None, :] - 2.0 * q @ train.T + np.einsum("ij,ij->i", q, q)[:, None]
        np.maximum(d, 0.0, out=d)
        kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
        below = d < kth
        tied = d == kth
        need = k - below.sum(axis=1, keepdims=True)
        take = below | (tied & (np.cumsum(tied, axis=1) <= need))
        # each row selects exactly k columns; order them by index
        rows = np.nonzero(take)
        out[start : start + q.shape[0]] = cols[rows[1]].reshape(q.shape[0], k)
    return out


def knn_predict(train_features, train_target, query, k: int):
    """Mean target of the ``k`` Euclidean-nearest training rows.

    ``query`` may be a single row or a matrix; returns a scalar or a vector
    accordingly.
    """
    train = np.asarray(train_features, dtype=float)
    if train.ndim == 1:
        train = train[:, None]
    y = np.asarray(train_target, dtype=float).ravel()
    if train.shape[0] == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= train.shape[0]:
        raise ValueError(f"k={k} must be in [1, n_train={train.shape[0]}]")
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1 and train.shape[1] > 1 or q.ndim == 0
    q = np.atleast_2d(q)
    if q.shape[1] != train.shape[1]:
        q = q.reshape(-1, train.shape[1])
    idx = _knn_indices(train, q, k)
    pred = y[idx].mean(axis=1)
    return float(pred[0]) if single else pred


@dataclass(frozen=True)
class KnnModel:
    train_features: np.ndarray
    train_target: np.ndarray
    k: int
    center: np.ndarray
    scale: np.ndarray

    def predict(self, features):
        X = (np.atleast_2d(np.asarray(features, dtype=float)) - self.center) / self.scale
        return knn_predict(self.train_features, self.train_target, X, self.k)


# --------------------------------------------------------------------------
# simplex-constrained least squares


def _simplex_ls_on_support(A, b, support):
    """Minimise ||A_S z - b|| subject to sum(z) = 1 via the bordered KKT system."""
    As = A[:, support]
    s = len(support)
    kkt = np.zeros((s + 1, s + 1))
    kkt[:s, :s] = As.T @ As
    kkt[:s, s] = kkt[s, :s] = 1.0
    rhs = np.concatenate([As.T @ b, [1.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    z = sol[:s]
    return z / z.sum() if abs(z.sum()) > 0 else np.full(s, 1.0 / s)


def nnls_simplex(design, target, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Least squares over the probability simplex by a primal active-set method.

    Starts at the best single column (lowest index on ties), then repeatedly
    frees the column whose gradient most undercuts the common multiplier of
    the free set, solves the equality-constrained subproblem, and steps back
    to the boundary whenever a free weight would turn negative.  A column only
    enters when it strictly improves the objective, so duplicated columns keep
    all weight on the lowest index.
    """
    A = np.asarray(design, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    b = np.asarray(target, dtype=float).ravel()
    p = A.shape[1]
    if p < 1:
        raise ValueError("design needs at least one column")
    if p == 1:
        return np.ones(1)
    resid = np.sum((A - b[:, None]) ** 2, axis=0)
    j0 = int(np.argmin(resid))
    w = np.zeros(p)
    w[j0] = 1.0
    free = [j0]
    scale = max(1.0, float(np.max(np.abs(A.T @ A))))
    for _ in range(max_iter):
        g = A.T @ (A @ w - b)
        level = np.mean(g[free])
        out = [j for j in range(p) if j not in free]
        if not out:
            break
        gaps = np.array([g[j] - level for j in out])
        if gaps.min() >= -tol * scale:
            break
        free.append(out[int(np.argmin(gaps))])
        while True:
            order = sorted(free)
            z = _simplex_ls_on_support(A, b, order)
            if np.all(z > 0):
                w = np.zeros(p)
                w[order] = z
                free = order
                break
            # step from w toward z until the first weight reaches zero
            cur = w[order]
            neg = z <= 0
            ratios = np.where(neg, cur / np.where(neg, cur - z, 1.0), np.inf)
            alpha = float(np.min(ratios))
            new = cur + alpha * (z - cur)
            new[new <= tol] = 0.0
            w = np.zeros(p)
            w[order] = new
            free = [j for j in order if w[j] > 0]
            if not free:
                w[j0] = 1.0
                free = [j0]
                break
    w = np.clip(w, 0.0, None)
    return w / w.sum()


# --------------------------------------------------------------------------
# learner specifications


class LearnerKind(str, enum.Enum):
    LOGISTIC = "LogisticRegression"
    LOGISTIC_QUADRATIC = "LogisticRegressionQuadratic"
    LINEAR = "LinearRegression"
    KNN = "KNearestNeighbors"
    SMALL_MLP = "SmallMlp"


_DEFAULTS = {
    LearnerKind.LOGISTIC: {"ridge": 1.0, "max_iter": 100},
    LearnerKind.LOGISTIC_QUADRATIC: {"ridge": 1.0, "max_iter": 100},
    LearnerKind.LINEAR: {"ridge": 0.0},
    LearnerKind.KNN: {"k": 5},
    LearnerKind.SMALL_MLP: {"hidden": 32, "iterations": 300, "learning_rate": 0.01, "l2_penalty": 1e-4},
}


@dataclass(frozen=True)
class QuadraticModel:
    base: LogisticModel

    def predict(self, features):
        return self.base.predict(add_quadratic_features(features))


@dataclass(frozen=True)
class Learner:
    kind: LearnerKind
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", LearnerKind(self.kind))
        merged = dict(_DEFAULTS[self.kind])
        merged.update(self.hyperparameters or {})
        object.__setattr__(self, "hyperparameters", merged)

    @property
    def name(self) -> str:
        return self.kind.value

    def fit(self, features, target, seed=None):
        hp = self.hyperparameters
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(target, dtype=float).ravel()
        if self.kind is LearnerKind.LOGISTIC:
            return fit_logistic(X, y, ridge=hp["ridge"], max_iter=hp["max_iter"])
        if self.kind is LearnerKind.LOGISTIC_QUADRATIC:
            return QuadraticModel(fit_logistic(add_quadratic_features(X), y, ridge=hp["ridge"], max_iter=hp["max_iter"]))
        if self.kind is LearnerKind.LINEAR:
            return fit_linear(X, y, ridge=hp["ridge"])
        if self.kind is LearnerKind.KNN:
            center = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0] = 1.0
            k = min(int(hp["k"]), X.shape[0])
            return KnnModel((X - center) / scale, y, k, center, scale)
        if self.kind is LearnerKind.SMALL_MLP:
            from .neuralnet import fit_small_mlp

            binary = bool(np.all((y == 0) | (y == 1)))
            return fit_small_mlp(
                X, y, hidden=hp["hidden"], iterations=hp["iterations"], learning_rate=hp["learning_rate"],
                l2_penalty=hp["l2_penalty"], binary=binary, seed=seed,
            )
        raise ValueError(f"unknown learner kind {self.kind}")


def default_library(binary: bool = True) -> list:
    first = Learner(LearnerKind.LOGISTIC if binary else LearnerKind.LINEAR)
    rest = [Learner(LearnerKind.LOGISTIC_QUADRATIC)] if binary else []
    return [first, *rest, Learner(LearnerKind.KNN), Learner(LearnerKind.SMALL_MLP)]


# --------------------------------------------------------------------------
# super learner


def stratified_folds(target, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; binary targets are dealt round-robin within each class."""
    y = np.asarray(target).ravel()
    folds = np.empty(y.shape[0], dtype=int)
    if np.all((y == 0) | (y == 1)):
        groups = [np.flatnonzero(y == 0), np.flatnonzero(y == 1)]
    else:
        groups = [np.arange(y.shape[0])]
    offset = 0
    for g in groups:
        g = rng.permutation(g)
        folds[g] = (np.arange(g.shape[0]) + offset) % k
        offset += g.shape[0]
    return folds


@dataclass(frozen=True)
class SuperLearner:
    library: tuple
    weights: np.ndarray
    folds: int
    members: tuple
    oof_predictions: np.ndarray
    warnings: tuple = ()

    def member_predictions(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        cols = [np.zeros(X.shape[0]) if m is None else np.asarray(m.predict(X), dtype=float) for m in self.members]
        return np.column_stack(cols)

    def predict(self, features):
        return self.member_predictions(features) @ self.weights

    def oof_risk(self, target) -> np.ndarray:
        """Out-of-fold squared-error risk of each member, then of the ensemble."""
        y = np.asarray(target, dtype=float).ravel()
        members = np.mean((self.oof_predictions - y[:, None]) ** 2, axis=0)
        ens = np.mean((self.oof_predictions @ self.weights - y) ** 2)
        return np.append(members, ens)


def fit_super_learner(library: Sequence[Learner], features, target, k: int = 10, seed=None) -> SuperLearner:
    """Stack ``library`` with simplex weights fitted to k-fold out-of-fold predictions."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=float).ravel()
    library = tuple(library)
    if k < 2:
        raise ValueError("k must be >= 2")
    if X.shape[0] < k:
        raise ValueError(f"need n >= k (n={X.shape[0]}, k={k})")
    if not library:
        raise ValueError("empty library")
    rng = make_rng(seed)
    folds = stratified_folds(y, k, rng)
    member_seeds = rng.integers(0, 2**31 - 1, size=(len(library), k + 1))
    oof = np.zeros((X.shape[0], len(library)))
    failed = set()
    notes = []
    for j, learner in enumerate(library):
        for f in range(k):
            test = folds == f
            try:
                model = learner.fit(X[~test], y[~test], seed=int(member_seeds[j, f]))
                pred = np.asarray(model.predict(X[test]), dtype=float)
                if not np.all(np.isfinite(pred)):
                    raise ValueError("non-finite predictions")
                oof[test, j] = pred
            except Exception as exc:  # noqa: BLE001 - any member failure is tolerated
                failed.add(j)
                notes.append(f"{learner.name} failed on fold {f}: {exc}")
                break
    ok = [j for j in range(len(library)) if j not in failed]
    if not ok:
        raise RuntimeError("every Super Learner member failed: " + "; ".join(notes))
    weights = np.zeros(len(library))
    weights[ok] = nnls_simplex(oof[:, ok], y)
    members = []
    for j, learner in enumerate(library):
        if j in failed:
            members.append(None)
            continue
        try:
            members.append(learner.fit(X, y, seed=int(member_seeds[j, k])))
        except Exception as exc:  # noqa: BLE001
            notes.append(f"{learner.name} failed on full data: {exc}")
            members.append(None)
            weights[j] = 0.0
    if weights.sum() <= 0:
        raise RuntimeError("every Super Learner member failed: " + "; ".join(notes))
    weights = weights / weights.sum()
    for note in notes:
        warnings.warn(note, SuperLearnerWarning, stacklevel=2)
    return SuperLearner(library, weights, k, tuple(members), oof, tuple(notes))


# --------------------------------------------------------------------------
# nuisance-model adapters


@dataclass(frozen=True)
class OutcomeRegression:
    """Outcome model ``m(t, x)`` from any fitted predictor over ``[t, x]``."""

    model: object

    def predict(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return np.asarray(self.model.predict(np.column_stack([t, x])), dtype=float)


@dataclass(frozen=True)
class PropensityRegression:
    """Propensity model ``pi(x) = P(T=1|x)`` from any fitted predictor over ``x``."""

    model: object

    def predict(self, x):
        return np.asarray(self.model.predict(np.asarray(x, dtype=float)), dtype=float)


def fit_outcome_learner(learner, dataset, seed=None, super_learner: Optional[dict] = None):
    """Fit ``learner`` (a :class:`Learner` or ``"SL"``) as an outcome model."""
    features = np.column_stack([dataset.treatment, dataset.covariates])
    if learner == "SL":
        binary = bool(np.all((dataset.outcome == 0) | (dataset.outcome == 1)) or np.all((dataset.outcome >= 0) & (dataset.outcome <= 1)))
        opts = super_learner or {}
        model = fit_super_learner(default_library(binary), features, dataset.outcome, k=opts.get("folds", 10), seed=seed)
    else:
        model = learner.fit(features, dataset.outcome, seed=seed)
    return OutcomeRegression(model)


def fit_propensity_learner(learner, dataset, seed=None, super_learner: Optional[dict] = None):
    if learner == "SL":
        opts = super_learner or {}
        model = fit_super_learner(default_library(True), dataset.covariates, dataset.treatment, k=opts.get("folds", 10), seed=seed)
    else:
        model = learner.fit(dataset.covariates, dataset.treatment, seed=seed)
    return PropensityRegression(model)
