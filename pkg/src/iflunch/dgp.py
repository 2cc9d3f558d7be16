"""Synthetic LF datasets with known ground truth, plus CSV ingestion/export.

The LF generating process models one-year mortality risk for patients given
monotherapy (``t=1``) or dual therapy (``t=0``).  Covariates are discrete, so
population quantities can be computed exactly by enumerating the support.
"""
from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, None]


class LfVariant(str, enum.Enum):
    V1 = "v1"
    V2 = "v2"

    @classmethod
    def parse(cls, value) -> "LfVariant":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class Dataset:
    """Observed data ``(x, t, y)`` with optional potential-outcome ground truth.

    Arrays are made read-only on construction so a dataset can be shared
    between workers without copying.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    potential_y1: Optional[np.ndarray] = None
    potential_y0: Optional[np.ndarray] = None
    true_ate: Optional[float] = None
    seed: Optional[int] = None
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if x.shape[0] == 1 and np.ndim(self.covariates) == 1:
            x = x.T
        t = np.asarray(self.treatment, dtype=float).ravel()
        y = np.asarray(self.outcome, dtype=float).ravel()
        n = x.shape[0]
        if t.shape[0] != n or y.shape[0] != n:
            raise ValueError(f"inconsistent row counts: x={n}, t={t.shape[0]}, y={y.shape[0]}")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("treatment value outside {0,1}")
        arrays = {"covariates": x, "treatment": t, "outcome": y}
        for name in ("potential_y1", "potential_y0"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape[0] != n:
                    raise ValueError(f"{name} has {v.shape[0]} rows, expected {n}")
                arrays[name] = v
        for name, arr in arrays.items():
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names", tuple(f"x{j + 1}" for j in range(x.shape[1])))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def m(self) -> int:
        return self.covariates.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            covariates=self.covariates[index],
            treatment=self.treatment[index],
            outcome=self.outcome[index],
            potential_y1=None if self.potential_y1 is None else self.potential_y1[index],
            potential_y0=None if self.potential_y0 is None else self.potential_y0[index],
            true_ate=self.true_ate,
            seed=self.seed,
            covariate_names=self.covariate_names,
        )


def make_rng(seed: SeedLike) -> np.random.Generator:
    """PCG64 generator; the single entry point for randomness in the package."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def child_seed(master: int, *index: int) -> np.random.SeedSequence:
    """Seed for simulation ``index`` (and optional sub-stream) of a study.

    Uses the spawn key directly so the stream depends only on the index, never
    on how many siblings were spawned before it.
    """
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(i) for i in index))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lf_propensity(x: np.ndarray) -> np.ndarray:
    """True ``P(T=1 | x)`` of the LF process (same for both variants)."""
    x = np.atleast_2d(x)
    x2, x3, x4 = x[:, 1], x[:, 2], x[:, 3]
    return _sigmoid(-5.0 + 0.05 * x2 + 0.25 * x3 + 0.6 * x4 + 0.4 * x2 * x4)


def lf_potential_outcomes(x: np.ndarray, variant: LfVariant = LfVariant.V1):
    """Return ``(y1, y0)`` risk probabilities for covariate rows ``x``."""
    variant = LfVariant.parse(variant)
    x = np.atleast_2d(x)
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    lin = -1.0 - 0.1 * x1 + 0.35 * x2 + 0.25 * x3 + 0.2 * x4 + 0.15 * x2 * x4
    if variant is LfVariant.V2:
        y1 = _sigmoid(np.exp(lin + 1.0))
    else:
        y1 = _sigmoid(lin + 1.0)
    y0 = _sigmoid(lin)
    return y1, y0


def _rounded_uniform_pmf(upper: int) -> np.ndarray:
    # int[U(0, b)] puts half mass on the endpoints
    pmf = np.full(upper + 1, 1.0 / upper)
    pmf[0] = pmf[-1] = 0.5 / upper
    return pmf


def lf_support():
    """All covariate cells of the LF process with their exact probabilities."""
    marginals = [
        (np.array([0.0, 1.0]), np.array([0.5, 0.5])),
        (np.array([0.0, 1.0]), np.array([0.35, 0.65])),
        (np.arange(5.0), _rounded_uniform_pmf(4)),
        (np.arange(6.0), _rounded_uniform_pmf(5)),
    ]
    cells, probs = [], []
    for combo in itertools.product(*(range(len(v)) for v, _ in marginals)):
        cells.append([marginals[j][0][k] for j, k in enumerate(combo)])
        probs.append(np.prod([marginals[j][1][k] for j, k in enumerate(combo)]))
    return np.array(cells), np.array(probs)


def true_ate_exact(variant: LfVariant = LfVariant.V1) -> float:
    cells, probs = lf_support()
    y1, y0 = lf_potential_outcomes(cells, variant)
    return float(np.sum(probs * (y1 - y0)))


def sample_lf_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    x1 = rng.binomial(1, 0.5, n)
    x2 = rng.binomial(1, 0.65, n)
    x3 = np.rint(rng.uniform(0.0, 4.0, n))
    x4 = np.rint(rng.uniform(0.0, 5.0, n))
    return np.column_stack([x1, x2, x3, x4]).astype(float)


def generate_lf(variant: LfVariant, n: int, seed: SeedLike = None, outcome_mode: str = "bernoulli") -> Dataset:
    """Draw ``n`` rows from LF v1/v2.

    ``outcome_mode="bernoulli"`` samples binary outcomes from the selected
    potential-outcome risk; ``"expectation"`` returns the risk itself.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if outcome_mode not in ("bernoulli", "expectation"):
        raise ValueError(f"unknown outcome_mode {outcome_mode!r}")
    variant = LfVariant.parse(variant)
    rng = make_rng(seed)
    x = sample_lf_covariates(rng, n)
    t = rng.binomial(1, lf_propensity(x)).astype(float)
    y1, y0 = lf_potential_outcomes(x, variant)
    risk = np.where(t == 1, y1, y0)
    y = rng.binomial(1, risk).astype(float) if outcome_mode == "bernoulli" else risk
    return Dataset(
        covariates=x,
        treatment=t,
        outcome=y,
        potential_y1=y1,
        potential_y0=y0,
        true_ate=true_ate_exact(variant),
        seed=seed if isinstance(seed, int) else None,
    )


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"non-numeric cell {text!r} at {where}") from None


def load_csv(path: Union[str, Path], schema: Optional[Mapping] = None) -> Dataset:
    """Read a header-row CSV into a :class:`Dataset`.

    ``schema`` maps roles to column names: ``treatment`` (default ``"t"``),
    ``outcome`` (default ``"y"``), ``covariates`` (default: every other
    column), and optionally ``mu0``/``mu1`` for noiseless potential outcomes
    (columns literally named ``mu0`` and ``mu1`` are picked up by default).
    """
    schema = dict(schema or {})
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    t_col = schema.get("treatment", "t")
    y_col = schema.get("outcome", "y")
    mu0_col, mu1_col = schema.get("mu0"), schema.get("mu1")
    if "mu0" not in schema and "mu1" not in schema and {"mu0", "mu1"} <= set(header):
        mu0_col, mu1_col = "mu0", "mu1"
    reserved = {t_col, y_col, mu0_col, mu1_col}
    x_cols = list(schema.get("covariates") or [h for h in header if h not in reserved])
    for col in [t_col, y_col, *x_cols] + [c for c in (mu0_col, mu1_col) if c]:
        if col not in header:
            raise ValueError(f"{path}: column {col!r} not in header {header}")
    if not x_cols:
        raise ValueError(f"{path}: at least one covariate column required")

    idx = {h: j for j, h in enumerate(header)}
    table = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            table[i, j] = _parse_float(cell.strip(), f"{path}:{i + 2}:{header[j]}")

    t = table[:, idx[t_col]]
    bad = np.flatnonzero((t != 0) & (t != 1))
    if bad.size:
        raise ValueError(f"treatment value outside {{0,1}} at row {bad[0] + 2}")
    mu0 = table[:, idx[mu0_col]] if mu0_col else None
    mu1 = table[:, idx[mu1_col]] if mu1_col else None
    true_ate = float(np.mean(mu1 - mu0)) if mu0 is not None and mu1 is not None else None
    return Dataset(
        covariates=table[:, [idx[c] for c in x_cols]],
        treatment=t,
        outcome=table[:, idx[y_col]],
        potential_y1=mu1,
        potential_y0=mu0,
        true_ate=true_ate,
        covariate_names=tuple(x_cols),
    )


def save_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write ``x1..xm,t,y[,mu0,mu1]`` with full float precision."""
    path = Path(path)
    header = [f"x{j + 1}" for j in range(dataset.m)] + ["t", "y"]
    cols: Sequence[np.ndarray] = [*dataset.covariates.T, dataset.treatment, dataset.outcome]
    if dataset.potential_y0 is not None and dataset.potential_y1 is not None:
        header += ["mu0", "mu1"]
        cols = [*cols, dataset.potential_y0, dataset.potential_y1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
