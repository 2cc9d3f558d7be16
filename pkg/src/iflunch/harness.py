"""Simulation study runner: algorithms x debiasing strategies over repeated datasets.

Each simulation index gets its own child seed, and every model fitted inside
a simulation draws its seed from ``(master, index, component)``.  Results are
therefore independent of which worker ran which simulation, and of which
other methods were requested.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
from threadpoolctl import threadpool_limits

from .dgp import Dataset, LfVariant, child_seed, generate_lf, lf_potential_outcomes, lf_propensity, load_csv
from .estimators import (
    METHOD_LABELS,
    FunctionOutcome,
    FunctionPropensity,
    NuisancePair,
    base_estimate,
    one_step_ate,
    submodel_update,
)
from .learners import Learner, LearnerKind, fit_outcome_learner, fit_propensity_learner
from .neuralnet import (
    SearchSpace,
    Variant,
    hyperparameter_search,
    train_outcome_net,
    train_treatment_net,
)
from .stats import kde_mode, probability_plot_points, shapiro_wilk

CLASSICAL = ("LR", "SL", "Oracle")
NEURAL = ("CFR", "MN-Inc", "MN-Inc+LM", "MN-Casc", "MN-Casc+LM")
ALGORITHMS = CLASSICAL + NEURAL
TREG_STRATEGIES = ("Treg", "Treg+Submod", "Treg w/ SL", "Treg+Submod w/ SL")


class StudyAborted(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class StudyConfig:
    """Everything a study needs; serialisable to and from the JSON config file.

    ``dataset`` is ``{"kind": "lf", "variant": "v1", "n": 5000}`` or
    ``{"kind": "csv", "path": "data_{i}.csv", "schema": {...}}``; a ``{i}``
    placeholder in the path selects one file per simulation index.
    ``methods`` lists ``(algorithm, strategy)`` pairs.
    """

    dataset: dict
    methods: list
    simulations: int = 100
    seed: int = 0
    inference_mode: str = "standard"
    output_dir: str = "study_out"
    search_trials: int = 15
    search_space: dict = field(default_factory=dict)
    super_learner_folds: int = 10
    submodel_bounds: Optional[list] = None
    workers: int = 1
    svg: bool = True

    def __post_init__(self):
        self.methods = [tuple(m) for m in self.methods]
        self.validate()

    def validate(self):
        if int(self.simulations) < 1:
            raise ValueError("simulations must be >= 1")
        if self.inference_mode not in ("standard", "paper-literal"):
            raise ValueError(f"unknown inference mode {self.inference_mode!r}")
        if self.search_trials < 1:
            raise ValueError("search_trials must be >= 1")
        kind = self.dataset.get("kind", "lf")
        if kind not in ("lf", "csv"):
            raise ValueError(f"unknown dataset kind {kind!r}")
        if not self.methods:
            raise ValueError("no methods requested")
        for pair in self.methods:
            if len(pair) != 2:
                raise ValueError(f"method entries are (algorithm, strategy) pairs, got {pair!r}")
            algo, strategy = pair
            if algo not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
            if strategy not in METHOD_LABELS:
                raise ValueError(f"unknown strategy {strategy!r}; choose from {METHOD_LABELS}")
            if strategy in TREG_STRATEGIES and algo not in NEURAL:
                raise ValueError(f"{strategy} needs a neural network learner, not {algo}")
            if algo == "Oracle" and kind != "lf":
                raise ValueError("the Oracle algorithm needs a synthetic LF dataset")
        SearchSpace.from_dict(self.search_space)

    @property
    def space(self) -> SearchSpace:
        return SearchSpace.from_dict(self.search_space)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = [list(m) for m in self.methods]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dataset_label(self) -> str:
        d = self.dataset
        if d.get("kind", "lf") == "lf":
            return f"LF ({LfVariant.parse(d.get('variant', 'v1')).value})"
        return d.get("label") or Path(d["path"]).stem.replace("{i}", "")

    def make_dataset(self, index: int) -> Dataset:
        d = self.dataset
        if d.get("kind", "lf") == "lf":
            seed = child_seed(self.seed, index, _component("dataset"))
            return generate_lf(d.get("variant", "v1"), int(d.get("n", 5000)), seed, d.get("outcome_mode", "bernoulli"))
        path = str(d["path"]).replace("{i}", str(index + int(d.get("first_index", 0))))
        return load_csv(path, d.get("schema"))


def _component(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


# --------------------------------------------------------------------------
# one simulation


class _Nuisances:
    """Lazily fitted models for one simulation, shared across strategies."""

    def __init__(self, config: StudyConfig, index: int, dataset: Dataset):
        self.config = config
        self.index = index
        self.data = dataset
        self._cache = {}

    def seed(self, *names) -> np.random.SeedSequence:
        return child_seed(self.config.seed, self.index, *(_component(n) for n in names))

    def _int_seed(self, *names) -> int:
        return int(self.seed(*names).generate_state(1)[0])

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def _sl_opts(self):
        return {"folds": self.config.super_learner_folds}

    # --- neural pieces

    def _outcome_trainer(self, algo, clever=None):
        if algo == "CFR":
            return lambda d, c: train_outcome_net(d, c, "cfr", clever=clever)
        variant = Variant.CASC if "Casc" in algo else Variant.INC
        mask = algo.endswith("+LM")
        return lambda d, c: train_outcome_net(d, c, "multinet", variant, mask, clever=clever)

    def _treatment_trainer(self, algo):
        if algo == "CFR":
            return lambda d, c: train_treatment_net(d, c, "cfr-like")
        variant = Variant.CASC if "Casc" in algo else Variant.INC
        return lambda d, c: train_treatment_net(d, c, "multinet-like", variant)

    def nn_config(self, algo, role):
        def build():
            trainer = self._outcome_trainer(algo) if role == "outcome" else self._treatment_trainer(algo)
            result = hyperparameter_search(self.data, trainer, self.config.space, self.config.search_trials,
                                           self.seed(algo, role, "search"), outcome=role == "outcome")
            return result.best
        return self._memo(("config", algo, role), build)

    # --- nuisance models

    def outcome(self, algo):
        def build():
            if algo == "Oracle":
                variant = self.config.dataset.get("variant", "v1")
                return FunctionOutcome(lambda x, t: lf_potential_outcomes(x, variant)[0 if int(t) == 1 else 1])
            if algo == "LR":
                binary = bool(np.all((self.data.outcome >= 0) & (self.data.outcome <= 1)))
                kind = LearnerKind.LOGISTIC if binary else LearnerKind.LINEAR
                return fit_outcome_learner(Learner(kind), self.data, self._int_seed(algo, "outcome"))
            if algo == "SL":
                return fit_outcome_learner("SL", self.data, self._int_seed(algo, "outcome"), self._sl_opts())
            cfg = replace(self.nn_config(algo, "outcome"), seed=self._int_seed(algo, "outcome", "final"))
            return self._outcome_trainer(algo)(self.data, cfg)
        return self._memo(("outcome", algo), build)

    def propensity(self, algo):
        def build():
            if algo == "Oracle":
                return FunctionPropensity(lf_propensity)
            if algo == "LR":
                return fit_propensity_learner(Learner(LearnerKind.LOGISTIC), self.data, self._int_seed(algo, "propensity"))
            if algo == "SL":
                return self.sl_propensity()
            cfg = replace(self.nn_config(algo, "treatment"), seed=self._int_seed(algo, "treatment", "final"))
            return self._treatment_trainer(algo)(self.data, cfg)
        return self._memo(("propensity", algo), build)

    def sl_propensity(self):
        return self._memo(("sl-propensity",), lambda: fit_propensity_learner(
            "SL", self.data, self._int_seed("SL", "propensity"), self._sl_opts()))

    def treg_outcome(self, algo, use_sl: bool):
        def build():
            pair = NuisancePair(None, self.sl_propensity() if use_sl else self.propensity(algo))
            x, t = self.data.covariates, self.data.treatment
            p = pair.pi(x)
            clever = np.where(t == 1, 1.0 / p, 1.0 / (1.0 - p))
            tag = "treg-sl" if use_sl else "treg"
            cfg = replace(self.nn_config(algo, "outcome"), seed=self._int_seed(algo, tag, "final"))
            return self._outcome_trainer(algo, clever)(self.data, cfg)
        return self._memo(("treg", algo, use_sl), build)

    # --- strategies

    def estimate(self, algo: str, strategy: str):
        mode = self.config.inference_mode
        bounds = tuple(self.config.submodel_bounds) if self.config.submodel_bounds else None
        use_sl = strategy.endswith("w/ SL")
        if strategy == "Base":
            return base_estimate(self.data, self.outcome(algo), "Base", mode)
        if strategy.startswith("Treg"):
            m = self.treg_outcome(algo, use_sl)
            if "+Submod" not in strategy:
                return base_estimate(self.data, m, strategy, mode)
        else:
            m = self.outcome(algo)
        pair = NuisancePair(m, self.sl_propensity() if use_sl else self.propensity(algo))
        if strategy.startswith("Onestep"):
            return one_step_ate(self.data, pair, strategy, mode)
        return submodel_update(self.data, pair, strategy, mode, bounds)[1]


def run_simulation(config: StudyConfig, index: int) -> dict:
    """Estimates for every requested method on simulation ``index``.

    Returns ``{"index", "true_ate", "estimates": {method_key: value or None},
    "errors": {method_key: message}}``.  Failures never propagate.
    """
    with threadpool_limits(limits=1):
        out = {"index": index, "true_ate": None, "estimates": {}, "errors": {}}
        try:
            data = config.make_dataset(index)
        except Exception as exc:  # noqa: BLE001 - recorded as a failure of every method
            for algo, strategy in config.methods:
                out["estimates"][method_key(algo, strategy)] = None
                out["errors"][method_key(algo, strategy)] = f"dataset: {exc}"
            return out
        out["true_ate"] = data.true_ate
        nuis = _Nuisances(config, index, data)
        for algo, strategy in config.methods:
            key = method_key(algo, strategy)
            try:
                value = float(nuis.estimate(algo, strategy).psi_hat)
                if not math.isfinite(value):
                    raise FloatingPointError("non-finite estimate")
                out["estimates"][key] = value
            except Exception as exc:  # noqa: BLE001 - skip-and-count policy
                out["estimates"][key] = None
                out["errors"][key] = f"{type(exc).__name__}: {exc}"
        return out


def _run_simulation_packed(args):
    config_dict, index = args
    return run_simulation(StudyConfig.from_dict(config_dict), index)


def method_key(algo: str, strategy: str) -> str:
    return f"{algo} | {strategy}"


def worker_count(config: StudyConfig) -> int:
    n = max(1, int(config.workers))
    cap = os.environ.get("IFLUNCH_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"IFLUNCH_THREADS must be an integer, got {cap!r}") from None
    return min(n, int(config.simulations))


# --------------------------------------------------------------------------
# aggregation


@dataclass
class StudyRow:
    dataset: str
    method: str
    strategy: str
    p_sw: float
    mse: float
    se: float
    mean_est: float
    mode_est: float
    n_failures: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StudyResult:
    rows: list
    estimates: dict
    true_ate: Optional[float]
    failures: dict = field(default_factory=dict)


def aggregate(dataset: str, algo: str, strategy: str, estimates: Sequence[float], true_ate,
              n_failures: int = 0) -> StudyRow:
    """Reduce one method's estimates to MSE, s.e., Shapiro-Wilk p, mean and mode.

    ``true_ate`` is a scalar, one value per estimate, or ``None`` (MSE unknown).
    """
    est = np.asarray(estimates, dtype=float)
    nan = float("nan")
    if est.size == 0:
        return StudyRow(dataset, algo, strategy, nan, nan, nan, nan, nan, n_failures, True)
    mse = nan if true_ate is None else float(np.mean((est - np.asarray(true_ate, dtype=float)) ** 2))
    mean = float(est.mean())
    spread = float(est.max() - est.min())
    degenerate = est.size < 2 or spread == 0.0
    se = 0.0 if degenerate else float(np.std(est, ddof=1) / math.sqrt(est.size))
    p_sw = nan
    if est.size >= 3 and not degenerate:
        try:
            p_sw = shapiro_wilk(est).p_value
        except ValueError:
            p_sw = nan
    mode = mean if degenerate else kde_mode(est)
    return StudyRow(dataset, algo, strategy, p_sw, mse, se, mean, mode, int(n_failures), degenerate)


def run_study(config: StudyConfig, write: bool = True) -> StudyResult:
    """Run every simulation, aggregate per method and (optionally) write outputs."""
    sims = int(config.simulations)
    workers = worker_count(config)
    if workers > 1:
        payload = config.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_simulation_packed, [(payload, i) for i in range(sims)]))
    else:
        results = [run_simulation(config, i) for i in range(sims)]
    results.sort(key=lambda r: r["index"])

    truths = [r["true_ate"] for r in results if r["true_ate"] is not None]
    true_ate = float(np.mean(truths)) if truths else None
    label = config.dataset_label()
    rows, estimates, failures = [], {}, {}
    for algo, strategy in config.methods:
        key = method_key(algo, strategy)
        ok, truth, errs = [], [], []
        for r in results:
            v = r["estimates"].get(key)
            if v is None:
                errs.append((r["index"], r["errors"].get(key, "unknown failure")))
            else:
                ok.append(v)
                truth.append(r["true_ate"])
        if len(errs) * 2 > sims:
            detail = "; ".join(f"sim {i}: {m}" for i, m in errs[:5])
            raise StudyAborted(f"{key}: {len(errs)} of {sims} simulations failed ({detail})")
        est = np.array(ok)
        known = bool(truth) and all(t is not None for t in truth)
        rows.append(aggregate(label, algo, strategy, est, np.array(truth) if known else None, len(errs)))
        estimates[key] = est
        failures[key] = errs
    result = StudyResult(rows, estimates, true_ate, failures)
    if write:
        write_outputs(result, config)
    return result


# --------------------------------------------------------------------------
# outputs

ROW_FIELDS = [f.name for f in fields(StudyRow)]


def _fmt4(v: float) -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"


def _strategy_order(rows) -> list:
    present = {r.strategy for r in rows}
    return [s for s in METHOD_LABELS if s in present]


def table_lines(rows: Sequence[StudyRow]) -> list:
    """Header plus one line per (dataset, algorithm); triples per strategy."""
    strategies = _strategy_order(rows)
    header = ["dataset", "algorithm"]
    for s in strategies:
        header += [f"{s} p", f"{s} MSE", f"{s} s.e."]
    groups = {}
    for r in rows:
        groups.setdefault((r.dataset, r.method), {})[r.strategy] = r
    lines = [header]
    for (dataset, algo), by_strategy in groups.items():
        line = [dataset, algo]
        for s in strategies:
            r = by_strategy.get(s)
            line += ["-", "-", "-"] if r is None else [_fmt4(r.p_sw), _fmt4(r.mse), _fmt4(r.se)]
        lines.append(line)
    return lines


def emit_table(rows: Sequence[StudyRow], out_dir) -> dict:
    """Write ``table.csv`` (4 decimals), ``table.txt`` (aligned) and ``rows.csv`` (full precision)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = table_lines(rows)
    paths = {"csv": out / "table.csv", "txt": out / "table.txt", "rows": out / "rows.csv"}
    with paths["csv"].open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(lines)
    widths = [max(len(line[j]) for line in lines) for j in range(len(lines[0]))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines) + "\n"
    paths["txt"].write_text(text, encoding="utf-8")
    with paths["rows"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_cell(getattr(r, k)) for k in ROW_FIELDS])
    return paths


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_rows(path) -> list:
    """Inverse of the ``rows.csv`` written by :func:`emit_table`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = []
        for rec in reader:
            out.append(StudyRow(
                dataset=rec["dataset"], method=rec["method"], strategy=rec["strategy"],
                p_sw=float(rec["p_sw"]), mse=float(rec["mse"]), se=float(rec["se"]),
                mean_est=float(rec["mean_est"]), mode_est=float(rec["mode_est"]),
                n_failures=int(rec["n_failures"]), degenerate=rec["degenerate"] == "True",
            ))
    return out


def parse_table(path) -> list:
    """Rows recovered from ``table.csv``: ``(dataset, algorithm, strategy, p, mse, se)`` tuples."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(csv.reader(fh))
    if not lines:
        return []
    header = lines[0]
    strategies = [header[j][: -len(" p")] for j in range(2, len(header), 3)]
    out = []
    for line in lines[1:]:
        for k, s in enumerate(strategies):
            cells = line[2 + 3 * k: 5 + 3 * k]
            if cells == ["-", "-", "-"]:
                continue
            vals = tuple(float("nan") if c == "-" else float(c) for c in cells)
            out.append((line[0], line[1], s) + vals)
    return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_")


def probability_plot_data(estimates, true_ate: Optional[float]) -> dict:
    est = np.asarray(estimates, dtype=float)
    if est.size < 3:
        raise ValueError("need at least 3 estimates for a probability plot")
    pts = probability_plot_points(est)
    spread = float(est.max() - est.min())
    mode = float(est.mean()) if spread == 0.0 else kde_mode(est)
    return {"points": pts, "mean": float(est.mean()), "mode": mode, "true_ate": true_ate}


def emit_probability_plot(estimates, true_ate: Optional[float], out_stem, svg: bool = True) -> dict:
    """Write ``<stem>.csv`` (plot points plus annotations) and optionally ``<stem>.svg``."""
    data = probability_plot_data(estimates, true_ate)
    stem = Path(out_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = {"csv": stem.with_suffix(".csv")}
    with paths["csv"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "theoretical", "value"])
        for q, v in data["points"]:
            w.writerow(["point", repr(float(q)), repr(float(v))])
        w.writerow(["mean", "", repr(data["mean"])])
        w.writerow(["mode", "", repr(data["mode"])])
        w.writerow(["true_ate", "", "" if true_ate is None else repr(float(true_ate))])
    if svg:
        paths["svg"] = stem.with_suffix(".svg")
        paths["svg"].write_text(render_svg(data), encoding="utf-8")
    return paths


def render_svg(data: dict, width: int = 360, height: int = 300, title: str = "") -> str:
    """Static probability plot: points, reference line, mean/mode/true-ATE lines."""
    pts = data["points"]
    q, v = pts[:, 0], pts[:, 1]
    extra = [data["mean"], data["mode"]] + ([data["true_ate"]] if data["true_ate"] is not None else [])
    lo_v, hi_v = min(v.min(), *extra), max(v.max(), *extra)
    pad = 0.05 * (hi_v - lo_v or 1.0)
    lo_v, hi_v = lo_v - pad, hi_v + pad
    lo_q, hi_q = q.min() - 0.2, q.max() + 0.2
    m = 40

    def sx(a):
        return m + (a - lo_q) / (hi_q - lo_q) * (width - 2 * m)

    def sy(b):
        return height - m - (b - lo_v) / (hi_v - lo_v) * (height - 2 * m)

    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    buf = io.StringIO()
    buf.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
              f'viewBox="0 0 {width} {height}">\n')
    buf.write(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n')
    if title:
        buf.write(f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="12">{escape(title)}</text>\n')
    buf.write(f'<line x1="{sx(lo_q):.2f}" y1="{sy(data["mean"] + sd * lo_q):.2f}" '
              f'x2="{sx(hi_q):.2f}" y2="{sy(data["mean"] + sd * hi_q):.2f}" stroke="red" stroke-width="1"/>\n')
    for value, colour, dash in ((data["mean"], "green", ""), (data["mode"], "blue", ""),
                                (data["true_ate"], "black", ' stroke-dasharray="4 3"')):
        if value is None:
            continue
        buf.write(f'<line x1="{m}" y1="{sy(value):.2f}" x2="{width - m}" y2="{sy(value):.2f}" '
                  f'stroke="{colour}" stroke-width="1"{dash}/>\n')
    for a, b in zip(q, v):
        buf.write(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2" fill="none" stroke="#333"/>\n')
    buf.write(f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="10">'
              'theoretical quantile</text>\n')
    buf.write(f'<text x="12" y="{height / 2:.1f}" font-size="10" transform="rotate(-90 12 {height / 2:.1f})" '
              'text-anchor="middle">estimate</text>\n')
    buf.write("</svg>\n")
    return buf.getvalue()


def write_outputs(result: StudyResult, config: StudyConfig) -> dict:
    out = Path(config.output_dir)
    paths = emit_table(result.rows, out)
    for row in result.rows:
        key = method_key(row.method, row.strategy)
        slug = _slug(f"{row.method}_{row.strategy}")
        est = result.estimates[key]
        if est.size >= 3:
            emit_probability_plot(est, result.true_ate, out / f"probplot_{slug}", svg=config.svg)
        report = {
            "row": row.to_dict(),
            "true_ate": result.true_ate,
            "estimates": [float(v) for v in est],
            "failures": [{"simulation": i, "error": msg} for i, msg in result.failures[key]],
            "config": config.to_dict(),
        }
        (out / f"report_{slug}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    return paths
