import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iflunch.dgp import generate_lf, save_csv
from iflunch.estimators import FunctionPropensity, plugin_ate
from iflunch.harness import (
    StudyAborted,
    StudyConfig,
    StudyRow,
    _Nuisances,
    aggregate,
    emit_probability_plot,
    emit_table,
    method_key,
    parse_table,
    read_rows,
    run_simulation,
    run_study,
    worker_count,
)


def _config(**kw):
    base = {"dataset": {"kind": "lf", "variant": "v1", "n": 400}, "methods": [("LR", "Base")], "simulations": 3}
    base.update(kw)
    return StudyConfig(**base)


def test_aggregate_known_values():
    row = aggregate("LF (v1)", "LR", "Base", [0.1, 0.2, 0.3, 0.4], 0.25)
    assert row.mse == pytest.approx(np.mean(np.square([-0.15, -0.05, 0.05, 0.15])))
    assert row.se == pytest.approx(np.std([0.1, 0.2, 0.3, 0.4], ddof=1) / 2)
    assert row.mean_est == pytest.approx(0.25)
    assert 0 < row.p_sw <= 1 and not row.degenerate


def test_aggregate_degenerate_inputs():
    one = aggregate("d", "LR", "Base", [0.3], 0.2)
    assert one.degenerate and one.se == 0.0 and math.isnan(one.p_sw)
    assert one.mse == pytest.approx(0.01) and one.mode_est == 0.3
    flat = aggregate("d", "LR", "Base", [0.3] * 5, None)
    assert flat.degenerate and math.isnan(flat.mse) and flat.mode_est == 0.3
    empty = aggregate("d", "LR", "Base", [], 0.2, n_failures=4)
    assert empty.degenerate and empty.n_failures == 4 and math.isnan(empty.mean_est)


def test_aggregate_per_simulation_truth():
    row = aggregate("d", "LR", "Base", [1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
    assert row.mse == pytest.approx(1 / 3)


def test_table_layout(tmp_path):
    rows = [
        aggregate("LF (v1)", "LR", "Base", [0.1, 0.2, 0.35], 0.2),
        aggregate("LF (v1)", "LR", "Onestep", [0.18, 0.2, 0.23], 0.2),
        aggregate("LF (v1)", "SL", "Base", [0.15, 0.2, 0.22], 0.2),
    ]
    paths = emit_table(rows, tmp_path)
    lines = paths["csv"].read_text().splitlines()
    assert lines[0] == "dataset,algorithm,Base p,Base MSE,Base s.e.,Onestep p,Onestep MSE,Onestep s.e."
    assert lines[2].endswith(",-,-,-")
    parsed = parse_table(paths["csv"])
    assert [p[:3] for p in parsed] == [("LF (v1)", "LR", "Base"), ("LF (v1)", "LR", "Onestep"),
                                       ("LF (v1)", "SL", "Base")]
    for p, r in zip(parsed, rows):
        assert p[4] == pytest.approx(r.mse, abs=5e-5)
        assert p[5] == pytest.approx(r.se, abs=5e-5)
    assert "Onestep MSE" in paths["txt"].read_text()
    assert read_rows(paths["rows"]) == rows


def test_empty_table(tmp_path):
    paths = emit_table([], tmp_path)
    assert paths["csv"].read_text().strip() == "dataset,algorithm"
    assert parse_table(paths["csv"]) == []
    assert read_rows(paths["rows"]) == []


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.tuples(finite, finite, finite, finite, finite, st.integers(0, 100), st.booleans()),
                     min_size=1, max_size=5),
       name=st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=12))
def test_rows_csv_round_trip(tmp_path_factory, vals, name):
    rows = [StudyRow(name, "LR", "Base", abs(a) / 1e6, abs(b), abs(c), d, e, k, flag)
            for a, b, c, d, e, k, flag in vals]
    out = tmp_path_factory.mktemp("rows")
    assert read_rows(emit_table(rows, out)["rows"]) == rows


def test_probability_plot_outputs(tmp_path):
    est = np.random.default_rng(0).normal(0.2, 0.01, 30)
    paths = emit_probability_plot(est, 0.2, tmp_path / "plot")
    root = ET.fromstring(paths["svg"].read_text())
    assert root.tag.endswith("svg")
    assert sum(1 for e in root if e.tag.endswith("circle")) == 30
    kinds = [line.split(",")[0] for line in paths["csv"].read_text().splitlines()[1:]]
    assert kinds == ["point"] * 30 + ["mean", "mode", "true_ate"]
    no_svg = emit_probability_plot(est, None, tmp_path / "bare", svg=False)
    assert "svg" not in no_svg
    assert no_svg["csv"].read_text().splitlines()[-1] == "true_ate,,"
    with pytest.raises(ValueError):
        emit_probability_plot([0.1, 0.2], 0.2, tmp_path / "short")


def test_config_validation():
    with pytest.raises(ValueError, match="unknown config keys"):
        StudyConfig.from_dict({"dataset": {"kind": "lf"}, "methods": [["LR", "Base"]], "sims": 3})
    with pytest.raises(ValueError, match="unknown algorithm"):
        _config(methods=[("XGB", "Base")])
    with pytest.raises(ValueError, match="unknown strategy"):
        _config(methods=[("LR", "Magic")])
    with pytest.raises(ValueError, match="needs a neural network"):
        _config(methods=[("LR", "Treg")])
    with pytest.raises(ValueError, match="Oracle"):
        _config(dataset={"kind": "csv", "path": "x.csv"}, methods=[("Oracle", "Base")])
    with pytest.raises(ValueError):
        _config(simulations=0)
    with pytest.raises(ValueError):
        _config(inference_mode="bayesian")
    cfg = _config(methods=[["MN-Inc", "Treg w/ SL"]])
    assert StudyConfig.from_dict(cfg.to_dict()) == cfg


def test_base_never_fits_a_propensity(monkeypatch):
    cfg = _config()
    data = generate_lf("v1", 400, seed=1)
    nuis = _Nuisances(cfg, 0, data)

    def boom(*a, **k):
        raise AssertionError("propensity requested")

    monkeypatch.setattr(nuis, "propensity", boom)
    monkeypatch.setattr(nuis, "sl_propensity", boom)
    rep = nuis.estimate("LR", "Base")
    assert rep.psi_hat == pytest.approx(plugin_ate(nuis.outcome("LR"), data), abs=1e-12)


def test_with_sl_uses_super_learner_propensity(monkeypatch):
    cfg = _config(methods=[("LR", "Onestep w/ SL")])
    data = generate_lf("v1", 400, seed=2)
    a, b = _Nuisances(cfg, 0, data), _Nuisances(cfg, 0, data)
    monkeypatch.setattr(a, "sl_propensity", lambda: FunctionPropensity(lambda x: 0.3))
    monkeypatch.setattr(b, "propensity", lambda algo: FunctionPropensity(lambda x: 0.3))
    monkeypatch.setattr(b, "sl_propensity", lambda: FunctionPropensity(lambda x: 0.6))
    assert a.estimate("LR", "Onestep w/ SL").psi_hat != b.estimate("LR", "Onestep w/ SL").psi_hat
    ref = _Nuisances(cfg, 0, data)
    monkeypatch.setattr(ref, "propensity", lambda algo: FunctionPropensity(lambda x: 0.3))
    assert a.estimate("LR", "Onestep w/ SL").psi_hat == ref.estimate("LR", "Onestep").psi_hat


def test_simulation_is_schedule_independent():
    one = run_simulation(_config(methods=[("LR", "Base")]), 2)
    two = run_simulation(_config(methods=[("SL", "Base"), ("LR", "Base")], super_learner_folds=3), 2)
    assert one["estimates"][method_key("LR", "Base")] == two["estimates"][method_key("LR", "Base")]
    assert one["true_ate"] == two["true_ate"]


def test_missing_files_abort_the_study(tmp_path):
    save_csv(generate_lf("v1", 200, seed=0), tmp_path / "d_0.csv")
    cfg = _config(dataset={"kind": "csv", "path": str(tmp_path / "d_{i}.csv")}, simulations=3,
                  output_dir=str(tmp_path / "out"))
    with pytest.raises(StudyAborted, match="2 of 3"):
        run_study(cfg)


def test_failures_below_half_are_counted(tmp_path):
    for i in (0, 1, 2):
        save_csv(generate_lf("v1", 200, seed=i), tmp_path / f"d_{i}.csv")
    cfg = _config(dataset={"kind": "csv", "path": str(tmp_path / "d_{i}.csv")}, simulations=4,
                  output_dir=str(tmp_path / "out"))
    result = run_study(cfg)
    row = result.rows[0]
    assert row.n_failures == 1 and result.estimates[method_key("LR", "Base")].size == 3
    assert (tmp_path / "out" / "probplot_LR_Base.svg").exists()
    assert (tmp_path / "out" / "report_LR_Base.json").exists()


def test_oracle_recovers_the_truth(tmp_path):
    cfg = _config(dataset={"kind": "lf", "variant": "v1", "n": 5000}, methods=[("Oracle", "Base")],
                  simulations=5, output_dir=str(tmp_path))
    row = run_study(cfg, write=False).rows[0]
    assert row.mse < 1e-4 and row.n_failures == 0


def test_worker_count(monkeypatch):
    monkeypatch.delenv("IFLUNCH_THREADS", raising=False)
    assert worker_count(_config(workers=8, simulations=3)) == 3
    assert worker_count(_config(workers=0)) == 1
    monkeypatch.setenv("IFLUNCH_THREADS", "2")
    assert worker_count(_config(workers=8, simulations=10)) == 2
    monkeypatch.setenv("IFLUNCH_THREADS", "many")
    with pytest.raises(ValueError, match="IFLUNCH_THREADS"):
        worker_count(_config())


def test_parallel_matches_serial(tmp_path, monkeypatch):
    monkeypatch.delenv("IFLUNCH_THREADS", raising=False)
    serial = run_study(_config(simulations=4), write=False)
    parallel = run_study(_config(simulations=4, workers=2), write=False)
    key = method_key("LR", "Base")
    np.testing.assert_array_equal(serial.estimates[key], parallel.estimates[key])
