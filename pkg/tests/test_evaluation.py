import copy
import csv
import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from trafformer import evaluation, models
from trafformer.errors import ContractError, DataError, InputError, NumericError
from trafformer.references import REFERENCE_LABEL, reference_cell
from trafformer.trafformer import TrafFormerConfig

speeds = hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(1.0, 90.0))


# ---------------------------------------------------------------------------
# metrics


def test_metric_examples():
    y, y_hat = [60.0, 50.0], [57.0, 54.0]
    assert evaluation.mae(y, y_hat) == pytest.approx(3.5)
    assert evaluation.rmse(y, y_hat) == pytest.approx(math.sqrt(12.5))
    assert evaluation.mape(y, y_hat) == pytest.approx((3 / 60 + 4 / 50) / 2)


def test_metrics_respect_mask_and_zero_targets():
    y, y_hat = np.array([60.0, 0.0, 50.0]), np.array([57.0, 9.0, 54.0])
    mask = np.array([True, True, False])
    assert evaluation.mae(y, y_hat, mask) == pytest.approx(6.0)
    assert evaluation.mape(y, y_hat, mask) == pytest.approx(3 / 60)
    with pytest.raises(DataError):
        evaluation.mae(y, y_hat, np.zeros(3, bool))
    with pytest.raises(DataError):
        evaluation.mape([0.0], [1.0])
    with pytest.raises(ContractError):
        evaluation.mae([1.0, 2.0], [1.0])


@given(speeds)
def test_perfect_prediction_scores_zero(y):
    assert evaluation.rmse(y, y) == evaluation.mae(y, y) == evaluation.mape(y, y) == 0.0


@given(speeds, st.floats(-5, 5))
def test_rmse_dominates_mae(y, shift):
    noise = np.sin(np.arange(y.size)) * shift
    assert evaluation.rmse(y, y + noise) >= evaluation.mae(y, y + noise) * (1 - 1e-12)


@given(speeds, st.floats(0.1, 10))
def test_scaling_identity(y, c):
    y_hat = y[::-1]
    assert evaluation.mae(c * y, c * y_hat) == pytest.approx(c * evaluation.mae(y, y_hat), rel=1e-9, abs=1e-12)
    assert evaluation.rmse(c * y, c * y_hat) == pytest.approx(c * evaluation.rmse(y, y_hat), rel=1e-9, abs=1e-12)
    assert evaluation.mape(c * y, c * y_hat) == pytest.approx(evaluation.mape(y, y_hat), rel=1e-9, abs=1e-12)


@given(speeds)
def test_constant_predictor_rmse_is_std(y):
    assert evaluation.rmse(y, np.full_like(y, y.mean())) == pytest.approx(y.std(), rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# evaluate


@pytest.fixture(scope="module")
def test_windows(small_split):
    _, norm, windows = small_split
    return windows["test"], norm


def test_evaluate_report_structure(test_windows):
    samples, norm = test_windows
    report = evaluation.evaluate(lambda b: b.y + 1.0, samples, norm, model="shift", dataset_id="d", config_hash="h")
    assert list(report.horizons) == ["6h", "12h", "18h", "24h"]
    for m in report.horizons.values():
        assert m.mae == pytest.approx(1.0) and m.rmse == pytest.approx(1.0)
        assert m.count == 2 * len(samples)
    assert report.n_samples == len(samples)
    back = evaluation.HorizonReport.from_dict(json.loads(report.to_json()))
    assert back == report


def test_evaluate_perfect_and_horizon_columns(test_windows):
    samples, norm = test_windows

    def only_12h_wrong(batch):
        out = batch.y.copy()
        out[:, 5] += 2.0
        return out

    report = evaluation.evaluate(only_12h_wrong, samples, norm)
    assert report.horizons["6h"].rmse == 0.0 and report.horizons["24h"].mae == 0.0
    assert report.horizons["12h"].mae == pytest.approx(2.0)


def test_evaluate_is_order_invariant(test_windows):
    samples, norm = test_windows
    p = models.init_model(TrafFormerConfig(n_sensors=2, d_model=8, n_heads=2, ff_width=8), 0)
    a = evaluation.evaluate(p, samples, norm)
    b = evaluation.evaluate(p, samples[::-1], norm, batch_size=7)
    for h in a.horizons:
        assert b.horizons[h].rmse == pytest.approx(a.horizons[h].rmse, rel=1e-12)
        assert b.horizons[h].mape == pytest.approx(a.horizons[h].mape, rel=1e-12)


def test_evaluate_errors(test_windows):
    samples, norm = test_windows
    with pytest.raises(DataError):
        evaluation.evaluate(lambda b: b.y, [], norm)
    with pytest.raises(NumericError):
        evaluation.evaluate(lambda b: b.y * np.nan, samples, norm)
    with pytest.raises(ContractError):
        evaluation.evaluate(lambda b: b.y[:, :6], samples, norm)
    wrong = models.init_model(TrafFormerConfig(n_sensors=3, d_model=8, n_heads=2, ff_width=8), 0)
    with pytest.raises(ContractError):
        evaluation.evaluate(wrong, samples, norm)


def test_report_rejects_bad_metrics():
    good = evaluation.HorizonMetrics(1.0, 1.0, 0.1, 3)
    with pytest.raises(ContractError):
        evaluation.HorizonReport("m", {"6h": good}, 1)
    bad = dict.fromkeys(evaluation.HORIZONS, good) | {"24h": evaluation.HorizonMetrics(float("nan"), 1.0, 0.1, 3)}
    with pytest.raises(NumericError):
        evaluation.HorizonReport("m", bad, 1)


# ---------------------------------------------------------------------------
# tables


def _report(model="m"):
    cells = {h: evaluation.HorizonMetrics(2.0 + i, 1.0 + i, 0.05, 10) for i, h in enumerate(evaluation.HORIZONS)}
    return evaluation.HorizonReport(model, cells, 10)


def test_text_table():
    text = evaluation.render_table([_report("trafformer:default"), _report("fnn:default")])
    lines = text.splitlines()
    assert "6h" in lines[0] and "24h" in lines[0]
    assert lines[3].startswith("trafformer:default")
    assert "5.00" in lines[3]  # MAPE in percent
    assert REFERENCE_LABEL not in text


def test_table_with_references():
    text = evaluation.render_table([_report()], with_references=True, reference_dataset="METR-LA")
    assert REFERENCE_LABEL in text
    ref = reference_cell("METR-LA", "TrafFormer", "24h")
    assert f"{ref['rmse']:.2f}" in text and "PEMS-BAY" not in text
    doc = json.loads(evaluation.render_table([], fmt="json", with_references=True))
    assert doc["rows"] == [] and doc["references"]["label"] == REFERENCE_LABEL
    assert {r["dataset"] for r in doc["references"]["rows"]} == {"METR-LA", "PEMS-BAY"}


def test_reference_values_verbatim():
    assert reference_cell("METR-LA", "TrafFormer", "24h") == {"rmse": 8.59, "mae": 4.18, "mape_percent": 13.57}
    assert reference_cell("PEMS-BAY", "GAMCN", "24h") == {"rmse": 5.22, "mae": 2.34, "mape_percent": 5.63}


def test_empty_table_and_bad_format():
    assert "model" in evaluation.render_table([])
    with pytest.raises(ContractError):
        evaluation.render_table([], fmt="html")
    with pytest.raises(ContractError):
        evaluation.render_table([], with_references=True, reference_dataset="LA")


# ---------------------------------------------------------------------------
# traces


def test_trace_twelve_rows(small_series, small_split, tmp_path):
    _, norm, _ = small_split
    path = tmp_path / "trace.csv"
    trace = evaluation.export_trace(lambda b: b.y, small_series, norm, "2012-03-19", "s001", path)
    assert len(trace.timestamps) == 12
    assert trace.timestamps[0] == dt.datetime(2012, 3, 19, 0, 0)
    assert trace.timestamps[-1] == dt.datetime(2012, 3, 19, 22, 0)
    np.testing.assert_array_equal(trace.observed_mph, trace.predicted_mph)
    step = small_series.n_steps - 2 * 288  # 2012-03-19 00:00
    assert trace.observed_mph[0] == small_series.values[step, 1]
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 and list(rows[0]) == ["timestamp", "observed_mph", "predicted_mph"]
    assert float(rows[3]["observed_mph"]) == trace.observed_mph[3]


def test_trace_missing_observation_is_blank(small_series, small_split, tmp_path):
    _, norm, _ = small_split
    series = copy.deepcopy(small_series)
    step = series.n_steps - 288 + 24  # 2012-03-20 02:00
    series.mask[step, 0] = False
    path = tmp_path / "t.csv"
    trace = evaluation.export_trace(lambda b: b.y, series, norm, dt.date(2012, 3, 20), "s000", path)
    assert math.isnan(trace.observed_mph[1]) and not math.isnan(trace.predicted_mph[1])
    assert path.read_text().splitlines()[2].split(",")[1] == ""


@pytest.mark.parametrize("day, sensor", [("2012-03-02", "s000"), ("2012-03-21", "s000"), ("03/19/2012", "s000"),
                                         ("2012-03-19", "nope")])
def test_trace_input_errors(small_series, small_split, day, sensor):
    _, norm, _ = small_split
    with pytest.raises(InputError):
        evaluation.export_trace(lambda b: b.y, small_series, norm, day, sensor)


def test_trace_validation():
    t = [dt.datetime(2012, 1, 1), dt.datetime(2012, 1, 1)]
    with pytest.raises(ContractError):
        evaluation.PredictionTrace("s", t, np.zeros(2), np.zeros(2), "m")
    with pytest.raises(ContractError):
        evaluation.PredictionTrace("s", t[:1], np.zeros(2), np.zeros(2), "m")
