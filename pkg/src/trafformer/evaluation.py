"""Horizon-sliced RMSE/MAE/MAPE, result tables and prediction traces."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from . import autodiff as ad
from .data import (
    MAX_LOOKAHEAD,
    MIN_ANCHOR,
    SLOT_MINUTES,
    STEPS_PER_DAY,
    TARGET_OFFSETS,
    Batch,
    Normalizer,
    Segment,
    SplitSpec,
    TrafficSeries,
    WindowSample,
    batches,
    build_windows,
)
from .errors import ContractError, DataError, InputError, NumericError
from .models import forward
from .nn import ModelParams
from .references import ABLATIONS, REFERENCE_LABEL, RESULTS

# horizon name -> index into the 12 output steps (step k = index + 1)
HORIZONS = {"6h": 2, "12h": 5, "18h": 8, "24h": 11}
METRICS = ("rmse", "mae", "mape")

Predictor = Union[ModelParams, Callable[[Batch], np.ndarray]]


# ---------------------------------------------------------------------------
# metrics


def _observed(y, y_hat, mask) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    mask = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if y.shape != y_hat.shape or mask.shape != y.shape:
        raise ContractError(f"shape mismatch: y {y.shape}, y_hat {y_hat.shape}, mask {mask.shape}")
    if not mask.any():
        raise DataError("every entry is masked")
    return y[mask], y_hat[mask]


def rmse(y, y_hat, mask=None) -> float:
    a, b = _observed(y, y_hat, mask)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(y, y_hat, mask=None) -> float:
    a, b = _observed(y, y_hat, mask)
    return float(np.mean(np.abs(a - b)))


def mape(y, y_hat, mask=None) -> float:
    """Mean ``|y - y_hat| / |y|`` as a fraction; entries with ``y == 0`` are skipped."""
    a, b = _observed(y, y_hat, mask)
    keep = a != 0
    if not keep.any():
        raise DataError("no observed non-zero targets for MAPE")
    return float(np.mean(np.abs(a[keep] - b[keep]) / np.abs(a[keep])))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class HorizonMetrics:
    rmse: float
    mae: float
    mape: float
    count: int


@dataclass
class HorizonReport:
    """Metrics of one model at the 6/12/18/24 hour output steps (mph, MAPE as a fraction)."""

    model: str
    horizons: dict[str, HorizonMetrics]
    n_samples: int
    dataset_id: str = ""
    config_hash: str = ""

    def __post_init__(self):
        if list(self.horizons) != list(HORIZONS):
            raise ContractError(f"report needs horizons {list(HORIZONS)}, got {list(self.horizons)}")
        for name, m in self.horizons.items():
            values = (m.rmse, m.mae, m.mape)
            if not all(math.isfinite(v) and v >= 0 for v in values):
                raise NumericError(f"{self.model} {name}: metrics must be finite and >= 0, got {values}")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "dataset_id": self.dataset_id,
            "config_hash": self.config_hash,
            "n_samples": self.n_samples,
            "horizons": {h: asdict(m) for h, m in self.horizons.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> HorizonReport:
        return cls(
            model=d["model"],
            horizons={h: HorizonMetrics(**m) for h, m in d["horizons"].items()},
            n_samples=int(d["n_samples"]),
            dataset_id=d.get("dataset_id", ""),
            config_hash=d.get("config_hash", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def predict_mph(predictor: Predictor, batch: Batch, normalizer: Normalizer) -> np.ndarray:
    """``[batch, 12, sensors]`` predictions in mph."""
    if isinstance(predictor, ModelParams):
        with ad.no_grad():
            return forward(predictor, batch).to_mph(normalizer)
    return np.asarray(predictor(batch), dtype=np.float64)


def _expected_sensors(predictor: Predictor) -> int | None:
    if isinstance(predictor, ModelParams):
        return predictor.config.n_sensors
    return None


def evaluate(
    predictor: Predictor,
    samples: Sequence[WindowSample],
    normalizer: Normalizer,
    *,
    model: str | None = None,
    dataset_id: str = "",
    config_hash: str = "",
    batch_size: int = 256,
) -> HorizonReport:
    """Per-horizon metrics over every test sample and sensor, in mph.

    ``predictor`` is either trained ``ModelParams`` or a callable mapping a
    batch to mph predictions ``[batch, 12, sensors]``.
    """
    if not samples:
        raise DataError("evaluation needs at least one sample")
    want = _expected_sensors(predictor)
    have = samples[0].y.shape[1]
    if want is not None and want != have:
        raise ContractError(f"model expects {want} sensors, samples have {have}")
    ys, preds, masks = [], [], []
    for batch in batches(samples, batch_size):
        pred = predict_mph(predictor, batch, normalizer)
        if pred.shape != batch.y.shape:
            raise ContractError(f"predictor returned {pred.shape}, expected {batch.y.shape}")
        ys.append(batch.y)
        preds.append(pred)
        masks.append(batch.y_mask)
    y, y_hat, mask = np.concatenate(ys), np.concatenate(preds), np.concatenate(masks)
    if not np.isfinite(y_hat[mask]).all():
        raise NumericError("predictions contain non-finite values")
    horizons = {}
    for name, k in HORIZONS.items():
        m = HorizonMetrics(
            rmse=rmse(y[:, k], y_hat[:, k], mask[:, k]),
            mae=mae(y[:, k], y_hat[:, k], mask[:, k]),
            mape=mape(y[:, k], y_hat[:, k], mask[:, k]),
            count=int(mask[:, k].sum()),
        )
        # power-mean inequality; a violation means the metric code is broken
        if m.rmse < m.mae * (1 - 1e-12):
            raise NumericError(f"{name}: RMSE {m.rmse} < MAE {m.mae}")
        horizons[name] = m
    name = model or (predictor.kind if isinstance(predictor, ModelParams) else "predictor")
    return HorizonReport(name, horizons, len(samples), dataset_id, config_hash)


# ---------------------------------------------------------------------------
# tables


def _reference_rows(dataset: str | None) -> list[dict]:
    rows = []
    for ds in ([dataset] if dataset else list(RESULTS)):
        for source, label in ((RESULTS, ""), (ABLATIONS, " ablation")):
            for model, cells in source[ds].items():
                rows.append({"model": f"{model} [{ds}{label}]", "dataset": ds, "cells": cells})
    return rows


def render_table(
    reports: Sequence[HorizonReport],
    *,
    fmt: str = "text",
    with_references: bool = False,
    reference_dataset: str | None = None,
) -> str:
    """Rows are models, column groups are horizons, cells are RMSE/MAE/MAPE.

    With ``with_references`` the published full-scale results are appended
    in a separate block labeled as non-reproduced.  MAPE is shown in percent.
    """
    if fmt not in ("text", "json"):
        raise ContractError("fmt must be 'text' or 'json'")
    if reference_dataset is not None and reference_dataset not in RESULTS:
        raise ContractError(f"unknown reference dataset {reference_dataset!r}")
    measured = [
        {
            "model": r.model,
            "dataset_id": r.dataset_id,
            "config_hash": r.config_hash,
            "cells": {
                h: {"rmse": m.rmse, "mae": m.mae, "mape_percent": 100.0 * m.mape, "count": m.count}
                for h, m in r.horizons.items()
            },
        }
        for r in reports
    ]
    refs = _reference_rows(reference_dataset) if with_references else []
    if fmt == "json":
        doc = {"horizons": list(HORIZONS), "metrics": ["rmse", "mae", "mape_percent"], "rows": measured}
        if with_references:
            doc["references"] = {"label": REFERENCE_LABEL, "rows": refs}
        return json.dumps(doc, indent=1) + "\n"

    width = max([len("model")] + [len(r["model"]) for r in measured + refs])
    group = "{:>7} {:>6} {:>7}"
    head1 = " " * width + " | " + " | ".join(f"{h:^22}" for h in HORIZONS)
    head2 = f"{'model':<{width}} | " + " | ".join(group.format("RMSE", "MAE", "MAPE%") for _ in HORIZONS)
    rule = "-" * len(head2)

    def line(row):
        cells = [
            group.format(f"{c['rmse']:.2f}", f"{c['mae']:.2f}", f"{c['mape_percent']:.2f}")
            for c in (row["cells"][h] for h in HORIZONS)
        ]
        return f"{row['model']:<{width}} | " + " | ".join(cells)

    out = [head1, head2, rule, *(line(r) for r in measured)]
    if refs:
        out += [rule, f"{REFERENCE_LABEL}:", *(line(r) for r in refs)]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# traces


@dataclass
class PredictionTrace:
    sensor_id: str
    timestamps: list[dt.datetime]
    observed_mph: np.ndarray  # NaN where the reading is missing
    predicted_mph: np.ndarray
    model: str = ""

    def __post_init__(self):
        n = len(self.timestamps)
        if len(self.observed_mph) != n or len(self.predicted_mph) != n:
            raise ContractError("trace columns must have equal lengths")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ContractError("trace timestamps must be strictly increasing")

    def write_csv(self, path) -> None:
        """Loader-compatible CSV; a missing observation is an empty cell."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "observed_mph", "predicted_mph"])
            for ts, obs, pred in zip(self.timestamps, self.observed_mph, self.predicted_mph):
                w.writerow([
                    ts.isoformat(timespec="minutes"),
                    "" if math.isnan(obs) else repr(float(obs)),
                    repr(float(pred)),
                ])


def _day_start_step(series: TrafficSeries, day: dt.date) -> int:
    midnight = dt.datetime.combine(day, dt.time())
    minutes = (midnight - series.start_time).total_seconds() / 60.0
    return int(math.ceil(minutes / series.step_minutes)) if minutes >= 0 else -1


def export_trace(
    predictor: Predictor,
    series: TrafficSeries,
    normalizer: Normalizer,
    day: dt.date | str,
    sensor_id: str,
    path=None,
    *,
    split: SplitSpec = SplitSpec(),
) -> PredictionTrace:
    """Predictions for the 12 two-hour targets 00:00, 02:00, ... 22:00 of ``day``.

    The single window is anchored 24 steps (two hours) before midnight so its
    targets fall on the chosen day, which must lie entirely inside the test
    segment.  ``series`` should already be imputed; observed values come from
    it wherever the mask is set.
    """
    if series.step_minutes != SLOT_MINUTES:
        raise InputError(f"traces need {SLOT_MINUTES}-minute steps")
    if isinstance(day, str):
        try:
            day = dt.date.fromisoformat(day)
        except ValueError:
            raise InputError(f"bad day {day!r}; expected YYYY-MM-DD") from None
    try:
        j = series.sensor_index(sensor_id)
    except KeyError:
        raise InputError(f"unknown sensor id {sensor_id!r}") from None
    test = split.segments(series.n_steps)["test"]
    start = _day_start_step(series, day)
    if start < test.start or start + STEPS_PER_DAY > test.stop:
        first = series.timestamp(test.start)
        raise InputError(
            f"day {day} is not fully inside the test segment "
            f"(steps {test.start}..{test.stop - 1}, starting {first:%Y-%m-%d %H:%M})"
        )
    anchor = start - int(TARGET_OFFSETS[0])
    if anchor < MIN_ANCHOR or anchor + MAX_LOOKAHEAD >= series.n_steps:
        raise InputError(f"day {day} leaves no room for a full input window")
    (sample,) = build_windows(series, normalizer, Segment("trace", anchor, anchor + MAX_LOOKAHEAD + 1))
    pred = predict_mph(predictor, Batch.from_samples([sample]), normalizer)[0, :, j]
    steps = anchor + TARGET_OFFSETS
    observed = np.where(series.mask[steps, j], series.values[steps, j], np.nan)
    name = predictor.kind if isinstance(predictor, ModelParams) else "predictor"
    trace = PredictionTrace(sensor_id, [series.timestamp(int(s)) for s in steps], observed, pred, name)
    if path is not None:
        trace.write_csv(path)
    return trace
