"""Speed series ingestion, normalization, splitting and sliding windows.

Step offsets are in 5-minute steps relative to an anchor ``t`` (0-indexed):

* short-term input  ``x_short``:  t-11 .. t
* medium-term input ``x_medium``: t-264, t-240, ..., t-24, t
* targets           ``y``:        t+24, t+48, ..., t+288

so valid anchors of a series with ``n`` steps are ``264 <= t <= n - 289``.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ParseError

STEPS_PER_DAY = 288
SLOT_MINUTES = 5
SHORT_OFFSETS = np.arange(-11, 1)
MEDIUM_OFFSETS = np.arange(-264, 1, 24)
TARGET_OFFSETS = np.arange(24, 289, 24)
MIN_ANCHOR = -int(MEDIUM_OFFSETS[0])
MAX_LOOKAHEAD = int(TARGET_OFFSETS[-1])
MIN_SEGMENT_STEPS = MIN_ANCHOR + MAX_LOOKAHEAD + 1  # 553
DEFAULT_START = dt.datetime(2012, 3, 1)


@dataclass
class TrafficSeries:
    """Speed matrix ``[steps x sensors]`` in mph; ``mask`` is True where observed."""

    sensor_ids: list[str]
    start_time: dt.datetime
    step_minutes: int
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise DataError(f"values {self.values.shape} and mask {self.mask.shape} must be equal 2-d shapes")
        if self.values.shape[1] != len(self.sensor_ids):
            raise DataError("one sensor id per column is required")
        if self.step_minutes <= 0 or 1440 % self.step_minutes:
            raise DataError(f"step_minutes={self.step_minutes} must divide 1440")
        observed = self.values[self.mask]
        if not np.isfinite(observed).all() or (observed < 0).any():
            raise DataError("observed speeds must be finite and non-negative")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]

    def _minutes(self) -> np.ndarray:
        start = self.start_time.hour * 60 + self.start_time.minute
        return start + np.arange(self.n_steps, dtype=np.int64) * self.step_minutes

    def time_slots(self) -> np.ndarray:
        """5-minute slot of the day, in [0, 288)."""
        return (self._minutes() % 1440) // SLOT_MINUTES

    def day_indices(self) -> np.ndarray:
        """Day of week, Monday = 0."""
        return (self.start_time.weekday() + self._minutes() // 1440) % 7

    def timestamp(self, step: int) -> dt.datetime:
        return self.start_time + dt.timedelta(minutes=step * self.step_minutes)

    def sensor_index(self, sensor_id: str) -> int:
        try:
            return self.sensor_ids.index(sensor_id)
        except ValueError:
            raise KeyError(sensor_id) from None


@dataclass(frozen=True)
class Normalizer:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError(f"normalizer std must be positive, got {self.std}")

    def normalize(self, v):
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, v):
        return np.asarray(v, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        parts = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(p < 0 for p in parts) or not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise DataError(f"split fractions must be non-negative and sum to 1, got {parts}")

    def segments(self, n_steps: int) -> dict[str, Segment]:
        train_end = int(round(n_steps * self.train_fraction))
        val_end = int(round(n_steps * (self.train_fraction + self.val_fraction)))
        return {
            "train": Segment("train", 0, train_end),
            "val": Segment("val", train_end, val_end),
            "test": Segment("test", val_end, n_steps),
        }


@dataclass(frozen=True)
class Segment:
    """Half-open step range ``[start, stop)``."""

    name: str
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass
class WindowSample:
    x_short: np.ndarray  # [12, sensors], normalized
    x_medium: np.ndarray  # [12, sensors], normalized
    y: np.ndarray  # [12, sensors], mph
    y_mask: np.ndarray
    t_idx_short: np.ndarray
    t_idx_medium: np.ndarray
    t_idx_target: np.ndarray
    d_idx_short: np.ndarray
    d_idx_medium: np.ndarray
    d_idx_target: np.ndarray
    anchor: int


_BATCH_FIELDS = (
    "x_short", "x_medium", "y", "y_mask",
    "t_idx_short", "t_idx_medium", "t_idx_target",
    "d_idx_short", "d_idx_medium", "d_idx_target",
)


@dataclass
class Batch:
    """WindowSample fields stacked along a leading batch axis."""

    x_short: np.ndarray
    x_medium: np.ndarray
    y: np.ndarray
    y_mask: np.ndarray
    t_idx_short: np.ndarray
    t_idx_medium: np.ndarray
    t_idx_target: np.ndarray
    d_idx_short: np.ndarray
    d_idx_medium: np.ndarray
    d_idx_target: np.ndarray
    anchors: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> Batch:
        if not samples:
            raise DataError("cannot build a batch from zero samples")
        stacked = {name: np.stack([getattr(s, name) for s in samples]) for name in _BATCH_FIELDS}
        return cls(**stacked, anchors=np.array([s.anchor for s in samples], dtype=np.int64))

    @property
    def size(self) -> int:
        return self.x_short.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.x_short.shape[2]

    def permute_sensors(self, order: Sequence[int]) -> Batch:
        order = np.asarray(order)
        moved = {name: getattr(self, name)[:, :, order] for name in ("x_short", "x_medium", "y", "y_mask")}
        return replace(self, **moved)


# ---------------------------------------------------------------------------
# ingestion


def load_speed_csv(path) -> TrafficSeries:
    """Read ``timestamp,<sensor ids...>`` rows; empty cells and 0 are missing."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", line=1) from None
        if not header or header[0].strip() != "timestamp" or len(header) < 2:
            raise ParseError("header must be 'timestamp' followed by sensor ids", line=1)
        sensor_ids = [h.strip() for h in header[1:]]
        n = len(sensor_ids)
        times: list[dt.datetime] = []
        rows: list[list[float]] = []
        step: int | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 1:
                raise ParseError(f"expected {n + 1} fields, found {len(row)}", line=lineno)
            try:
                ts = dt.datetime.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(f"bad timestamp {row[0]!r}", line=lineno) from None
            if times:
                delta = (ts - times[-1]).total_seconds() / 60.0
                if step is None:
                    if delta <= 0 or delta != int(delta) or 1440 % int(delta):
                        raise ParseError(f"cadence of {delta:g} minutes does not divide a day", line=lineno)
                    step = int(delta)
                elif delta != step:
                    raise ParseError(
                        f"timestamp {row[0].strip()} breaks the {step}-minute cadence", line=lineno
                    )
            values = []
            for cell in row[1:]:
                cell = cell.strip()
                if cell == "":
                    values.append(0.0)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", line=lineno) from None
                if not math.isfinite(v) or v < 0:
                    raise ParseError(f"speed must be finite and non-negative, got {cell!r}", line=lineno)
                values.append(v)
            times.append(ts)
            rows.append(values)
    if not rows:
        raise ParseError("no data rows", line=2)
    values = np.array(rows, dtype=np.float64)
    return TrafficSeries(
        sensor_ids=sensor_ids,
        start_time=times[0],
        step_minutes=step or SLOT_MINUTES,
        values=values,
        mask=values != 0.0,
    )


def write_speed_csv(series: TrafficSeries, path) -> None:
    """Write ``series`` in the loader's format; missing entries become empty cells."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *series.sensor_ids])
        for i in range(series.n_steps):
            cells = [
                repr(float(v)) if m else ""
                for v, m in zip(series.values[i], series.mask[i])
            ]
            writer.writerow([series.timestamp(i).isoformat(timespec="minutes"), *cells])


def _dip(hours: np.ndarray, center: float, width: float, depth: float) -> np.ndarray:
    phase = (hours - (center - width / 2)) / width
    inside = (phase >= 0) & (phase <= 1)
    return np.where(inside, depth * np.sin(np.pi * phase) ** 2, 0.0)


def generate_synthetic(
    n_sensors: int,
    n_days: int,
    seed: int,
    noise_std: float,
    noise_corr: float = 0.9995,
    missing_rate: float = 0.0,
    start_time: dt.datetime = DEFAULT_START,
) -> TrafficSeries:
    """Weekday/weekend speed profiles with temporally correlated Gaussian noise.

    Each sensor gets a free-flow speed and its own dip timing.  Weekdays carry
    a morning and an evening rush-hour dip, weekends one shallow midday dip.
    The noise is a stationary AR(1) process per sensor with marginal standard
    deviation ``noise_std`` and lag-one correlation ``noise_corr``.  Values are
    clipped to [0, 80] mph; a fraction ``missing_rate`` of entries is masked.
    """
    if n_sensors < 1:
        raise DataError("n_sensors must be >= 1")
    if n_days < 2:
        raise DataError("n_days must be >= 2")
    if noise_std < 0 or not 0 <= noise_corr < 1 or not 0 <= missing_rate < 1:
        raise DataError("noise_std >= 0, 0 <= noise_corr < 1 and 0 <= missing_rate < 1 are required")
    rng = np.random.default_rng(seed)
    n_steps = n_days * STEPS_PER_DAY
    minutes = start_time.hour * 60 + start_time.minute + np.arange(n_steps) * SLOT_MINUTES
    hours = (minutes % 1440) / 60.0
    weekend = ((start_time.weekday() + minutes // 1440) % 7) >= 5

    values = np.empty((n_steps, n_sensors))
    for j in range(n_sensors):
        base = rng.uniform(55.0, 68.0)
        am = _dip(hours, rng.uniform(7.0, 9.0), rng.uniform(2.5, 4.0), rng.uniform(15.0, 30.0))
        pm = _dip(hours, rng.uniform(16.5, 18.5), rng.uniform(3.0, 4.5), rng.uniform(15.0, 30.0))
        we = _dip(hours, rng.uniform(12.0, 16.0), rng.uniform(3.0, 5.0), rng.uniform(4.0, 10.0))
        values[:, j] = base - np.where(weekend, we, am + pm)

    if noise_std > 0:
        shocks = rng.standard_normal((n_steps, n_sensors)) * noise_std
        innovation = math.sqrt(1.0 - noise_corr**2)
        noise = np.empty_like(shocks)
        noise[0] = shocks[0]
        for i in range(1, n_steps):
            noise[i] = noise_corr * noise[i - 1] + innovation * shocks[i]
        values += noise
    values = np.clip(values, 0.0, 80.0)

    mask = values > 0.0
    if missing_rate > 0:
        mask &= rng.random(values.shape) >= missing_rate
    values = np.where(mask, values, 0.0)
    return TrafficSeries(
        sensor_ids=[f"s{j:03d}" for j in range(n_sensors)],
        start_time=start_time,
        step_minutes=SLOT_MINUTES,
        values=values,
        mask=mask,
    )


# ---------------------------------------------------------------------------
# preprocessing


def fit_normalizer(series: TrafficSeries, segment: Segment) -> Normalizer:
    """Mean and population std of observed entries inside ``segment`` only."""
    vals = series.values[segment.start:segment.stop]
    observed = vals[series.mask[segment.start:segment.stop]]
    if observed.size < 2:
        raise DataError(f"{segment.name} segment has {observed.size} observed values; need >= 2")
    std = float(observed.std())
    if std == 0.0:
        raise DataError(f"{segment.name} segment has constant observed values (std 0)")
    return Normalizer(mean=float(observed.mean()), std=std)


def impute(series: TrafficSeries) -> TrafficSeries:
    """Last observation carried forward per sensor; leading gaps take the
    first observed value.  The mask is returned unchanged."""
    mask = series.mask
    steps = np.arange(series.n_steps)[:, None]
    for j, sid in enumerate(series.sensor_ids):
        if not mask[:, j].any():
            raise DataError(f"sensor {sid} has no observed values")
    last_seen = np.maximum.accumulate(np.where(mask, steps, -1), axis=0)
    first_seen = mask.argmax(axis=0)
    source = np.where(last_seen >= 0, last_seen, first_seen[None, :])
    values = np.take_along_axis(series.values, source, axis=0)
    return replace(series, values=values, mask=mask.copy())


def valid_anchors(n_steps: int, segment: Segment) -> range:
    """Anchors owned by ``segment``: inputs may reach back before the segment
    start, targets must stay inside it."""
    lo = max(segment.start, MIN_ANCHOR)
    hi = min(segment.stop, n_steps) - 1 - MAX_LOOKAHEAD
    return range(lo, max(lo, hi + 1))


def build_windows(series: TrafficSeries, normalizer: Normalizer, segment: Segment) -> list[WindowSample]:
    if series.step_minutes != SLOT_MINUTES:
        raise DataError(f"windows assume {SLOT_MINUTES}-minute steps, series has {series.step_minutes}")
    anchors = valid_anchors(series.n_steps, segment)
    if len(anchors) == 0:
        warnings.warn(
            f"{segment.name} segment [{segment.start}, {segment.stop}) yields no windows; "
            f"a segment needs at least {MIN_SEGMENT_STEPS} steps",
            RuntimeWarning,
            stacklevel=2,
        )
        return []
    norm = normalizer.normalize(series.values)
    slots = series.time_slots()
    days = series.day_indices()
    samples = []
    for t in anchors:
        s, m, y = t + SHORT_OFFSETS, t + MEDIUM_OFFSETS, t + TARGET_OFFSETS
        samples.append(
            WindowSample(
                x_short=norm[s],
                x_medium=norm[m],
                y=series.values[y],
                y_mask=series.mask[y],
                t_idx_short=slots[s],
                t_idx_medium=slots[m],
                t_idx_target=slots[y],
                d_idx_short=days[s],
                d_idx_medium=days[m],
                d_idx_target=days[y],
                anchor=t,
            )
        )
    return samples


def batches(samples: Sequence[WindowSample], batch_size: int, shuffle_seed: int | None = None) -> list[Batch]:
    """Split samples into batches; ``shuffle_seed=None`` keeps the given order."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if not samples:
        raise DataError("no samples to batch")
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    return [
        Batch.from_samples([samples[i] for i in order[k:k + batch_size]])
        for k in range(0, len(samples), batch_size)
    ]
