"""Run configuration: a flat ``key = value`` file, presets and flag overrides.

File format, one setting per line::

    # comment
    model = trafformer
    max_epochs = 30
    clip_grad_norm = none

Precedence, lowest first: field defaults, ``--preset``, config file, flags.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass
from pathlib import Path

from . import features
from .data import TrafficSeries, generate_synthetic, load_speed_csv
from .errors import TrafFormerError, UsageError
from .models import make_config
from .training import LOSSES, OPTIMIZERS, TrainConfig

OUTPUT_ROOT_ENV = "TRAFFORMER_OUTPUT_ROOT"
DATA_SOURCES = ("synthetic", "csv")
RUN_MODEL_KINDS = ("trafformer", "fnn", "gru", "seq2seq", "historical_average")


@dataclass(frozen=True)
class RunConfig:
    # data
    data_source: str = "synthetic"
    data_csv: str | None = None
    synthetic_sensors: int = 4
    synthetic_days: int = 30
    noise_std: float = 2.0
    noise_corr: float = 0.9995
    missing_rate: float = 0.0
    # model
    model: str = "trafformer"
    input_mode: str = "default"
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 1
    ff_width: int = 64
    dropout: float = 0.0
    # training
    loss: str = "mae"
    optimizer: str = "sgd"
    max_epochs: int = 50
    patience: int = 2
    batch_size: int = 64
    base_lr: float = 1e-3
    max_lr: float = 6e-3
    momentum: float = 0.9
    clip_grad_norm: float | None = None
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.data_source not in DATA_SOURCES:
            raise UsageError(f"data_source must be one of {DATA_SOURCES}, got {self.data_source!r}")
        if self.data_source == "csv" and not self.data_csv:
            raise UsageError("data_source = csv needs data_csv")
        if self.data_source == "synthetic" and self.data_csv:
            raise UsageError("data_csv is set but data_source = synthetic; choose exactly one source")
        if self.model not in RUN_MODEL_KINDS:
            raise UsageError(f"model must be one of {RUN_MODEL_KINDS}, got {self.model!r}")
        if self.input_mode not in features.INPUT_MODES:
            raise UsageError(f"input_mode must be one of {features.INPUT_MODES}, got {self.input_mode!r}")
        if self.loss not in LOSSES:
            raise UsageError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise UsageError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.synthetic_sensors < 1 or self.synthetic_days < 2:
            raise UsageError("synthetic_sensors must be >= 1 and synthetic_days >= 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                max_epochs=self.max_epochs,
                patience=self.patience,
                batch_size=self.batch_size,
                base_lr=self.base_lr,
                max_lr=self.max_lr,
                momentum=self.momentum,
                loss=self.loss,
                seed=self.seed,
                optimizer=self.optimizer,
                clip_grad_norm=self.clip_grad_norm,
            )
        except TrafFormerError as exc:
            raise UsageError(str(exc)) from exc

    def model_config(self, n_sensors: int):
        fields = dict(
            n_sensors=n_sensors,
            input_mode=self.input_mode,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            ff_width=self.ff_width,
            dropout=self.dropout,
        )
        try:
            return make_config(self.model, **fields)
        except TrafFormerError as exc:
            raise UsageError(str(exc)) from exc

    def output_path(self) -> Path:
        """``output_dir``, relative paths resolved against ``$TRAFFORMER_OUTPUT_ROOT`` when set."""
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def dataset_id(self) -> str:
        if self.data_source == "csv":
            return f"csv:{Path(self.data_csv).name}"
        return (
            f"synthetic:sensors={self.synthetic_sensors},days={self.synthetic_days},"
            f"noise={self.noise_std:g},corr={self.noise_corr:g},missing={self.missing_rate:g},seed={self.seed}"
        )


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of every setting except ``output_dir``."""
    d = config.to_dict()
    d.pop("output_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# the acceptance-test configuration: finishes in a few minutes on one CPU core
PRESETS: dict[str, dict[str, object]] = {
    "desk": dict(
        data_source="synthetic",
        synthetic_sensors=4,
        synthetic_days=30,
        noise_std=2.0,
        noise_corr=0.9995,
        model="trafformer",
        d_model=32,
        n_heads=4,
        ff_width=64,
        optimizer="adam",
        base_lr=1e-3,
        max_lr=5e-3,
        batch_size=32,
        max_epochs=30,
        patience=6,
        output_dir="runs/desk",
    ),
}


# ---------------------------------------------------------------------------
# parsing


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


_HINTS = typing.get_type_hints(RunConfig)


def _coerce(key: str, raw: str):
    if key not in _HINTS:
        raise UsageError(f"unknown setting {key!r}")
    hint = _HINTS[key]
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional and raw.strip().lower() in ("none", ""):
        return None
    base = next(a for a in args if a is not type(None)) if args else hint
    raw = raw.strip()
    try:
        if base is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if base is int:
            return int(raw)
        if base is float:
            return float(raw)
    except ValueError:
        raise UsageError(f"setting {key!r}: cannot read {raw!r} as {base.__name__}") from None
    return raw


def parse_config_text(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise UsageError(f"config line {lineno}: {key!r} set twice")
        try:
            out[key] = _coerce(key, value)
        except UsageError as exc:
            raise UsageError(f"config line {lineno}: {exc}") from None
    return out


def parse_overrides(pairs: list[str]) -> dict[str, object]:
    """``["key=value", ...]`` from the command line."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = _coerce(key.strip(), value)
    return out


def resolve(
    preset: str | None = None,
    config_file: str | Path | None = None,
    overrides: dict[str, object] | None = None,
) -> RunConfig:
    settings: dict[str, object] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        settings.update(PRESETS[preset])
    explicit: dict[str, object] = {}
    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        explicit.update(parse_config_text(path.read_text()))
    explicit.update(overrides or {})
    settings.update(explicit)
    # a CSV path selects the CSV source unless the source is named explicitly
    if explicit.get("data_csv") and "data_source" not in explicit:
        settings["data_source"] = "csv"
    return RunConfig(**settings)


def load_config(path) -> RunConfig:
    """Read a config file (for example a resolved snapshot) on its own."""
    return resolve(config_file=path)


def load_series(config: RunConfig) -> TrafficSeries:
    if config.data_source == "csv":
        return load_speed_csv(config.data_csv)
    return generate_synthetic(
        config.synthetic_sensors,
        config.synthetic_days,
        seed=config.seed,
        noise_std=config.noise_std,
        noise_corr=config.noise_corr,
        missing_rate=config.missing_rate,
    )
