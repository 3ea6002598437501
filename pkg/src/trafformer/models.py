"""Model registry and checkpoint files.

A checkpoint is a single JSON document::

    {
      "format": "trafformer-checkpoint",
      "version": 1,
      "kind": "trafformer",
      "config": {...},
      "metadata": {...},
      "params": [{"name": ..., "shape": [...], "dtype": "<f8", "data": <base64>}, ...]
    }

``data`` holds the little-endian float64 bytes of the array in row-major order.
"""

from __future__ import annotations

import base64
import dataclasses
import json
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .baselines import (
    FNNConfig,
    GRUConfig,
    HistoricalAverageConfig,
    Seq2SeqConfig,
    fnn_forward,
    gru_forward,
    historical_average_forward,
    init_fnn,
    init_gru_model,
    init_historical_average,
    init_seq2seq,
    seq2seq_lstm_forward,
)
from .data import Batch
from .errors import ContractError
from .nn import ModelParams, Prediction
from .trafformer import TrafFormerConfig, init_trafformer, trafformer_forward

CHECKPOINT_FORMAT = "trafformer-checkpoint"
CHECKPOINT_VERSION = 1


@dataclasses.dataclass(frozen=True)
class ModelKind:
    config_cls: type
    init: Callable[[Any, int], ModelParams]
    forward: Callable[..., Prediction]
    trainable: bool = True


MODEL_KINDS: dict[str, ModelKind] = {
    "trafformer": ModelKind(TrafFormerConfig, init_trafformer, trafformer_forward),
    "fnn": ModelKind(FNNConfig, init_fnn, fnn_forward),
    "gru": ModelKind(GRUConfig, init_gru_model, gru_forward),
    "seq2seq": ModelKind(Seq2SeqConfig, init_seq2seq, seq2seq_lstm_forward),
    "historical_average": ModelKind(
        HistoricalAverageConfig, init_historical_average, historical_average_forward, trainable=False
    ),
}


def _kind(name: str) -> ModelKind:
    try:
        return MODEL_KINDS[name]
    except KeyError:
        raise ContractError(f"unknown model kind {name!r}; expected one of {sorted(MODEL_KINDS)}") from None


def make_config(kind: str, **fields):
    """Build the config dataclass for ``kind``, ignoring unknown fields."""
    cls = _kind(kind).config_cls
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in fields.items() if k in names})


def init_model(config, seed: int) -> ModelParams:
    """Deterministic initialization for any registered config."""
    return _kind(config.kind).init(config, seed)


def forward(params: ModelParams, batch: Batch, **kwargs) -> Prediction:
    return _kind(params.kind).forward(params, batch, **kwargs)


def config_to_dict(config) -> dict:
    out = dataclasses.asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def config_from_dict(kind: str, data: dict):
    cls = _kind(kind).config_cls
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ContractError(f"unknown {kind} config fields: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**values)


def save_checkpoint(params: ModelParams, path, metadata: dict | None = None) -> None:
    entries = []
    for name, t in params.tensors.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(t.shape),
                "dtype": "<f8",
                "data": base64.b64encode(raw).decode("ascii"),
            }
        )
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "config": config_to_dict(params.config),
        "metadata": metadata or {},
        "params": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path, expected_config=None) -> tuple[ModelParams, dict]:
    """Load a checkpoint, validating every parameter shape against its config.

    With ``expected_config`` given, the stored config must describe the same
    shapes; mismatches raise ``ContractError`` naming the parameter.
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')}")
    kind = doc["kind"]
    config = config_from_dict(kind, doc["config"])
    params = init_model(config, seed=0)
    reference = init_model(expected_config, seed=0) if expected_config is not None else params
    stored = {e["name"]: e for e in doc["params"]}
    for name in reference.tensors:
        if name not in stored:
            raise ContractError(f"checkpoint lacks parameter {name!r}")
    for name, entry in stored.items():
        if name not in reference.tensors:
            raise ContractError(f"checkpoint has unexpected parameter {name!r}")
        shape = tuple(entry["shape"])
        want = reference.tensors[name].shape
        if shape != want:
            raise ContractError(f"parameter {name!r} has shape {shape}, config expects {want}")
        if entry.get("dtype") != "<f8":
            raise ContractError(f"parameter {name!r} has dtype {entry.get('dtype')}, expected <f8")
        data = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise ContractError(f"parameter {name!r} payload has {data.size} values for shape {shape}")
        params.tensors[name].data = data.astype(np.float64).reshape(shape)
    return params, doc.get("metadata", {})
