"""Command-line entry point.

Exit codes: 0 success, 1 usage or contract error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from . import config as cfgmod
from . import data, evaluation, gradcheck, models, training
from .baselines import fit_historical_average
from .errors import ContractError, DataError, InputError, NumericError, TrainingError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_FILE = "checkpoint.json"
HISTORY_FILE = "history.json"
SNAPSHOT_FILE = "config.snapshot"
TIMING_FILE = "timing.json"
REPORT_FILE = "report.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# shared pipeline


@dataclasses.dataclass
class Prepared:
    series: data.TrafficSeries
    segments: dict[str, data.Segment]
    normalizer: data.Normalizer
    windows: dict[str, list[data.WindowSample]]


def prepare(
    config: cfgmod.RunConfig,
    normalizer: data.Normalizer | None = None,
    need=("train", "val", "test"),
    series: data.TrafficSeries | None = None,
) -> Prepared:
    """Load, impute, split, normalize and window the configured data."""
    if series is None:
        series = data.impute(cfgmod.load_series(config))
    segments = data.SplitSpec().segments(series.n_steps)
    if normalizer is None:
        normalizer = data.fit_normalizer(series, segments["train"])
    windows = {}
    for name in need:
        seg = segments[name]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            windows[name] = data.build_windows(series, normalizer, seg)
        if not windows[name]:
            raise DataError(
                f"the {name} segment has {len(seg)} steps and yields no windows; every segment needs at least "
                f"{data.MIN_SEGMENT_STEPS} steps (the series has {series.n_steps} steps split 70/10/20)"
            )
    return Prepared(series, segments, normalizer, windows)


def _resolve(args) -> cfgmod.RunConfig:
    overrides = {}
    for f in dataclasses.fields(cfgmod.RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = cfgmod._coerce(f.name, value)
    overrides.update(cfgmod.parse_overrides(args.set or []))
    return cfgmod.resolve(args.preset, args.config, overrides)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any setting (repeatable)")
    group = p.add_argument_group("settings (override the config file)")
    for f in dataclasses.fields(cfgmod.RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar="V")


def _load_params(config: cfgmod.RunConfig, checkpoint, n_sensors: int):
    params, meta = models.load_checkpoint(checkpoint, expected_config=config.model_config(n_sensors))
    if params.kind != config.model:
        raise ContractError(f"checkpoint holds a {params.kind!r} model, config asks for {config.model!r}")
    return params, meta


def _normalizer_from(meta: dict) -> data.Normalizer | None:
    norm = meta.get("normalizer")
    return data.Normalizer(norm["mean"], norm["std"]) if norm else None


def _config_for_checkpoint(args) -> cfgmod.RunConfig:
    """Explicit settings win; otherwise the snapshot next to the checkpoint is used."""
    if args.preset is None and args.config is None:
        snapshot = Path(args.checkpoint).parent / SNAPSHOT_FILE
        if snapshot.is_file():
            args.config = str(snapshot)
    return _resolve(args)


# ---------------------------------------------------------------------------
# commands


def cmd_generate_data(args) -> int:
    if args.sensors < 1:
        raise UsageError("--sensors must be >= 1")
    if args.days < 2:
        raise UsageError("--days must be >= 2")
    series = data.generate_synthetic(
        args.sensors,
        args.days,
        seed=args.seed,
        noise_std=args.noise_std,
        noise_corr=args.noise_corr,
        missing_rate=args.missing_rate,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_speed_csv(series, out)
    print(f"{sha256_file(out)}  {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve(args)
    out = config.output_path()
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT_FILE).write_text(config.to_text())
    prep = prepare(config)
    n_sensors = prep.series.n_sensors
    started = time.perf_counter()
    if config.model == "historical_average":
        params = fit_historical_average(prep.series, prep.segments["train"], prep.normalizer)
        history = training.TrainHistory(stop_reason="fitted")
    else:
        params, history = training.train(
            config.model_config(n_sensors),
            prep.windows["train"],
            prep.windows["val"],
            config.train_config(),
            prep.normalizer,
        )
    wall = time.perf_counter() - started
    meta = {
        "config_hash": cfgmod.config_hash(config),
        "dataset_id": config.dataset_id(),
        "normalizer": {"mean": prep.normalizer.mean, "std": prep.normalizer.std},
        "best_epoch": history.best_epoch,
    }
    models.save_checkpoint(params, out / CHECKPOINT_FILE, meta)
    (out / HISTORY_FILE).write_text(history.to_json())
    (out / TIMING_FILE).write_text(json.dumps({"wall_time_seconds": wall}, indent=1) + "\n")
    print(f"trained {config.model} ({config.input_mode}) in {wall:.1f}s; "
          f"best epoch {history.best_epoch}, stop reason {history.stop_reason}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _config_for_checkpoint(args)
    series = data.impute(cfgmod.load_series(config))
    params, meta = _load_params(config, args.checkpoint, series.n_sensors)
    prep = prepare(config, normalizer=_normalizer_from(meta), need=(args.split,), series=series)
    report = evaluation.evaluate(
        params,
        prep.windows[args.split],
        prep.normalizer,
        model=f"{config.model}:{config.input_mode}",
        dataset_id=config.dataset_id(),
        config_hash=cfgmod.config_hash(config),
    )
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / REPORT_FILE
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    print(evaluation.render_table([report], fmt=args.format, with_references=args.with_paper_refs), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _config_for_checkpoint(args)
    series = data.impute(cfgmod.load_series(config))
    params, meta = _load_params(config, args.checkpoint, series.n_sensors)
    normalizer = _normalizer_from(meta)
    if normalizer is None:
        normalizer = data.fit_normalizer(series, data.SplitSpec().segments(series.n_steps)["train"])
    sensor = args.sensor or series.sensor_ids[0]
    trace = evaluation.export_trace(params, series, normalizer, args.day, sensor, args.out)
    print(f"wrote {len(trace.timestamps)} rows for sensor {sensor} to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(seed=args.seed, only=args.only)
    if not results:
        raise UsageError(f"no gradient check matches {args.only!r}")
    print(gradcheck.format_summary(results), end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trafformer", description="Long-horizon traffic speed forecasting.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch progress lines")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", help="write a synthetic speed CSV and print its SHA-256")
    p.add_argument("--sensors", type=int, default=4)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=2.0)
    p.add_argument("--noise-corr", type=float, default=0.9995)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model; writes checkpoint, history and config snapshot")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-horizon RMSE/MAE/MAPE of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--with-paper-refs", action="store_true", help="append published, non-reproduced results")
    p.add_argument("--out", help="report JSON path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="export a one-day prediction trace CSV")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--day", required=True, help="YYYY-MM-DD inside the test segment")
    p.add_argument("--sensor", help="sensor id (default: first sensor)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op, block and model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="run checks whose name contains this text")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except (UsageError, ContractError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
