"""Command-line front end: ``greeneyes <command> [flags]``.

Every command writes its fully resolved configuration to ``<out>/config.json``;
passing that file back through ``--config`` reproduces the run. On failure an
``error.json`` is written next to it and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import aqi
from .dataset import (
    SynthParams,
    WindowSpec,
    build_samples,
    chronological_split,
    export_sample_set,
    fit_and_apply_normalizer,
    fuse_channels,
    load_series_csv,
    save_iaqi_csv,
    save_series_csv,
    synth_annotation,
    synth_generate,
)
from .errors import GreenEyesError
from .nn import ModelConfig, init_params
from .targets import load_annotation, load_target_csv, polygonalize, save_annotation, save_target_csv
from .training import TrainConfig, evaluate_full_sequence, load_checkpoint, train

log = logging.getLogger("greeneyes")

DEFAULTS = {
    "seed": 0,
    "standard": "usa",
    "pollutant": "pm25",
    "model": {
        "input_channels": 1,
        "block_layers": [8, 5, 3],
        "kernel_size": 3,
        "filters": 16,
        "attention_kind": "temporal",
        "use_lstm": True,
        "lstm_hidden": 32,
        "bidirectional": True,
        "pool_factor": 1,
        "head_hidden": [],
    },
    "train": {
        "initial_lr": 1e-4,
        "lr_decay_factor": 0.1,
        "lr_decay_epoch": 20,
        "lr_decay_repeat": False,
        "epochs": 100,
        "batch_size": 32,
        "shuffle": True,
    },
    "window": {"window_size": 7200, "stride": 10},
    "data": {
        "series": [],
        "annotations": [],
        "unit": "iaqi",
        "train_fraction": 0.8,
        "shuffle_split": False,
    },
    "sweep": {"strides": [10, 5, 2], "windows": [7200, 3600]},
}

ABLATIONS = {
    "temporal": {"attention_kind": "temporal", "use_lstm": True},
    "dot_product": {"attention_kind": "dot_product", "use_lstm": True},
    "no_attention": {"attention_kind": "none", "use_lstm": True},
    "no_lstm": {"attention_kind": "temporal", "use_lstm": False},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _bundled_dir() -> Path:
    return Path(str(resources.files("greeneyes") / "data" / "tiny"))


def _absolute_paths(cfg: dict, root: Path) -> dict:
    data = cfg.setdefault("data", {})
    for key in ("series", "annotations"):
        data[key] = [str((root / p).resolve()) for p in data.get(key, [])]
    return cfg


def resolve_config(args: argparse.Namespace, needs_data: bool = False) -> dict:
    """Defaults, then the ``--config`` file, then command-line flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        file_cfg = _absolute_paths(json.loads(path.read_text(encoding="utf-8")), path.parent)
        cfg = _merge(cfg, file_cfg)
    series = getattr(args, "series", None)
    if series:
        cfg["data"]["series"] = [str(Path(p).resolve()) for p in series]
        cfg["data"]["annotations"] = [str(Path(p).resolve()) for p in (args.annotation or [])]
    if needs_data and not cfg["data"]["series"]:
        bundled = _bundled_dir()
        tiny = _absolute_paths(json.loads((bundled / "config.json").read_text(encoding="utf-8")), bundled)
        cfg = _merge(cfg, tiny) if not args.config else _merge(cfg, {"data": tiny["data"]})

    flags = {
        "seed": ("seed",),
        "standard": ("standard",),
        "window": ("window", "window_size"),
        "stride": ("window", "stride"),
        "attention": ("model", "attention_kind"),
        "pool_factor": ("model", "pool_factor"),
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "batch_size"),
        "lr": ("train", "initial_lr"),
    }
    for attr, keys in flags.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if attr == "attention" and value == "dot":
            value = "dot_product"
        node = cfg
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    if getattr(args, "no_lstm", False):
        cfg["model"]["use_lstm"] = False
    if getattr(args, "raw", False):
        cfg["data"]["unit"] = "concentration"
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict({**cfg["model"], "window_size": cfg["window"]["window_size"], "seed": cfg["seed"]})


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict({**cfg["train"], "seed": cfg["seed"]})


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _table(cfg: dict) -> aqi.BreakpointTable:
    return aqi.get_table(cfg["standard"], cfg.get("pollutant", "pm25"))


def _load_channels(cfg: dict):
    """Input series (IAQI unless raw) and polygonal targets for every channel."""
    data = cfg["data"]
    if len(data["series"]) != len(data["annotations"]):
        raise GreenEyesError("each series needs exactly one annotation file")
    table = _table(cfg)
    pairs = []
    for s_path, a_path in zip(data["series"], data["annotations"]):
        series = load_series_csv(s_path)
        if data.get("unit", "iaqi") == "iaqi":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", aqi.ClampWarning)
                series = series.to_iaqi(table)
        target = polygonalize(load_annotation(a_path, channel=series.channel), len(series))
        pairs.append((series, target))
    return pairs


def run_experiment(cfg: dict, out: Path) -> dict:
    """Train on all channels (fused), then evaluate stride 1 on each channel."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    spec = WindowSpec(cfg["window"]["window_size"], cfg["window"]["stride"])
    pairs = _load_channels(cfg)
    fused = fuse_channels([build_samples(s, t, spec) for s, t in pairs])
    tr, va = chronological_split(fused, cfg["data"]["train_fraction"], cfg["data"]["shuffle_split"], cfg["seed"])
    tr, (va,), stats = fit_and_apply_normalizer(tr, [va])
    model = init_params(model_config(cfg), cfg["seed"])
    model, report, _ = train(model, tr, va, train_config(cfg), out_dir=out)

    tests = {}
    for series, target in pairs:
        res = evaluate_full_sequence(model, series, target, out / f"predictions_{series.channel}.csv", stats)
        tests[series.channel] = res.metrics()
    test_mse = float(np.mean([m["mse"] for m in tests.values()]))
    test_mae = float(np.mean([m["mae"] for m in tests.values()]))
    result = {**report.summary(), "test": tests, "test_mse": test_mse, "test_mae": test_mae,
              "num_train": len(tr), "num_val": len(va), "num_parameters": model.num_parameters()}
    _write_json(out / "results.json", result)
    return result


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("GREENEYES_THREADS", "1")))
    except ValueError:
        return 1


def _run_many(jobs: list[tuple[dict, Path]]) -> list[dict]:
    workers = min(_workers(), len(jobs))
    if workers <= 1:
        return [run_experiment(c, o) for c, o in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_experiment, *zip(*jobs)))


# ---------------------------------------------------------------- commands


def cmd_iaqi(args, cfg, out: Path) -> None:
    table = _table(cfg)
    series = load_series_csv(args.input)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", aqi.ClampWarning)
        values = aqi.series_to_iaqi(series.values, table)
    clamped = int(np.sum(series.values > table.concentration[-1]))
    save_iaqi_csv(series, values, out / "iaqi.csv", table)
    _write_json(out / "summary.json", {"samples": len(series), "clamped": clamped,
                                       "warnings": [str(w.message) for w in caught]})


def cmd_label(args, cfg, out: Path) -> None:
    if args.length is None and args.input is None:
        raise GreenEyesError("label needs --length or --input")
    length = args.length if args.length is not None else len(load_series_csv(args.input))
    target = polygonalize(load_annotation(args.annotation), length)
    save_target_csv(target.values, out / "target.csv")
    _write_json(out / "segments.json", [
        {"start": s.start, "end": s.end, "slope": s.slope, "intercept": s.intercept} for s in target.segments
    ])


def cmd_dataset(args, cfg, out: Path) -> None:
    spec = WindowSpec(cfg["window"]["window_size"], cfg["window"]["stride"])
    series = load_series_csv(args.input)
    if cfg["data"]["unit"] == "iaqi":
        series = series.to_iaqi(_table(cfg))
    if args.target:
        target = load_target_csv(args.target)
    elif args.annotation:
        target = polygonalize(load_annotation(args.annotation[0]), len(series)).values
    else:
        raise GreenEyesError("dataset needs --target or --annotation")
    samples = build_samples(series, target, spec)
    export_sample_set(samples, out / "samples")


def cmd_train(args, cfg, out: Path) -> None:
    result = run_experiment(cfg, out)
    print(json.dumps({k: result[k] for k in ("best_train_mse", "best_val_mse", "ratio", "test_mse")}))


def cmd_eval(args, cfg, out: Path) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    series = load_series_csv(args.input)
    if cfg["data"]["unit"] == "iaqi":
        series = series.to_iaqi(_table(cfg))
    if args.target:
        target = load_target_csv(args.target)
    elif args.annotation:
        target = polygonalize(load_annotation(args.annotation[0]), len(series)).values
    else:
        raise GreenEyesError("eval needs --target or --annotation")
    res = evaluate_full_sequence(model, series, target, out / "predictions.csv", ckpt.norm_stats)
    _write_json(out / "metrics.json", res.metrics())
    print(json.dumps(res.metrics()))


def _identity_check(cfg: dict) -> bool:
    """Temporal attention with zeroed score weights equals no attention, bit for bit."""
    temporal = init_params(ModelConfig.from_dict({**model_config(cfg).to_dict(), "attention_kind": "temporal"}))
    plain = init_params(ModelConfig.from_dict({**model_config(cfg).to_dict(), "attention_kind": "none"}))
    temporal.params["attention.weight"][:] = 0.0
    temporal.params["attention.bias"][:] = 0.0
    rng = np.random.default_rng(cfg["seed"])
    x = rng.normal(size=(4, cfg["window"]["window_size"], cfg["model"].get("input_channels", 1)))
    return bool(np.array_equal(temporal.predict(x), plain.predict(x)))


ABLATION_COLUMNS = ["variant", "attention", "lstm", "min_train_mse", "min_val_mse", "ratio", "test_mse", "test_mae"]


def cmd_ablate(args, cfg, out: Path) -> None:
    jobs = []
    for name, override in ABLATIONS.items():
        jobs.append((_merge(cfg, {"model": override}), out / name))
    results = _run_many(jobs)
    rows = []
    for (name, override), res in zip(ABLATIONS.items(), results):
        rows.append({
            "variant": name,
            "attention": override["attention_kind"],
            "lstm": ("bi" if cfg["model"].get("bidirectional", True) else "uni") if override["use_lstm"] else "none",
            "min_train_mse": res["best_train_mse"],
            "min_val_mse": res["best_val_mse"],
            "ratio": res["ratio"],
            "test_mse": res["test_mse"],
            "test_mae": res["test_mae"],
        })
    _write_rows(out / "ablation.csv", ABLATION_COLUMNS, rows)
    _write_markdown(out / "ablation.md", ABLATION_COLUMNS, rows)
    _write_json(out / "identity_check.json", {"temporal_zero_equals_none": _identity_check(cfg)})


SWEEP_COLUMNS = ["window", "stride", "num_train", "min_train_mse", "min_val_mse", "ratio", "test_mse", "test_mae"]


def cmd_sweep(args, cfg, out: Path) -> None:
    jobs = []
    for window in cfg["sweep"]["windows"]:
        for stride in cfg["sweep"]["strides"]:
            jobs.append((_merge(cfg, {"window": {"window_size": window, "stride": stride}}), out / f"w{window}_s{stride}"))
    results = _run_many(jobs)
    rows = []
    for (c, _), res in zip(jobs, results):
        rows.append({
            "window": c["window"]["window_size"],
            "stride": c["window"]["stride"],
            "num_train": res["num_train"],
            "min_train_mse": res["best_train_mse"],
            "min_val_mse": res["best_val_mse"],
            "ratio": res["ratio"],
            "test_mse": res["test_mse"],
            "test_mae": res["test_mae"],
        })
    _write_rows(out / "sweep.csv", SWEEP_COLUMNS, rows)
    _write_markdown(out / "sweep.md", SWEEP_COLUMNS, rows)


def cmd_synth(args, cfg, out: Path) -> None:
    params = SynthParams(**cfg.get("synth", {}))
    for ch in range(args.channels):
        seed = cfg["seed"] + ch
        name = f"sensor{ch}"
        save_series_csv(synth_generate(seed, args.len, params, channel=name), out / f"{name}.csv")
        save_annotation(synth_annotation(seed, args.len, params, spacing=args.spacing), out / f"annotation{ch}.csv")


def _write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _write_markdown(path: Path, columns: list[str], rows: list[dict]) -> None:
    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(fmt(r[c]) for c in columns) + " |" for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--standard", choices=["usa", "china"])
    common.add_argument("--window", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--attention", choices=["temporal", "dot", "none"])
    common.add_argument("--no-lstm", action="store_true")
    common.add_argument("--pool-factor", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--raw", action="store_true", help="train on concentration instead of IAQI")
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(prog="greeneyes", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("iaqi", parents=[common], help="sensor CSV -> IAQI CSV with level column")
    p.add_argument("--input", required=True)

    p = sub.add_parser("label", parents=[common], help="annotation CSV -> polygonal target CSV")
    p.add_argument("--annotation", required=True)
    p.add_argument("--length", type=int)
    p.add_argument("--input", help="sensor CSV whose length sets the target length")

    p = sub.add_parser("dataset", parents=[common], help="series + target -> exported sample set")
    p.add_argument("--input", required=True)
    p.add_argument("--target")
    p.add_argument("--annotation", action="append")

    for name, helptext in (("train", "train a model"), ("ablate", "run the four ablation variants"),
                           ("sweep", "cross strides with window sizes")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--series", action="append", help="sensor CSV (repeatable)")
        p.add_argument("--annotation", action="append", help="annotation CSV, one per --series")

    p = sub.add_parser("eval", parents=[common], help="stride-1 evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target")
    p.add_argument("--annotation", action="append")

    p = sub.add_parser("synth", parents=[common], help="seeded synthetic sensor series")
    p.add_argument("--len", type=int, default=20000)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--spacing", type=int, default=600, help="anchor spacing of the synthetic annotation")
    return parser


COMMANDS = {
    "iaqi": (cmd_iaqi, False),
    "label": (cmd_label, False),
    "dataset": (cmd_dataset, False),
    "train": (cmd_train, True),
    "eval": (cmd_eval, False),
    "ablate": (cmd_ablate, True),
    "sweep": (cmd_sweep, True),
    "synth": (cmd_synth, False),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    func, needs_data = COMMANDS[args.command]
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = resolve_config(args, needs_data)
        cfg["command"] = args.command
        _write_json(out / "config.json", cfg)
        func(args, cfg, out)
    except (GreenEyesError, ValueError, OSError, ArithmeticError) as exc:
        try:
            _write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc),
                                              "traceback": traceback.format_exc()})
        except OSError:
            pass
        print(f"greeneyes {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    (out / "error.json").unlink(missing_ok=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
