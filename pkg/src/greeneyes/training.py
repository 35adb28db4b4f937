"""Training protocol: MSE loss, Adam with a step decay, checkpoints, evaluation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import NormStats, SampleSet, Series, WindowSpec, apply_normalizer, build_samples
from .errors import CheckpointError, NonFiniteError, ShapeError, TrainingError
from .nn import GreenEyesModel, ModelConfig, parameter_specs
from .targets import PolygonalTarget

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "greeneyes-checkpoint"
CHECKPOINT_VERSION = 1


# ----------------------------------------------------------------- metrics


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.size == 0 or target.size == 0:
        raise ValueError("metrics need at least one element")
    if pred.size != target.size:
        raise ShapeError(f"prediction length {pred.size} != target length {target.size}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


# --------------------------------------------------------------- optimiser


@dataclass
class TrainConfig:
    initial_lr: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 20
    lr_decay_repeat: bool = False
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        for name in ("initial_lr", "lr_decay_factor", "lr_decay_epoch", "epochs", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Initial rate, times the decay factor once ``lr_decay_epoch`` is reached.

    With ``lr_decay_repeat`` the factor is applied again every
    ``lr_decay_epoch`` epochs.
    """
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.lr_decay_repeat:
        return cfg.initial_lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_epoch)
    return cfg.initial_lr * cfg.lr_decay_factor if epoch >= cfg.lr_decay_epoch else cfg.initial_lr


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are not modified."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name}: shape {g.shape} != parameter {theta.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


# ------------------------------------------------------------------ report


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_mse: float
    train_mae: float
    val_mse: float
    val_mae: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    checkpoint_epochs: list[int] = field(default_factory=list)

    def _argmin(self, key: str) -> EpochRecord:
        if not self.records:
            raise ValueError("empty training report")
        return min(self.records, key=lambda r: getattr(r, key))

    @property
    def best_train_mse(self) -> float:
        return self._argmin("train_mse").train_mse

    @property
    def best_train_epoch(self) -> int:
        return self._argmin("train_mse").epoch

    @property
    def best_val_mse(self) -> float:
        return self._argmin("val_mse").val_mse

    @property
    def best_val_epoch(self) -> int:
        return self._argmin("val_mse").epoch

    @property
    def ratio(self) -> float:
        return generalization_ratio(self)

    def summary(self) -> dict:
        return {
            "epochs": len(self.records),
            "best_train_mse": self.best_train_mse,
            "best_train_epoch": self.best_train_epoch,
            "best_val_mse": self.best_val_mse,
            "best_val_epoch": self.best_val_epoch,
            "ratio": self.ratio if self.best_val_mse > 0 else None,
            "checkpoint_epochs": list(self.checkpoint_epochs),
        }

    def save(self, directory) -> None:
        """``report.jsonl`` + ``summary.json``; wall times go to ``timing.jsonl``.

        Timing is kept apart so the report itself is reproducible bit for bit.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "report.jsonl").open("w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")
        (directory / "summary.json").write_text(json.dumps(self.summary(), indent=1) + "\n", encoding="utf-8")
        with (directory / "timing.jsonl").open("w", encoding="utf-8") as fh:
            for r, wt in zip(self.records, self.wall_times):
                fh.write(json.dumps({"epoch": r.epoch, "wall_time": wt}) + "\n")

    @classmethod
    def load(cls, directory) -> TrainReport:
        directory = Path(directory)
        lines = (directory / "report.jsonl").read_text(encoding="utf-8").splitlines()
        records = [EpochRecord(**json.loads(line)) for line in lines if line.strip()]
        summary = json.loads((directory / "summary.json").read_text(encoding="utf-8"))
        return cls(records, [], summary.get("checkpoint_epochs", []))


def mse_ratio(min_train_mse: float, min_val_mse: float) -> float:
    if min_val_mse == 0:
        raise ZeroDivisionError("minimum validation MSE is zero")
    return min_train_mse / min_val_mse


def generalization_ratio(report: TrainReport) -> float:
    """Minimum train MSE over minimum validation MSE."""
    return mse_ratio(report.best_train_mse, report.best_val_mse)


# -------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    seed: int = 0
    epoch: int = -1
    norm_stats: NormStats | None = None
    optimizer: AdamState | None = None

    def model(self) -> GreenEyesModel:
        return GreenEyesModel(self.config, {k: v.copy() for k, v in self.params.items()})


def _blob(arrays: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    """Versioned ``manifest.json`` naming each parameter's shape and offset,
    with the values in one little-endian float64 blob ``params.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    for name, arr in ckpt.params.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "norm_stats": ckpt.norm_stats.to_dict() if ckpt.norm_stats is not None else None,
        "num_values": offset,
        "params": entries,
        "optimizer": None,
    }
    (directory / "params.bin").write_bytes(_blob(ckpt.params.values()))
    opt = ckpt.optimizer
    if opt is not None:
        manifest["optimizer"] = {"t": opt.t, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
        names = list(ckpt.params)
        (directory / "optimizer.bin").write_bytes(_blob([opt.m[n] for n in names] + [opt.v[n] for n in names]))
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory, config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; ``config`` (if given) must match every parameter shape."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"{directory}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{directory}: corrupt manifest ({exc})") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{directory}: not a greeneyes checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{directory}: version {manifest.get('version')} != supported {CHECKPOINT_VERSION}")

    raw = (directory / "params.bin").read_bytes() if (directory / "params.bin").exists() else b""
    if len(raw) != 8 * manifest["num_values"]:
        raise CheckpointError(f"{directory}: params.bin has {len(raw)} bytes, expected {8 * manifest['num_values']}")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    params = {}
    for e in manifest["params"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        params[e["name"]] = flat[e["offset"] : e["offset"] + size].reshape(e["shape"]).copy()

    saved_cfg = ModelConfig.from_dict(manifest["config"])
    cfg = config if config is not None else saved_cfg
    specs = parameter_specs(cfg)
    for name, spec in specs.items():
        if name not in params:
            raise CheckpointError(f"{directory}: parameter {name} missing for this config")
        if params[name].shape != spec.shape:
            raise CheckpointError(f"{directory}: parameter {name} has shape {params[name].shape}, config expects {spec.shape}")
    extra = set(params) - set(specs)
    if extra:
        raise CheckpointError(f"{directory}: parameters not in config: {sorted(extra)}")
    params = {name: params[name] for name in specs}

    optimizer = None
    if manifest.get("optimizer"):
        o = manifest["optimizer"]
        opt_raw = (directory / "optimizer.bin").read_bytes()
        n = manifest["num_values"]
        if len(opt_raw) != 16 * n:
            raise CheckpointError(f"{directory}: optimizer.bin is truncated")
        opt_flat = np.frombuffer(opt_raw, dtype="<f8").astype(np.float64)
        m, v = {}, {}
        for e in manifest["params"]:
            size = int(np.prod(e["shape"], dtype=np.int64))
            m[e["name"]] = opt_flat[e["offset"] : e["offset"] + size].reshape(e["shape"]).copy()
            v[e["name"]] = opt_flat[n + e["offset"] : n + e["offset"] + size].reshape(e["shape"]).copy()
        optimizer = AdamState(m, v, o["t"], o["beta1"], o["beta2"], o["eps"])

    norm = NormStats.from_dict(manifest["norm_stats"]) if manifest.get("norm_stats") else None
    return Checkpoint(cfg, params, manifest.get("seed", 0), manifest.get("epoch", -1), norm, optimizer)


# ------------------------------------------------------------------- train


def predict_set(model: GreenEyesModel, s: SampleSet, batch_size: int = 64) -> np.ndarray:
    out = []
    p = model.tensors()
    for i in range(0, len(s), batch_size):
        X, _ = s.take(np.arange(i, min(i + batch_size, len(s))))
        out.append(model.forward(X, p).data)
    return np.concatenate(out) if out else np.zeros(0)


BatchHook = Callable[[int, int, np.ndarray, np.ndarray, np.ndarray, float], None]


def train(
    model: GreenEyesModel,
    train_set: SampleSet,
    val_set: SampleSet,
    cfg: TrainConfig,
    out_dir=None,
    on_batch: BatchHook | None = None,
) -> tuple[GreenEyesModel, TrainReport, list[Path]]:
    """Minibatch MSE training with per-epoch metrics.

    A checkpoint is written under ``out_dir/checkpoints/epoch_NNN`` at each
    new best validation MSE. Batch order is a seeded permutation per epoch,
    so a run is fully determined by ``cfg.seed`` and the inputs.
    ``on_batch(epoch, batch, indices, predictions, targets, loss)`` is called
    before each update.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    mc = model.config
    if train_set.spec.window_size != mc.window_size or train_set.input_channels != mc.input_channels:
        raise ShapeError(
            f"sample windows ({train_set.spec.window_size}x{train_set.input_channels}) "
            f"do not match the model ({mc.window_size}x{mc.input_channels})"
        )
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(model.params)
    report = TrainReport()
    saved: list[Path] = []
    n = len(train_set)
    best_val = np.inf

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lr = lr_at_epoch(epoch, cfg)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        sse = sae = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            X, y = train_set.take(idx)
            try:
                loss, pred, grads = model.loss_and_grads(X, y)
                model.params, state = adam_step(model.params, grads, state, lr)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b} (samples {idx[:5].tolist()}...): {exc}") from exc
            diff = pred - y
            sse += float(np.sum(diff * diff))
            sae += float(np.sum(np.abs(diff)))
            if on_batch is not None:
                on_batch(epoch, b, idx, pred, y, loss)

        val_pred = predict_set(model, val_set, cfg.batch_size)
        val_y = val_set.targets
        rec = EpochRecord(epoch, lr, sse / n, sae / n, mse(val_pred, val_y), mae(val_pred, val_y))
        report.records.append(rec)
        report.wall_times.append(time.perf_counter() - started)
        log.info("epoch %d lr %.2g train_mse %.5f val_mse %.5f", epoch, lr, rec.train_mse, rec.val_mse)

        if rec.val_mse < best_val:
            best_val = rec.val_mse
            report.checkpoint_epochs.append(epoch)
            if out_dir is not None:
                ckpt = Checkpoint(mc, model.params, cfg.seed, epoch, train_set.norm_stats, state)
                saved.append(save_checkpoint(ckpt, Path(out_dir) / "checkpoints" / f"epoch_{epoch:03d}"))

    if out_dir is not None:
        ckpt = Checkpoint(mc, model.params, cfg.seed, cfg.epochs - 1, train_set.norm_stats, state)
        save_checkpoint(ckpt, Path(out_dir) / "checkpoints" / "last")
        report.save(out_dir)
    return model, report, saved


# ---------------------------------------------------------------- evaluate


@dataclass
class EvalResult:
    mse: float
    mae: float
    indices: np.ndarray
    predictions: np.ndarray
    targets: np.ndarray

    def metrics(self) -> dict:
        return {"mse": self.mse, "mae": self.mae, "count": int(len(self.indices))}


def evaluate_full_sequence(
    model: GreenEyesModel,
    input: Series | np.ndarray,
    target: PolygonalTarget | np.ndarray,
    out=None,
    norm_stats: NormStats | None = None,
    batch_size: int = 64,
) -> EvalResult:
    """Stride-1 pass over a whole series: one prediction per index >= window.

    ``out`` (a path) receives an ``index,prediction,target`` CSV.
    """
    W = model.config.window_size
    samples = build_samples(input, target, WindowSpec(W, 1))
    if norm_stats is not None:
        samples = apply_normalizer(samples, norm_stats)
    preds = predict_set(model, samples, batch_size)
    targets = samples.targets
    indices = samples.starts + W
    result = EvalResult(mse(preds, targets), mae(preds, targets), indices, preds, targets)
    if out is not None:
        with Path(out).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "prediction", "target"])
            for i, p, t in zip(indices, preds, targets):
                w.writerow([int(i), repr(float(p)), repr(float(t))])
    return result
