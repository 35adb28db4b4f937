"""Sensor series ingestion and windowed sequence-to-point sample sets.

A :class:`SampleSet` does not copy windows up front. It keeps the source
series and a start index per sample, and slices windows on demand; sample
``j`` reads ``input[s_j : s_j + window]`` and targets ``target[s_j + window]``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .aqi import USA_PM25, BreakpointTable, levels_from_iaqi, series_to_iaqi
from .errors import IngestError, ShapeError
from .targets import Annotation, PolygonalTarget

UNITS = ("concentration", "iaqi")
EXPORT_VERSION = 1


@dataclass(frozen=True)
class Series:
    channel: str
    values: np.ndarray
    unit: str = "concentration"
    start_timestamp: int = 0
    sample_rate: float = 1.0

    def __post_init__(self):
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}, got {self.unit!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ShapeError("series values must be one-dimensional")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel", str(self.channel))

    def __len__(self):
        return len(self.values)

    def to_iaqi(self, table: BreakpointTable = USA_PM25) -> Series:
        if self.unit == "iaqi":
            return self
        return replace(self, values=series_to_iaqi(self.values, table), unit="iaqi")


@dataclass(frozen=True)
class WindowSpec:
    window_size: int = 7200
    stride: int = 10
    horizon: int = 1

    def __post_init__(self):
        if self.window_size < 1 or self.stride < 1:
            raise ValueError("window_size and stride must be >= 1")
        if self.horizon != 1:
            raise ValueError("only horizon 1 (next time frame) is supported")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # per input channel
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class SampleSet:
    spec: WindowSpec
    sources: tuple[np.ndarray, ...]  # per source: (length, channels) inputs
    source_targets: tuple[np.ndarray, ...]  # per source: (length,) targets
    channels: tuple[str, ...]
    source_index: np.ndarray  # (n,) which source each sample reads
    starts: np.ndarray  # (n,) window start index in that source
    norm_stats: NormStats | None = None

    def __len__(self):
        return len(self.starts)

    @property
    def input_channels(self) -> int:
        return self.sources[0].shape[1]

    @property
    def provenance(self) -> list[tuple[str, int]]:
        return [(self.channels[s], int(t)) for s, t in zip(self.source_index, self.starts)]

    def take(self, indices: Sequence[int] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Materialise ``(inputs, targets)`` for the given sample indices."""
        indices = np.asarray(indices, dtype=np.int64)
        W = self.spec.window_size
        X = np.empty((len(indices), W, self.input_channels))
        y = np.empty(len(indices))
        offsets = np.arange(W)
        src_of = self.source_index[indices]
        for s in np.unique(src_of):
            rows = np.flatnonzero(src_of == s)
            starts = self.starts[indices[rows]]
            X[rows] = self.sources[s][starts[:, None] + offsets]
            y[rows] = self.source_targets[s][starts + W]
        return X, y

    @property
    def inputs(self) -> np.ndarray:
        return self.take(np.arange(len(self)))[0]

    @property
    def targets(self) -> np.ndarray:
        W = self.spec.window_size
        out = np.empty(len(self))
        for s, tgt in enumerate(self.source_targets):
            rows = self.source_index == s
            out[rows] = tgt[self.starts[rows] + W]
        return out

    def subset(self, indices) -> SampleSet:
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, source_index=self.source_index[indices], starts=self.starts[indices])


def count_samples(length: int, window_size: int, stride: int) -> int:
    if length < window_size + 1:
        return 0
    return (length - window_size - 1) // stride + 1


def _values(x) -> np.ndarray:
    if isinstance(x, Series):
        return x.values
    if isinstance(x, PolygonalTarget):
        return x.values
    return np.asarray(x, dtype=np.float64)


def build_samples(input, target, spec: WindowSpec, channel: str | None = None) -> SampleSet:
    """Windows at starts 0, stride, 2*stride, ... while start + window <= len - 1."""
    x = _values(input)
    y = _values(target)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) != len(y):
        raise ShapeError(f"input length {len(x)} != target length {len(y)}")
    if len(x) < spec.window_size + 1:
        raise ShapeError(f"series of length {len(x)} is shorter than window_size + 1 = {spec.window_size + 1}")
    if channel is None:
        channel = input.channel if isinstance(input, Series) else "0"
    starts = np.arange(0, len(x) - spec.window_size, spec.stride, dtype=np.int64)
    return SampleSet(
        spec,
        (np.ascontiguousarray(x, dtype=np.float64),),
        (np.asarray(y, dtype=np.float64),),
        (str(channel),),
        np.zeros(len(starts), dtype=np.int64),
        starts,
    )


def chronological_split(
    s: SampleSet, train_fraction: float = 0.8, shuffle: bool = False, seed: int = 0
) -> tuple[SampleSet, SampleSet]:
    """First ceil(fraction * n) samples by start index train, the rest validate.

    With ``shuffle=True`` the order is a seeded permutation instead.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(s)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    else:
        order = np.lexsort((s.source_index, s.starts))
    n_train = math.ceil(round(train_fraction * n, 9))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} samples at {train_fraction} leaves one side empty")
    return s.subset(order[:n_train]), s.subset(order[n_train:])


def fuse_channels(sets: Sequence[SampleSet]) -> SampleSet:
    """Pool samples from several channels into one set (not channel stacking)."""
    if not sets:
        raise ValueError("nothing to fuse")
    spec = sets[0].spec
    for s in sets[1:]:
        if s.spec != spec:
            raise ShapeError(f"cannot fuse sets with window specs {spec} and {s.spec}")
    if any(s.norm_stats is not None for s in sets):
        raise ValueError("fuse before normalising")
    if len(sets) == 1:
        return sets[0]
    sources, targets, channels, src_idx, starts = [], [], [], [], []
    for s in sets:
        base = len(sources)
        sources += s.sources
        targets += s.source_targets
        channels += s.channels
        src_idx.append(s.source_index + base)
        starts.append(s.starts)
    return SampleSet(spec, tuple(sources), tuple(targets), tuple(channels), np.concatenate(src_idx), np.concatenate(starts))


def _coverage(s: SampleSet, source: int) -> np.ndarray:
    # how many windows of ``s`` read each position of one source
    length = len(s.sources[source])
    diff = np.zeros(length + 1)
    starts = s.starts[s.source_index == source]
    np.add.at(diff, starts, 1.0)
    np.add.at(diff, starts + s.spec.window_size, -1.0)
    return np.cumsum(diff[:-1])


def fit_normalizer(train: SampleSet) -> NormStats:
    """Per-channel mean/std over the materialised training windows."""
    if len(train) == 0:
        raise ValueError("cannot fit a normaliser on an empty set")
    weights = [_coverage(train, i) for i in range(len(train.sources))]
    total = sum(w.sum() for w in weights)
    mean = sum((w[:, None] * src).sum(axis=0) for w, src in zip(weights, train.sources)) / total
    var = sum((w[:, None] * (src - mean) ** 2).sum(axis=0) for w, src in zip(weights, train.sources)) / total
    std = np.sqrt(var)
    if np.any(std <= 0):
        raise ValueError(f"zero-variance input channel(s): {np.flatnonzero(std <= 0).tolist()}")
    return NormStats(mean, std)


def apply_normalizer(s: SampleSet, stats: NormStats) -> SampleSet:
    if s.norm_stats is not None:
        raise ValueError("sample set is already normalised")
    sources = tuple(stats.apply(src) for src in s.sources)
    return replace(s, sources=sources, norm_stats=stats)


def fit_and_apply_normalizer(train: SampleSet, others: Sequence[SampleSet] = ()) -> tuple[SampleSet, list[SampleSet], NormStats]:
    """Z-score inputs with training statistics only; targets are left as is."""
    stats = fit_normalizer(train)
    return apply_normalizer(train, stats), [apply_normalizer(o, stats) for o in others], stats


# ------------------------------------------------------------- sensor CSV


def load_series_csv(path, unit: str = "concentration", channel: str | None = None) -> Series:
    """Read a ``timestamp,pm25`` file sampled at exactly 1 Hz."""
    path = Path(path)
    stamps, values = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "pm25"]:
            raise IngestError(f"{path}: expected header 'timestamp,pm25', got {header}", line=1)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                ts_raw, v_raw = row
                ts = int(ts_raw)
                v = float(v_raw)
            except ValueError:
                raise IngestError(f"{path}: malformed row {row}", line=lineno) from None
            if not math.isfinite(v):
                raise IngestError(f"{path}: non-finite value {v_raw!r}", line=lineno)
            if v < 0:
                raise IngestError(f"{path}: negative concentration {v_raw}", line=lineno)
            if stamps:
                step = ts - stamps[-1]
                if step == 0:
                    raise IngestError(f"{path}: duplicate timestamp {ts}", line=lineno)
                if step != 1:
                    raise IngestError(f"{path}: timestamp gap {stamps[-1]} -> {ts}", line=lineno)
            stamps.append(ts)
            values.append(v)
    if not values:
        raise IngestError(f"{path}: no data rows")
    return Series(channel if channel is not None else path.stem, np.array(values), unit, stamps[0])


def save_series_csv(series: Series, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "pm25"])
        for i, v in enumerate(series.values):
            w.writerow([series.start_timestamp + i, repr(float(v))])


def save_iaqi_csv(series: Series, iaqi: np.ndarray, path, table: BreakpointTable = USA_PM25) -> None:
    levels = levels_from_iaqi(iaqi, table)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "pm25", "iaqi", "level"])
        for i, (c, v, lv) in enumerate(zip(series.values, iaqi, levels)):
            w.writerow([series.start_timestamp + i, repr(float(c)), repr(float(v)), int(lv)])


# -------------------------------------------------------------- export


def export_sample_set(s: SampleSet, directory) -> Path:
    """Write ``manifest.json`` plus little-endian float64 ``inputs.bin``/``targets.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    X, y = s.take(np.arange(len(s)))
    X.astype("<f8").tofile(directory / "inputs.bin")
    y.astype("<f8").tofile(directory / "targets.bin")
    manifest = {
        "format_version": EXPORT_VERSION,
        "window_size": s.spec.window_size,
        "stride": s.spec.stride,
        "horizon": s.spec.horizon,
        "num_samples": len(s),
        "input_channels": s.input_channels,
        "provenance": [[c, t] for c, t in s.provenance],
        "norm_stats": s.norm_stats.to_dict() if s.norm_stats is not None else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return directory


def load_exported(directory) -> tuple[dict, np.ndarray, np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != EXPORT_VERSION:
        raise IngestError(f"{directory}: unsupported sample set version {manifest.get('format_version')}")
    n, W, C = manifest["num_samples"], manifest["window_size"], manifest["input_channels"]
    X = np.fromfile(directory / "inputs.bin", dtype="<f8")
    y = np.fromfile(directory / "targets.bin", dtype="<f8")
    if X.size != n * W * C or y.size != n:
        raise IngestError(f"{directory}: blob sizes do not match the manifest")
    return manifest, X.reshape(n, W, C), y


# ------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthParams:
    base: float = 20.0
    amplitudes: tuple[float, ...] = (8.0, 4.0)
    periods: tuple[float, ...] = (3600.0, 600.0)
    noise_std: float = 1.5
    level_shift_rate: float = 1.0 / 2000.0
    level_shift_scale: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if len(self.amplitudes) != len(self.periods):
            raise ValueError("amplitudes and periods must have equal length")


def synth_components(seed: int, length: int, params: SynthParams = SynthParams()) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free signal and the additive noise that :func:`synth_generate` sums."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    clean = np.full(length, float(params.base))
    phases = rng.uniform(0.0, 2.0 * np.pi, len(params.amplitudes))
    for a, p, ph in zip(params.amplitudes, params.periods, phases):
        clean += a * np.sin(2.0 * np.pi * t / p + ph)
    jumps = rng.random(length) < params.level_shift_rate
    shifts = np.where(jumps, rng.normal(0.0, params.level_shift_scale, length), 0.0)
    clean += np.cumsum(shifts)
    noise = rng.normal(0.0, params.noise_std, length) if params.noise_std > 0 else np.zeros(length)
    return clean, noise


def synth_generate(seed: int, length: int, params: SynthParams = SynthParams(), channel: str = "synth") -> Series:
    """Seeded PM2.5-like concentration series: sinusoids + noise + level shifts, floored at 0."""
    clean, noise = synth_components(seed, length, params)
    return Series(channel, np.maximum(clean + noise, 0.0), "concentration", 0)


def synth_annotation(
    seed: int,
    length: int,
    params: SynthParams = SynthParams(),
    spacing: int = 200,
    table: BreakpointTable = USA_PM25,
    channel: str = "synth",
) -> Annotation:
    """Stand-in for hand labels on synthetic data.

    Anchors every ``spacing`` samples (plus the last index) at the IAQI
    level of the noise-free signal. Real recordings are labelled by hand.
    """
    clean, _ = synth_components(seed, length, params)
    iaqi = series_to_iaqi(np.maximum(clean, 0.0), table)
    idx = np.unique(np.r_[np.arange(0, length, spacing), length - 1])
    levels = levels_from_iaqi(iaqi[idx], table)
    return Annotation(channel, tuple(zip(idx.tolist(), levels.astype(float).tolist())))
