"""Polygonal supervision targets from hand-labelled level anchors.

An annotation is a list of ``(index, level)`` anchors placed by a person
at the points where the stepped IAQI level should turn. Consecutive
anchors are joined by straight lines ``L(t) = k*t + b`` and the ends are
held constant, giving a continuous target with one value per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AnnotationError


@dataclass(frozen=True)
class Annotation:
    channel: str
    anchors: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "channel", str(self.channel))
        object.__setattr__(self, "anchors", tuple((int(t), float(l)) for t, l in self.anchors))

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.anchors], dtype=np.int64)

    @property
    def levels(self) -> np.ndarray:
        return np.array([l for _, l in self.anchors], dtype=np.float64)


@dataclass(frozen=True)
class Segment:
    slope: float
    intercept: float
    start: int
    end: int

    def __call__(self, t):
        return self.slope * np.asarray(t, dtype=np.float64) + self.intercept


@dataclass(frozen=True)
class PolygonalTarget:
    annotation: Annotation
    segments: tuple[Segment, ...]
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def validate_annotation(a: Annotation, series_len: int) -> Annotation:
    if not a.anchors:
        raise AnnotationError("annotation has no anchors")
    prev = None
    for i, (t, level) in enumerate(a.anchors):
        if not np.isfinite(level):
            raise AnnotationError(f"anchor {i}: level {level} is not finite", index=i)
        if t < 0 or t >= series_len:
            raise AnnotationError(f"anchor {i}: index {t} outside [0, {series_len})", index=i)
        if prev is not None:
            if t == prev:
                raise AnnotationError(f"anchor {i}: duplicate index {t}", index=i)
            if t < prev:
                raise AnnotationError(f"anchor {i}: index {t} is before {prev} (unsorted)", index=i)
        prev = t
    return a


def segment_slope(anchor: tuple[int, float], anchor_next: tuple[int, float]) -> float:
    (t0, l0), (t1, l1) = anchor, anchor_next
    if t1 <= t0:
        raise AnnotationError(f"segment needs increasing time, got {t0} -> {t1}")
    return (l1 - l0) / (t1 - t0)


def polygonalize(a: Annotation, series_len: int) -> PolygonalTarget:
    a = validate_annotation(a, series_len)
    values = np.empty(series_len, dtype=np.float64)
    t_first, l_first = a.anchors[0]
    t_last, l_last = a.anchors[-1]
    values[:t_first] = l_first
    values[t_last:] = l_last

    segments = []
    for (t0, l0), (t1, l1) in zip(a.anchors, a.anchors[1:]):
        k = segment_slope((t0, l0), (t1, l1))
        segments.append(Segment(k, l0 - k * t0, t0, t1))
        # anchored form keeps L(t0) == l0 exactly
        values[t0:t1] = l0 + k * np.arange(t1 - t0, dtype=np.float64)
        values[t1] = l1
    return PolygonalTarget(a, tuple(segments), values)


def anchors_from_target(target: PolygonalTarget) -> Annotation:
    """Re-read ``(t_i, L(t_i))`` at the original anchor positions."""
    t = target.annotation.times
    return Annotation(target.annotation.channel, tuple(zip(t.tolist(), target.values[t].tolist())))


# ------------------------------------------------------------------ files


def load_annotation(path, channel: str | None = None) -> Annotation:
    """Read an ``index,level`` CSV of anchors."""
    path = Path(path)
    anchors = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "level"]:
            raise AnnotationError(f"{path}: expected header 'index,level', got {header}")
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t_raw, l_raw = row
                t = int(t_raw)
                level = float(l_raw)
            except ValueError:
                raise AnnotationError(f"{path}: line {lineno}: malformed row {row}") from None
            anchors.append((t, level))
    return Annotation(channel if channel is not None else path.stem, tuple(anchors))


def save_annotation(a: Annotation, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "level"])
        for t, level in a.anchors:
            w.writerow([t, repr(level)])


def save_target_csv(values: Sequence[float], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "target"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])


def load_target_csv(path) -> np.ndarray:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "target"]:
            raise AnnotationError(f"{path}: expected header 'index,target', got {header}")
        values = []
        for lineno, row in enumerate(reader, 2):
            try:
                idx, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise AnnotationError(f"{path}: line {lineno}: malformed row {row}") from None
            if idx != len(values):
                raise AnnotationError(f"{path}: line {lineno}: expected index {len(values)}, got {idx}")
            values.append(v)
    return np.array(values, dtype=np.float64)
