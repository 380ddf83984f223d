"""Sliding-window generation, training label assignment, and minibatch building.

A window is positive when it is the best-overlapping window for some
annotation (rule 1) or overlaps any annotation with tIoU above the
positive threshold (rule 2); it is background only when it overlaps
nothing at all. Windows in between are ambiguous and excluded from
training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import SamplingError
from .intervals import (
    CoordSystem,
    Interval,
    VideoMeta,
    interval_to_frames,
    round_half_away,
    tiou,
)
from .offsets import OffsetPair, OffsetScheme, encode_offsets


class Stage(Enum):
    PROPOSAL = "proposal"
    DETECTION = "detection"


@dataclass(frozen=True)
class WindowScale:
    """One sliding-window scale: window length and stride, both in frames."""

    length: int
    stride: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"window length must be >= 1, got {self.length}")
        if not 1 <= self.stride <= self.length:
            raise ValueError(
                f"stride must be in [1, length], got stride={self.stride} length={self.length}"
            )


@dataclass(frozen=True)
class Annotation:
    """A ground-truth action span with a 1-based class label."""

    interval: Interval
    label: int

    def __post_init__(self):
        if self.label < 1:
            raise ValueError(f"annotation label must be >= 1, got {self.label}")
        if self.interval.start < 0:
            raise ValueError(f"annotation start must be >= 0, got {self.interval.start}")


@dataclass(frozen=True)
class LabeledWindow:
    """A sliding window with its assigned class and regression target.

    label 0 means background; background windows carry no target and no
    matched annotation.
    """

    window: Interval
    label: int
    target: OffsetPair | None = None
    matched_gt: Annotation | None = None

    def __post_init__(self):
        if (self.label == 0) != (self.target is None) or (self.label == 0) != (self.matched_gt is None):
            raise ValueError("background iff no target and no matched annotation")


def generate_windows(meta: VideoMeta, scales: list[WindowScale]) -> list[Interval]:
    """Enumerate multi-scale sliding windows on the unit grid.

    Scale lengths and strides must be whole multiples of the unit size.
    Duplicates arising from coinciding scales are dropped; order is by
    scale, then start.
    """
    if not scales:
        raise ValueError("at least one window scale is required")
    out: list[Interval] = []
    seen: set[tuple[int, int]] = set()
    for scale in scales:
        if scale.length % meta.unit_frames != 0:
            raise ValueError(
                f"window length {scale.length} is not a multiple of unit size {meta.unit_frames}"
            )
        if scale.stride % meta.unit_frames != 0:
            raise ValueError(
                f"window stride {scale.stride} is not a multiple of unit size {meta.unit_frames}"
            )
        length_u = scale.length // meta.unit_frames
        stride_u = scale.stride // meta.unit_frames
        start = 0
        while start + length_u <= meta.num_units:
            key = (start, start + length_u)
            if key not in seen:
                seen.add(key)
                out.append(Interval(start, start + length_u, CoordSystem.UNITS))
            start += stride_u
    return out


def _annotation_views(annotations, meta):
    """Per-annotation intervals in the three forms targets may need."""
    units, frames, cont = [], [], []
    for ann in annotations:
        fr = interval_to_frames(ann.interval, meta)
        u_s = min(max(round_half_away(fr.start / meta.unit_frames), 0), meta.num_units)
        u_e = min(max(round_half_away(fr.end / meta.unit_frames), 0), meta.num_units)
        if u_e <= u_s:
            raise ValueError(
                f"annotation [{ann.interval.start}, {ann.interval.end}) "
                f"{ann.interval.system.value} collapses on the unit grid"
            )
        units.append(Interval(u_s, u_e, CoordSystem.UNITS))
        frames.append(fr)
        cont.append(Interval(fr.start / meta.unit_frames, fr.end / meta.unit_frames, CoordSystem.UNITS))
    return units, frames, cont


def _target_for(window, j, scheme, units, frames, cont, meta):
    if scheme is OffsetScheme.BOUNDARY_UNIT:
        return encode_offsets(window, units[j], scheme)
    if scheme is OffsetScheme.BOUNDARY_FRAME:
        win_frames = Interval(
            window.start * meta.unit_frames, window.end * meta.unit_frames, CoordSystem.FRAMES
        )
        return encode_offsets(win_frames, frames[j], scheme)
    return encode_offsets(window, cont[j], scheme)


def assign_labels(
    windows: list[Interval],
    annotations: list[Annotation],
    meta: VideoMeta,
    scheme: OffsetScheme = OffsetScheme.BOUNDARY_UNIT,
    pos_tiou: float = 0.5,
) -> list[LabeledWindow]:
    """Label windows against annotations and attach regression targets.

    Windows must be on the unit grid. Annotations may arrive in seconds
    (the ingest form; sub-unit precision is kept for frame-level and
    parameterized targets) or already in units. Matching always happens
    on the unit grid. Ambiguous windows (overlapping but neither rule
    applies) are excluded from the result.
    """
    units, frames, cont = _annotation_views(annotations, meta)
    n_w, n_a = len(windows), len(annotations)
    m = np.zeros((n_w, n_a))
    for i, w in enumerate(windows):
        for j in range(n_a):
            m[i, j] = tiou(w, units[j])

    forced = set()
    for j in range(n_a):
        col = m[:, j]
        best = col.max() if n_w else 0.0
        if best <= 0.0:
            continue
        candidates = np.flatnonzero(col == best)
        # deterministic tie-break: earliest start, then shortest, then input order
        winner = min(candidates, key=lambda i: (windows[i].start, windows[i].length, i))
        forced.add(int(winner))

    out: list[LabeledWindow] = []
    for i, w in enumerate(windows):
        row = m[i] if n_a else np.zeros(0)
        best = row.max() if n_a else 0.0
        if best > pos_tiou or i in forced:
            candidates = np.flatnonzero(row == best)
            j = int(min(candidates, key=lambda j: (units[j].start, j)))
            target = _target_for(w, j, scheme, units, frames, cont, meta)
            out.append(LabeledWindow(w, annotations[j].label, target, annotations[j]))
        elif best == 0.0:
            out.append(LabeledWindow(w, 0))
    return out


@dataclass(frozen=True)
class Minibatch:
    """Indices into the window pool plus aligned labels and targets.

    Background rows of `targets` are zero and must be masked by
    ``labels > 0`` before use.
    """

    indices: np.ndarray
    labels: np.ndarray
    targets: np.ndarray


def build_minibatch(
    pool: list[LabeledWindow],
    stage: Stage,
    batch_size: int,
    rng: np.random.Generator,
    n_classes: int | None = None,
    bg_ratio: float = 10.0,
) -> Minibatch:
    """Draw a class-balanced minibatch from the labeled-window pool.

    Proposal batches hold bg_ratio background windows per positive
    (positive count = round(batch_size / (bg_ratio + 1))). Detection
    batches hold round(batch_size / (n_classes + 1)) background windows,
    the average per-class positive count. Strata are sampled without
    replacement, falling back to replacement once exhausted. Proposal
    labels are binarized to {0, 1}.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    pos_idx = np.array([i for i, w in enumerate(pool) if w.label > 0], dtype=np.int64)
    bg_idx = np.array([i for i, w in enumerate(pool) if w.label == 0], dtype=np.int64)
    if len(pos_idx) == 0:
        raise SamplingError("positive stratum is empty")
    if len(bg_idx) == 0:
        raise SamplingError("background stratum is empty")

    if stage is Stage.PROPOSAL:
        n_pos = round_half_away(batch_size / (bg_ratio + 1.0))
    else:
        if n_classes is None or n_classes < 1:
            raise ValueError("detection minibatches need n_classes >= 1")
        n_pos = batch_size - round_half_away(batch_size / (n_classes + 1.0))
    n_pos = min(max(n_pos, 1), batch_size - 1)
    n_bg = batch_size - n_pos

    def draw(stratum: np.ndarray, k: int) -> np.ndarray:
        return rng.choice(stratum, size=k, replace=len(stratum) < k)

    chosen = np.concatenate([draw(bg_idx, n_bg), draw(pos_idx, n_pos)])
    chosen = chosen[rng.permutation(len(chosen))]

    labels = np.array([pool[i].label for i in chosen], dtype=np.int64)
    if stage is Stage.PROPOSAL:
        labels = (labels > 0).astype(np.int64)
    targets = np.zeros((batch_size, 2))
    for row, i in enumerate(chosen):
        t = pool[i].target
        if t is not None:
            targets[row] = (t.first, t.second)
    return Minibatch(chosen, labels, targets)
