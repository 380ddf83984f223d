"""Temporal intervals, coordinate conversions, and temporal IoU.

This is the shared vocabulary of the whole pipeline. Intervals are
half-open ``[start, end)``: adjacent spans share no content and lengths
are exact differences. The canonical in-memory coordinate system is unit
indices; frames and seconds appear only at I/O boundaries.

Real-valued coordinates meet the unit grid through a single rounding
rule, round-half-away-from-zero (:func:`round_half_away`), applied
everywhere a fractional coordinate must become a unit index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import CoordinateSystemError


class CoordSystem(Enum):
    UNITS = "units"
    FRAMES = "frames"
    SECONDS = "seconds"


@dataclass(frozen=True)
class Interval:
    """Half-open temporal span ``[start, end)`` tagged with its coordinate system.

    Windows, annotations, and detections additionally require
    ``start >= 0``; that is enforced where those objects are built, so
    that transient decode results may temporarily leave the video.
    """

    start: float
    end: float
    system: CoordSystem = CoordSystem.UNITS

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"interval bounds must be finite, got [{self.start}, {self.end})")
        if not self.start < self.end:
            raise ValueError(f"interval start must be < end, got [{self.start}, {self.end})")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass(frozen=True)
class VideoMeta:
    """Per-video timing metadata.

    `unit_frames` is the number of consecutive frames grouped into one
    feature unit; a trailing partial unit is dropped.
    """

    video_id: str
    fps: float
    num_frames: int
    unit_frames: int

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.unit_frames < 1:
            raise ValueError(f"unit_frames must be >= 1, got {self.unit_frames}")
        if self.num_frames < self.unit_frames:
            raise ValueError(
                f"video {self.video_id!r} has {self.num_frames} frames, "
                f"shorter than one unit of {self.unit_frames}"
            )

    @property
    def num_units(self) -> int:
        return self.num_frames // self.unit_frames

    @property
    def duration_seconds(self) -> float:
        return self.num_frames / self.fps


def tiou(a: Interval, b: Interval) -> float:
    """Temporal intersection-over-union of two intervals; 0 when disjoint."""
    if a.system is not b.system:
        raise CoordinateSystemError(
            f"cannot overlap intervals in {a.system.value} and {b.system.value}"
        )
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (a.length + b.length - inter)


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves going away from zero."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def seconds_to_frames(t: float, meta: VideoMeta) -> float:
    """Convert a time in seconds to a real-valued frame coordinate."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    return t * meta.fps


def frames_to_units(f: float, meta: VideoMeta) -> int:
    """Round a frame coordinate onto the unit grid, clamped to [0, num_units]."""
    if f < 0:
        raise ValueError(f"frame coordinate must be >= 0, got {f}")
    u = round_half_away(f / meta.unit_frames)
    return min(max(u, 0), meta.num_units)


def interval_to_units(iv: Interval, meta: VideoMeta) -> Interval:
    """Round an interval in frames or seconds onto the unit grid.

    Raises ValueError if both endpoints round to the same unit: a span
    shorter than half a unit cannot be represented on the grid.
    """
    fr = interval_to_frames(iv, meta)
    return Interval(frames_to_units(fr.start, meta), frames_to_units(fr.end, meta), CoordSystem.UNITS)


def interval_to_frames(iv: Interval, meta: VideoMeta) -> Interval:
    """Express an interval in real-valued frame coordinates (no rounding)."""
    if iv.system is CoordSystem.FRAMES:
        return iv
    if iv.system is CoordSystem.SECONDS:
        return Interval(seconds_to_frames(iv.start, meta), seconds_to_frames(iv.end, meta), CoordSystem.FRAMES)
    return Interval(iv.start * meta.unit_frames, iv.end * meta.unit_frames, CoordSystem.FRAMES)


def interval_units_to_seconds(iv: Interval, meta: VideoMeta) -> Interval:
    """Convert a unit-coordinate interval to seconds."""
    if iv.system is not CoordSystem.UNITS:
        raise CoordinateSystemError(f"expected units, got {iv.system.value}")
    scale = meta.unit_frames / meta.fps
    return Interval(iv.start * scale, iv.end * scale, CoordSystem.SECONDS)
