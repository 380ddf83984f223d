"""Unit-level feature tables: binary file I/O and context-aware clip pooling.

File format (little-endian, layout is normative):

    magic "CBRF" (4 bytes) | version u32 = 1 | num_units u32 | dim u32 |
    fps f32 | num_frames u32 | unit_frames u32 |
    payload: num_units x dim f32, row-major

The file carries no video id; the loader takes it from the file stem.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ClipBoundsError, CoordinateSystemError, FeatureDataError, FeatureFormatError
from .intervals import CoordSystem, Interval, VideoMeta

MAGIC = b"CBRF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIfII")


@dataclass
class UnitFeatureTable:
    """Immutable-by-convention matrix of per-unit feature rows plus metadata."""

    meta: VideoMeta
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype="<f4")
        if data.ndim != 2:
            raise FeatureFormatError(f"feature data must be 2-D, got shape {data.shape}")
        if data.shape[0] != self.meta.num_units:
            raise FeatureFormatError(
                f"feature rows ({data.shape[0]}) do not match num_units "
                f"({self.meta.num_units}) for video {self.meta.video_id!r}"
            )
        if not np.isfinite(data).all():
            raise FeatureDataError(f"non-finite feature values in video {self.meta.video_id!r}")
        self.data = data

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PoolingConfig:
    """Number of context units pooled on each side of a clip."""

    n_ctx: int = 4

    def __post_init__(self):
        if self.n_ctx < 0:
            raise ValueError(f"n_ctx must be >= 0, got {self.n_ctx}")


def save_feature_table(table: UnitFeatureTable, path: str | Path) -> None:
    meta = table.meta
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        meta.num_units,
        table.dim,
        meta.fps,
        meta.num_frames,
        meta.unit_frames,
    )
    payload = np.ascontiguousarray(table.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_feature_table(path: str | Path) -> UnitFeatureTable:
    """Load a feature table, validating the byte layout exactly.

    The video id is the file name without its extension.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, num_units, dim, fps, num_frames, unit_frames = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported format version {version}")
    if num_units < 1 or dim < 1:
        raise FeatureFormatError(f"{path}: invalid shape {num_units}x{dim}")
    try:
        meta = VideoMeta(path.stem, float(fps), num_frames, unit_frames)
    except ValueError as exc:
        raise FeatureFormatError(f"{path}: {exc}") from exc
    if meta.num_units != num_units:
        raise FeatureFormatError(
            f"{path}: header says {num_units} units but "
            f"{num_frames} frames / {unit_frames} per unit gives {meta.num_units}"
        )
    expected = _HEADER.size + num_units * dim * 4
    if len(raw) != expected:
        raise FeatureFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(num_units, dim)
    if not np.isfinite(data).all():
        raise FeatureDataError(f"{path}: payload contains non-finite values")
    return UnitFeatureTable(meta, data)


def pool_clip_feature(table: UnitFeatureTable, clip: Interval, cfg: PoolingConfig) -> np.ndarray:
    """Pool a clip into ``[pre-context || internal || post-context]``.

    Each segment is the arithmetic mean of its unit rows. Context ranges
    cover ``n_ctx`` units strictly before the clip start and strictly at
    or after its end, truncated at the video bounds; a fully empty
    context range contributes a zero vector. Output length is 3 x dim.
    """
    if clip.system is not CoordSystem.UNITS:
        raise CoordinateSystemError(f"pooling expects unit coordinates, got {clip.system.value}")
    if not (float(clip.start).is_integer() and float(clip.end).is_integer()):
        raise ValueError(f"clip bounds must be whole units, got [{clip.start}, {clip.end})")
    s, e = int(clip.start), int(clip.end)
    num_units = table.meta.num_units
    if s < 0 or e > num_units:
        raise ClipBoundsError(
            f"clip [{s}, {e}) outside video {table.meta.video_id!r} with {num_units} units"
        )

    def segment(lo: int, hi: int) -> np.ndarray:
        lo, hi = max(lo, 0), min(hi, num_units)
        if hi <= lo:
            return np.zeros(table.dim)
        return table.data[lo:hi].mean(axis=0, dtype=np.float64)

    return np.concatenate([segment(s - cfg.n_ctx, s), segment(s, e), segment(e, e + cfg.n_ctx)])
