"""Offset codecs mapping a clip's boundaries to a matched target span.

Three schemes are supported:

* ``param`` -- center/length parameterization: ``o_x = (x_gt - x_clip) / l_clip``
  and ``o_l = ln(l_gt / l_clip)`` (natural log).
* ``frame`` -- direct boundary differences in frame coordinates.
* ``unit`` -- direct boundary differences in unit coordinates, with the
  target span first rounded onto the unit grid.

Boundary offsets follow the clip-minus-target sign convention:
``o_s = s_clip - s_gt`` and ``o_e = e_clip - e_gt``, so decoding
subtracts the predicted offsets from the clip's boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import CoordinateSystemError, DegenerateIntervalError
from .intervals import CoordSystem, Interval


class OffsetScheme(Enum):
    PARAMETERIZED = "param"
    BOUNDARY_FRAME = "frame"
    BOUNDARY_UNIT = "unit"


_REQUIRED_SYSTEM = {
    OffsetScheme.BOUNDARY_FRAME: CoordSystem.FRAMES,
    OffsetScheme.BOUNDARY_UNIT: CoordSystem.UNITS,
}


@dataclass(frozen=True)
class OffsetPair:
    """Two regression targets plus the scheme that gives them meaning.

    ``(o_x, o_l)`` under the parameterized scheme, ``(o_s, o_e)`` under
    either boundary scheme.
    """

    first: float
    second: float
    scheme: OffsetScheme


def encode_offsets(clip: Interval, gt: Interval, scheme: OffsetScheme) -> OffsetPair:
    """Compute the offsets that carry `clip` onto `gt` under `scheme`."""
    if clip.system is not gt.system:
        raise CoordinateSystemError(
            f"clip in {clip.system.value} but target in {gt.system.value}"
        )
    required = _REQUIRED_SYSTEM.get(scheme)
    if required is not None and clip.system is not required:
        raise CoordinateSystemError(
            f"{scheme.value} offsets require {required.value} coordinates, got {clip.system.value}"
        )
    if scheme is OffsetScheme.PARAMETERIZED:
        o_x = (gt.center - clip.center) / clip.length
        o_l = math.log(gt.length / clip.length)
        return OffsetPair(o_x, o_l, scheme)
    return OffsetPair(clip.start - gt.start, clip.end - gt.end, scheme)


def decode_offsets(clip: Interval, offsets: OffsetPair) -> Interval:
    """Invert :func:`encode_offsets`, applying predicted offsets to `clip`.

    The result is not clamped to the video; callers decide how to handle
    out-of-range boundaries. An empty, inverted, or non-finite result
    raises DegenerateIntervalError.
    """
    if offsets.scheme is OffsetScheme.PARAMETERIZED:
        x = clip.center + offsets.first * clip.length
        try:
            length = clip.length * math.exp(offsets.second)
        except OverflowError:
            raise DegenerateIntervalError(
                f"length offset {offsets.second} overflows the decoded length"
            ) from None
        s, e = x - length / 2.0, x + length / 2.0
    else:
        s = clip.start - offsets.first
        e = clip.end - offsets.second
    if not (math.isfinite(s) and math.isfinite(e)) or e <= s:
        raise DegenerateIntervalError(f"decoded interval [{s}, {e}) is not usable")
    return Interval(s, e, clip.system)
