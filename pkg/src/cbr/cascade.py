"""Cascaded boundary refinement, classification, and NMS.

Each cascade step re-pools the feature of the current clip (boundaries
rounded to whole units for pooling), runs the stage network, multiplies
the running score by the step's class probability, and moves the
boundaries by the decoded offsets. Boundaries are tracked as real-valued
unit coordinates between steps; a clip whose rounded form collapses, or
whose refined form leaves the video or degenerates, is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateIntervalError
from .features import PoolingConfig, UnitFeatureTable, pool_clip_feature
from .intervals import CoordSystem, Interval, VideoMeta, round_half_away, tiou
from .network import StageModel, forward
from .offsets import OffsetPair, OffsetScheme, decode_offsets
from .sampling import Stage


@dataclass(frozen=True)
class CascadeConfig:
    k_proposal: int = 3
    k_detection: int = 2
    theta: float = 0.1
    nms_tiou: float = 0.5
    zero_offsets: bool = False

    def __post_init__(self):
        if self.k_proposal < 1 or self.k_detection < 1:
            raise ValueError("cascade step counts must be >= 1")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must be in [0, 1), got {self.theta}")
        if not 0.0 <= self.nms_tiou <= 1.0:
            raise ValueError(f"nms_tiou must be in [0, 1], got {self.nms_tiou}")


@dataclass(frozen=True)
class Detection:
    """A scored clip; label 0 marks a class-agnostic proposal."""

    interval: Interval
    label: int
    score: float

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")
        if not np.isfinite(self.score) or not 0.0 < self.score <= 1.0:
            raise ValueError(f"score must be in (0, 1], got {self.score}")


def _rounded_clip(s: float, e: float, num_units: int) -> Interval | None:
    """Snap real-valued unit bounds to the unit grid, or None if collapsed."""
    rs, re = round_half_away(s), round_half_away(e)
    if re <= rs or rs < 0 or re > num_units:
        return None
    return Interval(float(rs), float(re), CoordSystem.UNITS)


def _apply_offsets(
    clip: Interval, o1: float, o2: float, scheme: OffsetScheme, meta: VideoMeta
) -> tuple[float, float] | None:
    """Decode one predicted offset pair against a rounded clip, in units.

    Returns None when the decoded interval is degenerate or non-finite.
    The frame-level scheme round-trips through frame coordinates.
    """
    try:
        if scheme is OffsetScheme.BOUNDARY_FRAME:
            frame_clip = Interval(
                clip.start * meta.unit_frames, clip.end * meta.unit_frames, CoordSystem.FRAMES
            )
            g = decode_offsets(frame_clip, OffsetPair(o1, o2, scheme))
            s, e = g.start / meta.unit_frames, g.end / meta.unit_frames
        else:
            g = decode_offsets(clip, OffsetPair(o1, o2, scheme))
            s, e = g.start, g.end
    except DegenerateIntervalError:
        return None
    s = max(s, 0.0)
    e = min(e, float(meta.num_units))
    if not (np.isfinite(s) and np.isfinite(e)) or e <= s:
        return None
    return s, e


def _cascade(
    table: UnitFeatureTable,
    starts: list[float],
    ends: list[float],
    model: StageModel,
    steps: int,
    cfg: CascadeConfig,
    pooling: PoolingConfig,
    classify: bool,
):
    """Shared refinement loop for both stages.

    Returns parallel lists (start, end, score, label, per-step probs)
    for the clips that survive every step. For the proposal stage
    (``classify=False``) the step probability is the actionness p(1) and
    labels stay 0; for the detection stage it is the probability of the
    step's best non-background class, and the label is the last step's
    choice, with clips whose final argmax is background dropped.
    """
    meta = table.meta
    n = len(starts)
    s = list(starts)
    e = list(ends)
    score = [1.0] * n
    label = [0] * n
    alive = [True] * n
    probs_hist: list[list[float]] = [[] for _ in range(n)]

    for step in range(steps):
        idx = [i for i in range(n) if alive[i]]
        clips: list[Interval] = []
        kept_idx: list[int] = []
        for i in idx:
            clip = _rounded_clip(s[i], e[i], meta.num_units)
            if clip is None:
                alive[i] = False
                continue
            clips.append(clip)
            kept_idx.append(i)
        if not kept_idx:
            break
        x = np.stack([pool_clip_feature(table, c, pooling) for c in clips])
        out = forward(model.params, model.shape, x)
        last_step = step == steps - 1
        for row, i in enumerate(kept_idx):
            p = out.probs[row]
            if classify:
                z = int(np.argmax(p[1:])) + 1
                if last_step and int(np.argmax(p)) == 0:
                    alive[i] = False
                    continue
                label[i] = z
            else:
                z = 1
            score[i] *= float(p[z])
            probs_hist[i].append(float(p[z]))
            if cfg.zero_offsets:
                continue
            o1, o2 = float(out.offsets[row, z - 1, 0]), float(out.offsets[row, z - 1, 1])
            moved = _apply_offsets(clips[row], o1, o2, model.scheme, meta)
            if moved is None:
                alive[i] = False
                continue
            s[i], e[i] = moved

    return [
        (s[i], e[i], score[i], label[i], tuple(probs_hist[i])) for i in range(n) if alive[i]
    ]


def _to_detections(survivors, min_score: float):
    rows = [
        (Detection(Interval(s, e, CoordSystem.UNITS), z, p), trace)
        for s, e, p, z, trace in survivors
        if p > min_score
    ]
    rows.sort(key=lambda r: (-r[0].score, r[0].interval.start, r[0].interval.end, r[0].label))
    return [r[0] for r in rows], [r[1] for r in rows]


def refine_proposals(
    table: UnitFeatureTable,
    windows: list[Interval],
    model: StageModel,
    cfg: CascadeConfig,
    pooling: PoolingConfig,
    collect_trace: bool = False,
):
    """Run the proposal cascade over candidate windows of one video.

    Scores are products of the per-step actionness probabilities;
    proposals scoring <= theta are discarded. Results are sorted by
    descending score. With ``collect_trace`` a parallel list of per-step
    probability tuples is returned alongside the proposals.
    """
    if model.shape.stage is not Stage.PROPOSAL:
        raise ValueError("refine_proposals needs a proposal-stage model")
    survivors = _cascade(
        table,
        [w.start for w in windows],
        [w.end for w in windows],
        model,
        cfg.k_proposal,
        cfg,
        pooling,
        classify=False,
    )
    dets, traces = _to_detections(survivors, cfg.theta)
    return (dets, traces) if collect_trace else dets


def detect(
    table: UnitFeatureTable,
    proposals: list[Detection],
    model: StageModel,
    cfg: CascadeConfig,
    pooling: PoolingConfig,
    collect_trace: bool = False,
):
    """Classify and refine stage-one proposals into labeled detections.

    Scores restart at 1 (proposal scores only gate what enters this
    stage); each step multiplies in the probability of its best
    non-background class and follows that class's offsets. Clips the
    final step assigns to background are dropped.
    """
    if model.shape.stage is not Stage.DETECTION:
        raise ValueError("detect needs a detection-stage model")
    survivors = _cascade(
        table,
        [d.interval.start for d in proposals],
        [d.interval.end for d in proposals],
        model,
        cfg.k_detection,
        cfg,
        pooling,
        classify=True,
    )
    dets, traces = _to_detections(survivors, 0.0)
    return (dets, traces) if collect_trace else dets


def nms(detections: list[Detection], tiou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression; keeps a detection iff its tIoU
    with every already-kept one is <= the threshold. Idempotent."""
    order = sorted(
        detections, key=lambda d: (-d.score, d.interval.start, d.interval.end, d.label)
    )
    kept: list[Detection] = []
    for d in order:
        if all(tiou(d.interval, k.interval) <= tiou_threshold for k in kept):
            kept.append(d)
    return kept
