"""Proposal-recall and detection-AP metrics.

All matching here is greedy and one-to-one: walking candidates in rank
order, each one claims the not-yet-matched annotation it overlaps best,
provided the overlap clears the tIoU threshold. Recall is
micro-averaged (matched annotations over all annotations, across
videos). Inputs are per-video lists keyed by video id, with intervals
in seconds so proposals and detections are compared against the
original annotations rather than their unit-grid projections.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .cascade import Detection
from .errors import UndefinedMetricError
from .intervals import VideoMeta, round_half_away, tiou
from .sampling import Annotation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    map_tious: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    ar_tiou: float = 0.5
    an_values: tuple[int, ...] = (10, 50, 100, 200)
    frequency: float = 1.0

    def __post_init__(self):
        if not self.map_tious or any(not 0.0 < t <= 1.0 for t in self.map_tious):
            raise ValueError(f"map_tious must be thresholds in (0, 1], got {self.map_tious}")
        if not 0.0 < self.ar_tiou <= 1.0:
            raise ValueError(f"ar_tiou must be in (0, 1], got {self.ar_tiou}")
        if not self.an_values or any(a < 1 for a in self.an_values):
            raise ValueError(f"an_values must be positive, got {self.an_values}")
        if self.frequency <= 0.0:
            raise ValueError(f"frequency must be > 0, got {self.frequency}")


def _ranked(detections: Sequence[Detection]) -> list[Detection]:
    return sorted(detections, key=lambda d: (-d.score, d.interval.start, d.interval.end, d.label))


def _greedy_match_count(
    proposals: Sequence[Detection], annotations: Sequence[Annotation], tiou_threshold: float
) -> int:
    """Count annotations claimed by proposals walked in rank order."""
    taken = [False] * len(annotations)
    matched = 0
    for p in proposals:
        best, best_key = -1, None
        for j, ann in enumerate(annotations):
            if taken[j]:
                continue
            ov = tiou(p.interval, ann.interval)
            if ov < tiou_threshold:
                continue
            key = (ov, -ann.interval.start, -j)
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best >= 0:
            taken[best] = True
            matched += 1
    return matched


def _recall_at_budget(
    proposals_by_video: Mapping[str, Sequence[Detection]],
    annotations_by_video: Mapping[str, Sequence[Annotation]],
    budget: Callable[[str], int],
    tiou_threshold: float,
) -> float:
    total = sum(len(v) for v in annotations_by_video.values())
    if total == 0:
        raise UndefinedMetricError("recall is undefined without annotations")
    matched = 0
    for vid, anns in annotations_by_video.items():
        if not anns:
            continue
        ranked = _ranked(proposals_by_video.get(vid, ()))[: max(budget(vid), 0)]
        matched += _greedy_match_count(ranked, anns, tiou_threshold)
    return matched / total


def average_recall_at_an(
    proposals_by_video: Mapping[str, Sequence[Detection]],
    annotations_by_video: Mapping[str, Sequence[Annotation]],
    an: int,
    tiou_threshold: float,
) -> float:
    """Recall when every video may keep its `an` best proposals."""
    return _recall_at_budget(proposals_by_video, annotations_by_video, lambda _: an, tiou_threshold)


def average_recall_at_f(
    proposals_by_video: Mapping[str, Sequence[Detection]],
    annotations_by_video: Mapping[str, Sequence[Annotation]],
    metas: Mapping[str, VideoMeta],
    frequency: float,
    tiou_threshold: float,
) -> float:
    """Recall at a per-video budget of `frequency` proposals per second.

    The budget is frequency x duration rounded half away from zero, so
    longer videos may keep more proposals.
    """

    def budget(vid: str) -> int:
        return int(round_half_away(frequency * metas[vid].duration_seconds))

    return _recall_at_budget(proposals_by_video, annotations_by_video, budget, tiou_threshold)


def _interpolated_ap(tp: np.ndarray, n_pos: int) -> float:
    """Area under the precision envelope over all recall points."""
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_pos
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def average_precision(
    detections_by_video: Mapping[str, Sequence[Detection]],
    annotations_by_video: Mapping[str, Sequence[Annotation]],
    label: int,
    tiou_threshold: float,
) -> float:
    """AP of one class: rank all its detections globally, match greedily
    within each video, and integrate the interpolated PR curve."""
    n_pos = sum(1 for anns in annotations_by_video.values() for a in anns if a.label == label)
    if n_pos == 0:
        raise UndefinedMetricError(f"AP for class {label} is undefined without annotations")
    pool = [
        (vid, d)
        for vid, dets in detections_by_video.items()
        for d in dets
        if d.label == label
    ]
    pool.sort(key=lambda r: (-r[1].score, r[0], r[1].interval.start, r[1].interval.end))
    if not pool:
        return 0.0
    taken = {
        vid: [False] * len(anns) for vid, anns in annotations_by_video.items()
    }
    tp = np.zeros(len(pool), dtype=bool)
    for i, (vid, det) in enumerate(pool):
        anns = annotations_by_video.get(vid, ())
        best, best_key = -1, None
        for j, ann in enumerate(anns):
            if ann.label != label or taken[vid][j]:
                continue
            ov = tiou(det.interval, ann.interval)
            if ov < tiou_threshold:
                continue
            key = (ov, -ann.interval.start, -j)
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best >= 0:
            taken[vid][best] = True
            tp[i] = True
    return _interpolated_ap(tp, n_pos)


def mean_average_precision(
    detections_by_video: Mapping[str, Sequence[Detection]],
    annotations_by_video: Mapping[str, Sequence[Annotation]],
    tiou_threshold: float,
) -> tuple[float, dict[int, float]]:
    """Mean AP over the classes that appear in the annotations.

    Returns (mAP, per-class AP). Detections whose label never occurs in
    the ground truth contribute to no class and are logged and skipped.
    """
    classes = sorted({a.label for anns in annotations_by_video.values() for a in anns})
    if not classes:
        raise UndefinedMetricError("mAP is undefined without annotations")
    stray = sorted(
        {d.label for dets in detections_by_video.values() for d in dets} - set(classes)
    )
    for label in stray:
        logger.info("label %d has no annotations; its detections are ignored", label)
    per_class = {
        label: average_precision(detections_by_video, annotations_by_video, label, tiou_threshold)
        for label in classes
    }
    return sum(per_class.values()) / len(per_class), per_class
