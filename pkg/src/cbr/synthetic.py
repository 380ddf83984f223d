"""Synthetic unit-feature datasets with planted action instances.

Feature rows are Gaussian noise; rows covered by an instance get a
fixed per-class prototype vector added, so class identity and extent
are recoverable but not trivial. Instances live on the unit grid and
never touch (at least one background unit between them); annotations
are exported in seconds, as a real annotation source would provide.

Determinism: one generator seeded from the SynthSpec drives all
per-video draws in a fixed order, and each class prototype comes from
its own spawned seed, so prototypes do not shift when the video layout
changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import GenerationError
from .features import UnitFeatureTable
from .intervals import CoordSystem, Interval, VideoMeta
from .sampling import Annotation

FPS = 30.0
UNIT_FRAMES = 16

_MAX_PLACEMENT_ATTEMPTS = 200


@dataclass(frozen=True)
class SynthSpec:
    num_videos: int = 20
    units_per_video: tuple[int, int] = (60, 120)
    dim: int = 16
    n_classes: int = 3
    instances_per_video: tuple[int, int] = (1, 3)
    instance_length_units: tuple[int, int] = (3, 14)
    signal_strength: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_videos < 1:
            raise ValueError(f"num_videos must be >= 1, got {self.num_videos}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        for name in ("units_per_video", "instances_per_video", "instance_length_units"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must be a range with 1 <= lo <= hi, got ({lo}, {hi})")
        if self.signal_strength < 0 or self.noise_sigma < 0:
            raise ValueError("signal_strength and noise_sigma must be >= 0")


@dataclass
class SynthDataset:
    tables: dict[str, UnitFeatureTable]
    annotations: dict[str, list[Annotation]]
    prototypes: np.ndarray = field(repr=False)


def class_prototypes(spec: SynthSpec) -> np.ndarray:
    """One unit-norm direction per class, scaled by signal_strength."""
    protos = np.empty((spec.n_classes, spec.dim))
    for c in range(spec.n_classes):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(c,)))
        v = rng.standard_normal(spec.dim)
        protos[c] = spec.signal_strength * v / np.linalg.norm(v)
    return protos


def _place_instances(rng: np.random.Generator, spec: SynthSpec, num_units: int, count: int):
    """Sample non-touching [start, end) unit spans by rejection."""
    lo, hi = spec.instance_length_units
    placed: list[tuple[int, int]] = []
    for _ in range(count):
        for _ in range(_MAX_PLACEMENT_ATTEMPTS):
            length = int(rng.integers(lo, hi + 1))
            if length > num_units:
                continue
            start = int(rng.integers(0, num_units - length + 1))
            end = start + length
            if all(end < s or e < start for s, e in placed):
                placed.append((start, end))
                break
        else:
            raise GenerationError(
                f"could not fit {count} instances of length {lo}..{hi} into {num_units} units"
            )
    return sorted(placed)


def generate_dataset(spec: SynthSpec) -> SynthDataset:
    protos = class_prototypes(spec)
    rng = np.random.default_rng(spec.seed)
    sec_per_unit = UNIT_FRAMES / FPS

    tables: dict[str, UnitFeatureTable] = {}
    annotations: dict[str, list[Annotation]] = {}
    for i in range(spec.num_videos):
        vid = f"video_{i:04d}"
        num_units = int(rng.integers(spec.units_per_video[0], spec.units_per_video[1] + 1))
        count = int(rng.integers(spec.instances_per_video[0], spec.instances_per_video[1] + 1))
        spans = _place_instances(rng, spec, num_units, count)
        labels = rng.integers(1, spec.n_classes + 1, size=len(spans))
        data = spec.noise_sigma * rng.standard_normal((num_units, spec.dim))
        anns = []
        for (s, e), label in zip(spans, labels):
            data[s:e] += protos[int(label) - 1]
            anns.append(
                Annotation(
                    Interval(s * sec_per_unit, e * sec_per_unit, CoordSystem.SECONDS), int(label)
                )
            )
        meta = VideoMeta(vid, FPS, num_units * UNIT_FRAMES, UNIT_FRAMES)
        tables[vid] = UnitFeatureTable(meta, data.astype("<f4"))
        annotations[vid] = anns
    return SynthDataset(tables, annotations, protos)


def dataset_manifest(spec: SynthSpec, dataset: SynthDataset) -> dict:
    """JSON-ready description of a generated dataset (for provenance)."""
    return {
        "format_version": 1,
        "fps": FPS,
        "unit_frames": UNIT_FRAMES,
        "spec": {
            "num_videos": spec.num_videos,
            "units_per_video": list(spec.units_per_video),
            "dim": spec.dim,
            "n_classes": spec.n_classes,
            "instances_per_video": list(spec.instances_per_video),
            "instance_length_units": list(spec.instance_length_units),
            "signal_strength": spec.signal_strength,
            "noise_sigma": spec.noise_sigma,
            "seed": spec.seed,
        },
        "videos": [
            {
                "video_id": vid,
                "num_units": dataset.tables[vid].meta.num_units,
                "annotations": [
                    {
                        "start_sec": ann.interval.start,
                        "end_sec": ann.interval.end,
                        "label": ann.label,
                    }
                    for ann in anns
                ],
            }
            for vid, anns in dataset.annotations.items()
        ],
    }


def annotations_from_manifest(manifest: Mapping) -> dict[str, list[Annotation]]:
    """Rebuild per-video annotation lists from a manifest dict."""
    out: dict[str, list[Annotation]] = {}
    for video in manifest["videos"]:
        out[video["video_id"]] = [
            Annotation(
                Interval(a["start_sec"], a["end_sec"], CoordSystem.SECONDS), int(a["label"])
            )
            for a in video["annotations"]
        ]
    return out
