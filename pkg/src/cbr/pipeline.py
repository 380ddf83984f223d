"""End-to-end experiment orchestration.

Everything an experiment produces lives in one working directory:

    features/*.cbrf     unit-feature tables (gen-data)
    manifest.json       dataset description + annotations (gen-data)
    proposal.ckpt       stage-one weights (train --stage proposal)
    detection.ckpt      stage-two weights (train --stage detection)
    train_<stage>.csv   per-epoch loss curves
    proposals.json      ranked class-agnostic proposals, in seconds (infer)
    detections.json     ranked labeled detections, in seconds (infer)
    metrics.csv         recall/AP summary (eval)
    config.<cmd>.json   the resolved configuration each command ran with

Artifacts are byte-reproducible for a fixed configuration: floats are
serialized with repr, JSON keys are sorted, and every traversal is over
explicitly sorted keys. The configuration hash stamped into result
files covers only semantic fields (never filesystem paths).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cascade import CascadeConfig, Detection, detect, nms, refine_proposals
from .errors import ConfigError, SamplingError
from .features import (
    PoolingConfig,
    UnitFeatureTable,
    load_feature_table,
    pool_clip_feature,
    save_feature_table,
)
from .intervals import CoordSystem, Interval, VideoMeta, interval_units_to_seconds
from .metrics import (
    EvalConfig,
    average_recall_at_an,
    average_recall_at_f,
    mean_average_precision,
)
from .network import StageModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .offsets import OffsetScheme
from .sampling import Annotation, Stage, WindowScale, assign_labels, generate_windows
from .synthetic import SynthSpec, annotations_from_manifest, dataset_manifest, generate_dataset

DEFAULT_WINDOW_SCALES = ((32, 16), (64, 16), (128, 32), (256, 64))
DEFAULT_EPOCHS = 12


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    offset_scheme: OffsetScheme = OffsetScheme.BOUNDARY_UNIT
    n_ctx: int = 4
    window_scales: tuple[WindowScale, ...] = tuple(
        WindowScale(length, stride) for length, stride in DEFAULT_WINDOW_SCALES
    )
    hidden_dims: tuple[int, ...] = (1000,)
    learning_rate: float = 0.005
    batch_size: int = 128
    lam: float = 2.0
    proposal_epochs: int = DEFAULT_EPOCHS
    detection_epochs: int = DEFAULT_EPOCHS
    cascade: CascadeConfig = CascadeConfig()
    eval: EvalConfig = EvalConfig()
    synth: SynthSpec = SynthSpec()

    def __post_init__(self):
        if self.n_ctx < 0:
            raise ValueError(f"n_ctx must be >= 0, got {self.n_ctx}")
        if not self.window_scales:
            raise ValueError("window_scales must not be empty")
        if self.proposal_epochs < 0 or self.detection_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")

    def train_config(self, stage: Stage) -> TrainConfig:
        # Stage seeds are derived, not shared, so the two stages never
        # replay each other's initializations or batch orders.
        offset = 1000 if stage is Stage.PROPOSAL else 2000
        return TrainConfig(
            stage=stage,
            epochs=self.proposal_epochs if stage is Stage.PROPOSAL else self.detection_epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            lam=self.lam,
            hidden_dims=self.hidden_dims,
            seed=self.seed + offset,
        )

    def pooling(self) -> PoolingConfig:
        return PoolingConfig(self.n_ctx)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed,
        "offset_scheme": cfg.offset_scheme.value,
        "n_ctx": cfg.n_ctx,
        "window_scales": [[w.length, w.stride] for w in cfg.window_scales],
        "hidden_dims": list(cfg.hidden_dims),
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "lam": cfg.lam,
        "proposal_epochs": cfg.proposal_epochs,
        "detection_epochs": cfg.detection_epochs,
        "cascade": {
            "k_proposal": cfg.cascade.k_proposal,
            "k_detection": cfg.cascade.k_detection,
            "theta": cfg.cascade.theta,
            "nms_tiou": cfg.cascade.nms_tiou,
            "zero_offsets": cfg.cascade.zero_offsets,
        },
        "eval": {
            "map_tious": list(cfg.eval.map_tious),
            "ar_tiou": cfg.eval.ar_tiou,
            "an_values": list(cfg.eval.an_values),
            "frequency": cfg.eval.frequency,
        },
        "synth": {
            "num_videos": cfg.synth.num_videos,
            "units_per_video": list(cfg.synth.units_per_video),
            "dim": cfg.synth.dim,
            "n_classes": cfg.synth.n_classes,
            "instances_per_video": list(cfg.synth.instances_per_video),
            "instance_length_units": list(cfg.synth.instance_length_units),
            "signal_strength": cfg.synth.signal_strength,
            "noise_sigma": cfg.synth.noise_sigma,
            "seed": cfg.synth.seed,
        },
    }


_TOP_KEYS = {
    "seed",
    "offset_scheme",
    "n_ctx",
    "window_scales",
    "hidden_dims",
    "learning_rate",
    "batch_size",
    "lam",
    "proposal_epochs",
    "detection_epochs",
    "cascade",
    "eval",
    "synth",
}
_PAIR_KEYS = ("units_per_video", "instances_per_video", "instance_length_units")


def config_from_dict(raw: Mapping) -> ExperimentConfig:
    """Build a validated config; unknown or ill-typed fields raise ConfigError."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    scheme_raw = raw.get("offset_scheme", OffsetScheme.BOUNDARY_UNIT.value)
    try:
        scheme = OffsetScheme(scheme_raw)
    except ValueError:
        raise ConfigError(
            f"offset_scheme must be one of param|frame|unit, got {scheme_raw!r}"
        ) from None
    try:
        eval_kw = dict(raw.get("eval", {}))
        for key in ("map_tious", "an_values"):
            if key in eval_kw:
                eval_kw[key] = tuple(eval_kw[key])
        synth_kw = dict(raw.get("synth", {}))
        for key in _PAIR_KEYS:
            if key in synth_kw:
                synth_kw[key] = tuple(int(v) for v in synth_kw[key])
        return ExperimentConfig(
            seed=int(raw.get("seed", 0)),
            offset_scheme=scheme,
            n_ctx=int(raw.get("n_ctx", 4)),
            window_scales=tuple(
                WindowScale(int(length), int(stride))
                for length, stride in raw.get("window_scales", DEFAULT_WINDOW_SCALES)
            ),
            hidden_dims=tuple(int(h) for h in raw.get("hidden_dims", (1000,))),
            learning_rate=float(raw.get("learning_rate", 0.005)),
            batch_size=int(raw.get("batch_size", 128)),
            lam=float(raw.get("lam", 2.0)),
            proposal_epochs=int(raw.get("proposal_epochs", DEFAULT_EPOCHS)),
            detection_epochs=int(raw.get("detection_epochs", DEFAULT_EPOCHS)),
            cascade=CascadeConfig(**raw.get("cascade", {})),
            eval=EvalConfig(**eval_kw),
            synth=SynthSpec(**synth_kw),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


_OVERRIDE_KEYS = {"seed", "epochs", "theta", "k_proposal", "k_detection", "offset_scheme"}


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> ExperimentConfig:
    """Resolve a config from an optional JSON file plus CLI overrides."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for key, value in (overrides or {}).items():
        if key not in _OVERRIDE_KEYS:
            raise ConfigError(f"unknown override {key!r}")
        if value is None:
            continue
        if key == "epochs":
            raw["proposal_epochs"] = value
            raw["detection_epochs"] = value
        elif key in ("theta", "k_proposal", "k_detection"):
            raw.setdefault("cascade", {})
            raw["cascade"] = dict(raw["cascade"])
            raw["cascade"][key] = value
        else:
            raw[key] = value
    return config_from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_resolved_config(cfg: ExperimentConfig, out: Path, command: str) -> None:
    payload = dict(config_to_dict(cfg), config_hash=config_hash(cfg))
    (out / f"config.{command}.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )


# ---------------------------------------------------------------------------
# dataset round-trip


def write_dataset(cfg: ExperimentConfig, out: Path):
    dataset = generate_dataset(cfg.synth)
    feature_dir = out / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    for vid in sorted(dataset.tables):
        save_feature_table(dataset.tables[vid], feature_dir / f"{vid}.cbrf")
    manifest = dataset_manifest(cfg.synth, dataset)
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return dataset


def load_manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


def metas_from_manifest(manifest: Mapping) -> dict[str, VideoMeta]:
    unit_frames = int(manifest["unit_frames"])
    return {
        v["video_id"]: VideoMeta(
            v["video_id"], manifest["fps"], v["num_units"] * unit_frames, unit_frames
        )
        for v in manifest["videos"]
    }


def load_dataset(out: Path):
    """Read back features + annotations; returns (tables, annotations, metas)."""
    manifest = load_manifest(out)
    annotations = annotations_from_manifest(manifest)
    tables = {
        v["video_id"]: load_feature_table(out / "features" / f"{v['video_id']}.cbrf")
        for v in manifest["videos"]
    }
    return tables, annotations, {vid: t.meta for vid, t in tables.items()}


# ---------------------------------------------------------------------------
# training


def build_training_pool(
    cfg: ExperimentConfig,
    tables: Mapping[str, UnitFeatureTable],
    annotations: Mapping[str, Sequence[Annotation]],
):
    """Window, label, and pool every video; returns (features, windows)."""
    pooling = cfg.pooling()
    feats, pool = [], []
    for vid in sorted(tables):
        table = tables[vid]
        windows = generate_windows(table.meta, list(cfg.window_scales))
        labeled = assign_labels(
            windows, list(annotations.get(vid, ())), table.meta, cfg.offset_scheme
        )
        for lw in labeled:
            feats.append(pool_clip_feature(table, lw.window, pooling))
            pool.append(lw)
    if not pool:
        raise SamplingError("no labeled windows; window scales may not fit the videos")
    return np.stack(feats), pool


def train_stage(
    cfg: ExperimentConfig,
    stage: Stage,
    tables: Mapping[str, UnitFeatureTable],
    annotations: Mapping[str, Sequence[Annotation]],
    out: Path | None = None,
) -> StageModel:
    """Train one stage; with `out` set, writes checkpoint and loss log."""
    features, pool = build_training_pool(cfg, tables, annotations)
    tc = cfg.train_config(stage)
    log_path = out / f"train_{stage.value}.csv" if out is not None else None
    model = train(tc, features, pool, cfg.synth.n_classes, cfg.offset_scheme, log_path)
    if out is not None:
        save_checkpoint(out / f"{stage.value}.ckpt", model, tc.seed)
    return model


# ---------------------------------------------------------------------------
# inference


def _to_seconds(det: Detection, meta: VideoMeta) -> Detection:
    return Detection(interval_units_to_seconds(det.interval, meta), det.label, det.score)


def run_inference(
    cfg: ExperimentConfig,
    tables: Mapping[str, UnitFeatureTable],
    proposal_model: StageModel,
    detection_model: StageModel,
):
    """Run both cascades and NMS on every video.

    Returns (proposals_by_video, detections_by_video) with intervals in
    seconds, each video's list ranked by descending score. NMS runs on
    proposals per video, and on detections per video and class.
    """
    proposals_by_video: dict[str, list[Detection]] = {}
    detections_by_video: dict[str, list[Detection]] = {}
    pooling = cfg.pooling()
    for vid in sorted(tables):
        table = tables[vid]
        windows = generate_windows(table.meta, list(cfg.window_scales))
        proposals = refine_proposals(table, windows, proposal_model, cfg.cascade, pooling)
        proposals = nms(proposals, cfg.cascade.nms_tiou)
        raw_dets = detect(table, proposals, detection_model, cfg.cascade, pooling)
        merged: list[Detection] = []
        for label in sorted({d.label for d in raw_dets}):
            merged += nms([d for d in raw_dets if d.label == label], cfg.cascade.nms_tiou)
        merged.sort(key=lambda d: (-d.score, d.interval.start, d.interval.end, d.label))
        proposals_by_video[vid] = [_to_seconds(d, table.meta) for d in proposals]
        detections_by_video[vid] = [_to_seconds(d, table.meta) for d in merged]
    return proposals_by_video, detections_by_video


def write_detections_json(
    path: Path, by_video: Mapping[str, Sequence[Detection]], cfg: ExperimentConfig
) -> None:
    rows = [
        {
            "video_id": vid,
            "start_sec": d.interval.start,
            "end_sec": d.interval.end,
            "label": d.label,
            "score": d.score,
        }
        for vid in sorted(by_video)
        for d in by_video[vid]
    ]
    rows.sort(key=lambda r: (-r["score"], r["video_id"], r["start_sec"], r["end_sec"], r["label"]))
    payload = {"config_hash": config_hash(cfg), "seed": cfg.seed, "rows": rows}
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_detections_json(path: Path) -> dict[str, list[Detection]]:
    payload = json.loads(Path(path).read_text())
    out: dict[str, list[Detection]] = {}
    for r in payload["rows"]:
        iv = Interval(r["start_sec"], r["end_sec"], CoordSystem.SECONDS)
        out.setdefault(r["video_id"], []).append(Detection(iv, int(r["label"]), r["score"]))
    return out


# ---------------------------------------------------------------------------
# evaluation


def compute_metrics(
    cfg: ExperimentConfig,
    proposals: Mapping[str, Sequence[Detection]],
    detections: Mapping[str, Sequence[Detection]],
    annotations: Mapping[str, Sequence[Annotation]],
    metas: Mapping[str, VideoMeta],
    task: str = "both",
) -> list[tuple[str, str, str, str]]:
    """Metric rows (metric, class, threshold, value), repr-formatted."""
    if task not in ("proposals", "detection", "both"):
        raise ConfigError(f"task must be proposals|detection|both, got {task!r}")
    rows: list[tuple[str, str, str, str]] = []
    if task in ("proposals", "both"):
        for an in cfg.eval.an_values:
            value = average_recall_at_an(proposals, annotations, an, cfg.eval.ar_tiou)
            rows.append(("ar_at_an", "", str(an), repr(value)))
        value = average_recall_at_f(
            proposals, annotations, metas, cfg.eval.frequency, cfg.eval.ar_tiou
        )
        rows.append(("ar_at_f", "", repr(cfg.eval.frequency), repr(value)))
    if task in ("detection", "both"):
        for threshold in cfg.eval.map_tious:
            mean_ap, per_class = mean_average_precision(detections, annotations, threshold)
            for label in sorted(per_class):
                rows.append(("ap", str(label), repr(threshold), repr(per_class[label])))
            rows.append(("map", "", repr(threshold), repr(mean_ap)))
    return rows


def write_metrics_csv(path: Path, rows: Sequence[tuple[str, str, str, str]], cfg) -> None:
    lines = [f"# config_hash={config_hash(cfg)} seed={cfg.seed}", "metric,class,threshold,value"]
    lines += [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: Path) -> dict[tuple[str, str, str], float]:
    table: dict[tuple[str, str, str], float] = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or line.startswith("metric,") or not line.strip():
            continue
        metric, cls, threshold, value = line.split(",")
        table[(metric, cls, threshold)] = float(value)
    return table


# ---------------------------------------------------------------------------
# commands (one per CLI verb)


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(cfg, out)
    write_resolved_config(cfg, out, "gen-data")


def cmd_train(cfg: ExperimentConfig, out: Path, stage: Stage) -> None:
    tables, annotations, _ = load_dataset(out)
    train_stage(cfg, stage, tables, annotations, out)
    write_resolved_config(cfg, out, f"train-{stage.value}")


def cmd_infer(cfg: ExperimentConfig, out: Path) -> None:
    tables, _, _ = load_dataset(out)
    proposal_model = load_checkpoint(out / "proposal.ckpt")
    detection_model = load_checkpoint(out / "detection.ckpt")
    proposals, detections = run_inference(cfg, tables, proposal_model, detection_model)
    write_detections_json(out / "proposals.json", proposals, cfg)
    write_detections_json(out / "detections.json", detections, cfg)
    write_resolved_config(cfg, out, "infer")


def cmd_eval(cfg: ExperimentConfig, out: Path, task: str = "both") -> None:
    manifest = load_manifest(out)
    annotations = annotations_from_manifest(manifest)
    metas = metas_from_manifest(manifest)
    proposals = read_detections_json(out / "proposals.json")
    detections = read_detections_json(out / "detections.json")
    rows = compute_metrics(cfg, proposals, detections, annotations, metas, task)
    write_metrics_csv(out / "metrics.csv", rows, cfg)
    write_resolved_config(cfg, out, "eval")


def _summary_metrics(cfg, tables, annotations, metas, proposal_model, detection_model):
    """AR@F and mAP@0.5 for one inference configuration."""
    proposals, detections = run_inference(cfg, tables, proposal_model, detection_model)
    ar = average_recall_at_f(proposals, annotations, metas, cfg.eval.frequency, cfg.eval.ar_tiou)
    mean_ap, _ = mean_average_precision(detections, annotations, 0.5)
    return ar, mean_ap


def cmd_ablate_offsets(cfg: ExperimentConfig, out: Path) -> None:
    """Compare offset schemes (plus a no-regression row) end to end.

    Each scheme trains its own model pair at the shared seed; the `none`
    row reuses the unit-level models but zeroes the boundary updates at
    inference, isolating what regression itself contributes.
    """
    tables, annotations, metas = load_dataset(out)
    trained: dict[OffsetScheme, tuple] = {}
    for scheme in (OffsetScheme.BOUNDARY_UNIT, OffsetScheme.PARAMETERIZED, OffsetScheme.BOUNDARY_FRAME):
        sub = replace(cfg, offset_scheme=scheme)
        trained[scheme] = (
            sub,
            train_stage(sub, Stage.PROPOSAL, tables, annotations),
            train_stage(sub, Stage.DETECTION, tables, annotations),
        )
    rows = []
    for name in ("none", "param", "frame", "unit"):
        scheme = OffsetScheme.BOUNDARY_UNIT if name == "none" else OffsetScheme(name)
        sub, p_model, d_model = trained[scheme]
        if name == "none":
            sub = replace(sub, cascade=replace(sub.cascade, zero_offsets=True))
        ar, mean_ap = _summary_metrics(sub, tables, annotations, metas, p_model, d_model)
        rows.append((name, repr(ar), repr(mean_ap)))
    lines = [f"# config_hash={config_hash(cfg)} seed={cfg.seed}", "scheme,ar_at_f,map_at_0.5"]
    lines += [",".join(r) for r in rows]
    (out / "offset_ablation.csv").write_text("\n".join(lines) + "\n")
    write_resolved_config(cfg, out, "ablate-offsets")


def cmd_ablate_cascade(cfg: ExperimentConfig, out: Path, k_values=(1, 2, 3, 4)) -> None:
    """Sweep cascade depth at inference for both stages.

    Depth is an inference-time knob, so a single model pair serves the
    whole sweep: proposal depth is scored by AR@F (detection depth held
    at the configured value), detection depth by mAP@0.5 (proposal
    depth held).
    """
    tables, annotations, metas = load_dataset(out)
    p_model = train_stage(cfg, Stage.PROPOSAL, tables, annotations)
    d_model = train_stage(cfg, Stage.DETECTION, tables, annotations)
    rows = []
    for k in k_values:
        sub = replace(cfg, cascade=replace(cfg.cascade, k_proposal=k))
        ar, _ = _summary_metrics(sub, tables, annotations, metas, p_model, d_model)
        rows.append(("proposal", str(k), repr(ar)))
    for k in k_values:
        sub = replace(cfg, cascade=replace(cfg.cascade, k_detection=k))
        _, mean_ap = _summary_metrics(sub, tables, annotations, metas, p_model, d_model)
        rows.append(("detection", str(k), repr(mean_ap)))
    lines = [f"# config_hash={config_hash(cfg)} seed={cfg.seed}", "stage,k,value"]
    lines += [",".join(r) for r in rows]
    (out / "cascade_ablation.csv").write_text("\n".join(lines) + "\n")
    write_resolved_config(cfg, out, "ablate-cascade")
