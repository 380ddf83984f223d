"""Two-stage temporal action proposal and detection over unit features.

The pipeline slides multi-scale windows over per-unit feature rows,
scores and refines them with a proposal cascade, then classifies and
refines the survivors with a detection cascade. Boundary adjustments
are regressed in one of three offset parameterizations; evaluation
reports proposal recall and detection mAP against annotations in
seconds.
"""

from .cascade import CascadeConfig, Detection, detect, nms, refine_proposals
from .errors import (
    CBRError,
    ClipBoundsError,
    ConfigError,
    CoordinateSystemError,
    DegenerateIntervalError,
    DivergenceError,
    FeatureDataError,
    FeatureFormatError,
    GenerationError,
    MissingTargetError,
    SamplingError,
    ShapeError,
    UndefinedMetricError,
)
from .features import (
    PoolingConfig,
    UnitFeatureTable,
    load_feature_table,
    pool_clip_feature,
    save_feature_table,
)
from .intervals import CoordSystem, Interval, VideoMeta, round_half_away, tiou
from .metrics import (
    EvalConfig,
    average_precision,
    average_recall_at_an,
    average_recall_at_f,
    mean_average_precision,
)
from .network import (
    AdamState,
    ModelShape,
    StageModel,
    StageOutput,
    TrainConfig,
    adam_step,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
from .offsets import OffsetPair, OffsetScheme, decode_offsets, encode_offsets
from .pipeline import (
    ExperimentConfig,
    build_training_pool,
    compute_metrics,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    load_dataset,
    run_inference,
    train_stage,
    write_dataset,
)
from .sampling import (
    Annotation,
    LabeledWindow,
    Minibatch,
    Stage,
    WindowScale,
    assign_labels,
    build_minibatch,
    generate_windows,
)
from .synthetic import SynthDataset, SynthSpec, class_prototypes, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AdamState",
    "CBRError",
    "CascadeConfig",
    "ClipBoundsError",
    "ConfigError",
    "CoordSystem",
    "CoordinateSystemError",
    "DegenerateIntervalError",
    "Detection",
    "DivergenceError",
    "EvalConfig",
    "ExperimentConfig",
    "FeatureDataError",
    "FeatureFormatError",
    "GenerationError",
    "Interval",
    "LabeledWindow",
    "Minibatch",
    "MissingTargetError",
    "ModelShape",
    "OffsetPair",
    "OffsetScheme",
    "PoolingConfig",
    "SamplingError",
    "ShapeError",
    "Stage",
    "StageModel",
    "StageOutput",
    "SynthDataset",
    "SynthSpec",
    "TrainConfig",
    "UndefinedMetricError",
    "UnitFeatureTable",
    "VideoMeta",
    "WindowScale",
    "adam_step",
    "assign_labels",
    "average_precision",
    "average_recall_at_an",
    "average_recall_at_f",
    "backward",
    "build_minibatch",
    "build_training_pool",
    "class_prototypes",
    "compute_metrics",
    "config_from_dict",
    "config_hash",
    "config_to_dict",
    "decode_offsets",
    "detect",
    "encode_offsets",
    "forward",
    "generate_dataset",
    "generate_windows",
    "init_params",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "load_feature_table",
    "loss",
    "mean_average_precision",
    "nms",
    "pool_clip_feature",
    "refine_proposals",
    "round_half_away",
    "run_inference",
    "save_checkpoint",
    "save_feature_table",
    "tiou",
    "train",
    "train_stage",
    "write_dataset",
]
