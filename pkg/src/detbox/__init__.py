"""Anchor-free detection geometry: corner-distance box coding, all-scale
center assignment, distance-space IoU losses with analytic gradients, and
inference post-processing, with a synthetic fitting harness for
verification."""

from .assign import (
    AssignMode,
    AssignmentError,
    AssignmentRecord,
    apply_scale_constraints,
    assign,
    center_collision_audit,
    positives_per_object,
)
from .codec import (
    CodecError,
    RawPrediction,
    RegressionTarget,
    ScaleConfig,
    center_cell,
    decode,
    encode,
    encode_logit,
    representable_range,
)
from .fit import FitConfig, FitReport, SceneSpec, compare_losses, fit_scene, generate_scene
from .geom import BoundingBox, CornerBox, GeometryError, giou, iou, to_center, to_corner
from .infer import (
    Detection,
    DecodeResult,
    PredictionGrid,
    decode_grid,
    detections_from_jsonl,
    detections_to_jsonl,
    nms,
)
from .ingest import CocoFormatError, CocoLoadResult, Scene, dataset_stats, export_coco, load_coco
from .losses import (
    DegenerateGeometryError,
    LossConfig,
    MultitaskLoss,
    SdiouParts,
    baseline_loss,
    bce_with_logits,
    multitask_loss,
    regression_loss_grad,
    sdiou,
    sdiou_grad,
    sdiou_logit_grad,
    sdiou_loss,
    sdiou_scale_drift,
)

__version__ = "0.1.0"

__all__ = [
    "AssignMode",
    "AssignmentError",
    "AssignmentRecord",
    "BoundingBox",
    "CocoFormatError",
    "CocoLoadResult",
    "CodecError",
    "CornerBox",
    "DecodeResult",
    "DegenerateGeometryError",
    "Detection",
    "FitConfig",
    "FitReport",
    "GeometryError",
    "LossConfig",
    "MultitaskLoss",
    "PredictionGrid",
    "RawPrediction",
    "RegressionTarget",
    "ScaleConfig",
    "Scene",
    "SceneSpec",
    "SdiouParts",
    "apply_scale_constraints",
    "assign",
    "baseline_loss",
    "bce_with_logits",
    "center_cell",
    "center_collision_audit",
    "compare_losses",
    "dataset_stats",
    "decode",
    "decode_grid",
    "detections_from_jsonl",
    "detections_to_jsonl",
    "encode",
    "encode_logit",
    "export_coco",
    "fit_scene",
    "generate_scene",
    "giou",
    "iou",
    "load_coco",
    "multitask_loss",
    "nms",
    "positives_per_object",
    "regression_loss_grad",
    "representable_range",
    "sdiou",
    "sdiou_grad",
    "sdiou_logit_grad",
    "sdiou_loss",
    "sdiou_scale_drift",
    "to_center",
    "to_corner",
]
