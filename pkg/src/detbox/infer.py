"""Inference stage: decode dense grids, confidence-filter, suppress.

Each scale level carries a dense array of shape (cells_x, cells_y, m + 5):
four distance logits, one objectness logit, then m class logits. Cells
passing the confidence threshold decode into pixel-space detections whose
corners come from inverting the corner-distance code at the cell::

    x1 = stride * (cell_x + 1 - l)      x2 = stride * (cell_x + r)
    y1 = stride * (cell_y + 1 - t)      y2 = stride * (cell_y + b)

Greedy suppression is class-wise: a detection is removed only by a
higher-ranked kept detection of the same class overlapping it above the
IoU threshold. Ranking is objectness times the best class probability,
with ties broken by (scale, cell_y, cell_x, class) for determinism.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .codec import ScaleConfig, decode_distances
from .geom import CornerBox, iou

DEFAULT_CONF_THRESHOLD = 0.001
DEFAULT_NMS_THRESHOLD = 0.6


@dataclass(frozen=True, eq=False)
class Detection:
    """One decoded candidate: pixel box, objectness, per-class scores."""

    box: CornerBox
    objectness: float
    class_scores: np.ndarray
    scale_index: int
    cell: tuple[int, int] = (-1, -1)

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.class_scores))

    @property
    def score(self) -> float:
        return self.objectness * float(np.max(self.class_scores))

    def sort_key(self):
        return (-self.score, self.scale_index, self.cell[1], self.cell[0], self.class_id)


@dataclass(frozen=True)
class PredictionGrid:
    """Raw per-scale output arrays, each (cells_x, cells_y, m + 5)."""

    levels: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "levels", tuple(np.asarray(a, dtype=float) for a in self.levels)
        )
        channels = {a.shape[-1] for a in self.levels}
        if len(channels) != 1:
            raise ValueError(f"levels disagree on channel count: {sorted(channels)}")
        if next(iter(channels)) < 6:
            raise ValueError("need at least 6 channels: 4 distances, objectness, 1 class")

    @property
    def num_classes(self) -> int:
        return self.levels[0].shape[-1] - 5


@dataclass(frozen=True)
class DecodeResult:
    detections: list[Detection]
    dropped_degenerate: int = 0


def decode_grid(
    grid: PredictionGrid,
    scale: ScaleConfig,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> DecodeResult:
    """Decode every confident cell across all scales into detections.

    Output is sorted by descending objectness. Cells decoding to a
    degenerate box (zero or negative extent) are dropped and counted
    rather than raising: they are legitimate raw-output states.
    """
    if len(grid.levels) != scale.num_scales:
        raise ValueError(
            f"grid has {len(grid.levels)} levels, scale config {scale.num_scales}"
        )
    detections: list[Detection] = []
    dropped = 0
    for scale_index, arr in enumerate(grid.levels):
        nx, ny = scale.grid_size(scale_index)
        if arr.shape[:2] != (nx, ny):
            raise ValueError(
                f"level {scale_index} is {arr.shape[:2]}, expected {(nx, ny)} "
                f"for stride {scale.strides[scale_index]}"
            )
        stride = scale.strides[scale_index]
        gain = scale.gains[scale_index]
        objectness = expit(arr[..., 4])
        keep = np.argwhere(objectness >= conf_threshold)
        if keep.size == 0:
            continue
        cx, cy = keep[:, 0], keep[:, 1]
        dists = decode_distances(arr[cx, cy, :4], gain)
        x1 = stride * (cx + 1.0 - dists[:, 0])
        y1 = stride * (cy + 1.0 - dists[:, 1])
        x2 = stride * (cx + dists[:, 2])
        y2 = stride * (cy + dists[:, 3])
        class_scores = expit(arr[cx, cy, 5:])
        for k in range(len(keep)):
            if x2[k] <= x1[k] or y2[k] <= y1[k]:
                dropped += 1
                continue
            detections.append(
                Detection(
                    box=CornerBox(float(x1[k]), float(y1[k]), float(x2[k]), float(y2[k])),
                    objectness=float(objectness[cx[k], cy[k]]),
                    class_scores=class_scores[k].copy(),
                    scale_index=scale_index,
                    cell=(int(cx[k]), int(cy[k])),
                )
            )
    detections.sort(
        key=lambda d: (-d.objectness, d.scale_index, d.cell[1], d.cell[0], d.class_id)
    )
    return DecodeResult(detections=detections, dropped_degenerate=dropped)


def nms(
    detections: list[Detection],
    iou_threshold: float = DEFAULT_NMS_THRESHOLD,
) -> list[Detection]:
    """Greedy per-class suppression; returns survivors by descending score.

    A detection is suppressed when some already-kept detection of the same
    class overlaps it with reference IoU strictly above the threshold.
    Boxes of different classes never interact.
    """
    ranked = sorted(detections, key=Detection.sort_key)
    kept: list[Detection] = []
    for det in ranked:
        suppressed = any(
            k.class_id == det.class_id and iou(k.box, det.box) > iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(det)
    return kept


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def detection_to_json_line(det: Detection) -> str:
    """One-line JSON wire format: {x1,y1,x2,y2,score,class,scale}."""
    b = det.box
    return (
        f'{{"x1":{_fmt(b.x1)},"y1":{_fmt(b.y1)},"x2":{_fmt(b.x2)},"y2":{_fmt(b.y2)},'
        f'"score":{_fmt(det.score)},"class":{det.class_id},"scale":{det.scale_index}}}'
    )


def detections_to_jsonl(detections: list[Detection]) -> str:
    return "".join(detection_to_json_line(d) + "\n" for d in detections)


def detections_from_jsonl(text: str) -> list[Detection]:
    """Parse the line format back into detections.

    Lines starting with '#' are skipped (file headers). Round-tripped
    detections carry the line's score as objectness with a one-hot class
    vector, so ranking and class identity survive; the cell does not.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
            box = CornerBox(rec["x1"], rec["y1"], rec["x2"], rec["y2"])
            class_id = int(rec["class"])
            scores = np.zeros(class_id + 1)
            scores[class_id] = 1.0
            out.append(
                Detection(
                    box=box,
                    objectness=float(rec["score"]),
                    class_scores=scores,
                    scale_index=int(rec["scale"]),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"bad detection on line {lineno}: {exc}") from exc
    return out
