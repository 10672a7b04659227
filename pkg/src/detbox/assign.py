"""Label assignment: map ground-truth objects to positive grid cells.

Every object becomes a positive sample at *every* scale. The default
strategy takes the cell containing the box center plus up to two
neighboring cells: the horizontal neighbor on whichever side of the cell's
vertical midline the center falls, and the vertical neighbor likewise. A
center exactly on a midline contributes no neighbor on that axis, and
neighbors outside the grid are skipped.

Which cells an object claims depends only on its center's sub-cell offset
and grid clipping, never on its width or height, so the positive-sample
count per object is size-independent. Alternative strategies (segment
midpoints, box corners) and per-scale size constraints are provided for
ablation studies.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .codec import RegressionTarget, ScaleConfig, center_cell, encode
from .geom import BoundingBox, iou, to_corner


class AssignmentError(ValueError):
    """Raised for objects or modes the assignment rules cannot handle."""


LOCATION_STRATEGIES = (
    "center",
    "aug_center",
    "h_centers",
    "aug_center_plus_h_centers",
    "four_corners",
    "four_corners_plus_center",
)


@dataclass(frozen=True)
class AssignMode:
    """Assignment variant: cell-selection strategy, size gates, head width.

    ``scale_thresholds``, when given, must be strictly increasing, start at
    0, and end at infinity; with N scales it needs N+1 entries bracketing
    each scale's admissible object size. ``predictions_per_cell`` of 4
    splits each cell into 2x2 quadrants addressed by the center offset.
    """

    location_strategy: str = "aug_center"
    scale_thresholds: tuple[float, ...] | None = None
    predictions_per_cell: int = 1

    def __post_init__(self) -> None:
        if self.location_strategy not in LOCATION_STRATEGIES:
            raise AssignmentError(
                f"unknown location strategy {self.location_strategy!r}; "
                f"valid: {', '.join(LOCATION_STRATEGIES)}"
            )
        if self.predictions_per_cell not in (1, 4):
            raise AssignmentError(
                f"predictions_per_cell must be 1 or 4, got {self.predictions_per_cell}"
            )
        if self.scale_thresholds is not None:
            m = tuple(float(v) for v in self.scale_thresholds)
            object.__setattr__(self, "scale_thresholds", m)
            if len(m) < 2 or m[0] != 0.0 or not math.isinf(m[-1]):
                raise AssignmentError(
                    f"scale thresholds must start at 0 and end at inf, got {m}"
                )
            if any(b <= a for a, b in zip(m, m[1:])):
                raise AssignmentError(
                    f"scale thresholds must be strictly increasing, got {m}"
                )


@dataclass(frozen=True)
class AssignmentRecord:
    """One positive sample: an object bound to a cell at one scale."""

    object_id: int
    class_id: int
    scale_index: int
    cell: tuple[int, int]
    target: RegressionTarget
    quadrant: int = 0


def _neighbor_cells(
    box: BoundingBox, cell: tuple[int, int], stride: int
) -> list[tuple[int, int]]:
    # Strictly past the midline on each axis; on-midline adds no neighbor.
    ax, ay = cell
    cells = []
    fx = box.cx - stride * ax
    if fx < stride / 2:
        cells.append((ax - 1, ay))
    elif fx > stride / 2:
        cells.append((ax + 1, ay))
    fy = box.cy - stride * ay
    if fy < stride / 2:
        cells.append((ax, ay - 1))
    elif fy > stride / 2:
        cells.append((ax, ay + 1))
    return cells


def _h_center_cells(box: BoundingBox, stride: int) -> list[tuple[int, int]]:
    # Midpoints of the segments from the center to the top-left and
    # bottom-right corners.
    return [
        center_cell(box.cx - box.w / 4, box.cy - box.h / 4, stride),
        center_cell(box.cx + box.w / 4, box.cy + box.h / 4, stride),
    ]


def _corner_cells(box: BoundingBox, stride: int) -> list[tuple[int, int]]:
    # Floor convention: a corner on a grid line belongs to the cell whose
    # top-left point it is.
    return [
        center_cell(box.x1, box.y1, stride),
        center_cell(box.x2, box.y1, stride),
        center_cell(box.x1, box.y2, stride),
        center_cell(box.x2, box.y2, stride),
    ]


def _candidate_cells(
    box: BoundingBox, cell: tuple[int, int], stride: int, strategy: str
) -> list[tuple[int, int]]:
    if strategy == "center":
        return [cell]
    if strategy == "aug_center":
        return [cell] + _neighbor_cells(box, cell, stride)
    if strategy == "h_centers":
        return _h_center_cells(box, stride)
    if strategy == "aug_center_plus_h_centers":
        return [cell] + _neighbor_cells(box, cell, stride) + _h_center_cells(box, stride)
    if strategy == "four_corners":
        return _corner_cells(box, stride)
    if strategy == "four_corners_plus_center":
        return _corner_cells(box, stride) + [cell]
    raise AssignmentError(f"unknown location strategy {strategy!r}")


def _quadrant(box: BoundingBox, cell: tuple[int, int], stride: int) -> int:
    # 2x2 sub-quadrant of the record's cell nearest the object center.
    qx = 0 if box.cx < stride * (cell[0] + 0.5) else 1
    qy = 0 if box.cy < stride * (cell[1] + 0.5) else 1
    return 2 * qy + qx


def assign(
    objects: Sequence[tuple[BoundingBox, int]],
    scale: ScaleConfig,
    mode: AssignMode = AssignMode(),
) -> list[AssignmentRecord]:
    """Emit the positive samples for a scene at every scale.

    Cells are deduplicated per (object, scale); targets always come from
    the corner-distance formula evaluated at the record's own cell. Center
    cells carry provably positive targets; shifted cells (neighbors,
    midpoints, corners) are encoded unchecked since sub-cell boxes can put
    a boundary on the far side of the shifted cell.

    Raises :class:`AssignmentError` for any object whose center is not
    strictly inside the image.
    """
    records: list[AssignmentRecord] = []
    for object_id, (box, class_id) in enumerate(objects):
        if not (0 < box.cx < scale.image_w and 0 < box.cy < scale.image_h):
            raise AssignmentError(
                f"object {object_id} center ({box.cx}, {box.cy}) not strictly "
                f"inside image {scale.image_w}x{scale.image_h}"
            )
        for scale_index, stride in enumerate(scale.strides):
            nx, ny = scale.grid_size(scale_index)
            ccell = center_cell(box.cx, box.cy, stride)
            seen: set[tuple[int, int]] = set()
            for cell in _candidate_cells(box, ccell, stride, mode.location_strategy):
                if cell in seen:
                    continue
                seen.add(cell)
                if not (0 <= cell[0] < nx and 0 <= cell[1] < ny):
                    continue
                target = encode(
                    box, cell, scale, scale_index,
                    require_positive=(cell == ccell),
                )
                quadrant = (
                    _quadrant(box, cell, stride)
                    if mode.predictions_per_cell == 4
                    else 0
                )
                records.append(
                    AssignmentRecord(
                        object_id=object_id,
                        class_id=class_id,
                        scale_index=scale_index,
                        cell=cell,
                        target=target,
                        quadrant=quadrant,
                    )
                )
    if mode.scale_thresholds is not None:
        records = apply_scale_constraints(records, mode.scale_thresholds, scale)
    return records


def record_box_size(record: AssignmentRecord, scale: ScaleConfig) -> tuple[float, float]:
    """Recover the object's pixel (w, h) from a record's sum identities."""
    s = scale.strides[record.scale_index]
    t = record.target
    return s * (t.l + t.r - 1.0), s * (t.t + t.b - 1.0)


def apply_scale_constraints(
    records: Iterable[AssignmentRecord],
    thresholds: Sequence[float],
    scale: ScaleConfig,
) -> list[AssignmentRecord]:
    """Drop records whose object size falls outside its scale's bracket.

    A record at scale i survives iff ``thresholds[i] <= max(w, h) <=
    thresholds[i+1]`` in pixels: an object strictly smaller than the lower
    bound in both dimensions, or strictly larger than the upper bound in
    either, becomes a negative at that scale. Identity when thresholds
    match the full range; idempotent and never adds records.
    """
    m = AssignMode(scale_thresholds=tuple(thresholds)).scale_thresholds
    assert m is not None
    if len(m) != scale.num_scales + 1:
        raise AssignmentError(
            f"need {scale.num_scales + 1} thresholds for {scale.num_scales} "
            f"scales, got {len(m)}"
        )
    kept = []
    for rec in records:
        w, h = record_box_size(rec, scale)
        size = max(w, h)
        if size < m[rec.scale_index] or size > m[rec.scale_index + 1]:
            continue
        kept.append(rec)
    return kept


def positives_per_object(records: Iterable[AssignmentRecord]) -> dict[int, int]:
    """Histogram of positive-sample counts keyed by object id."""
    return dict(Counter(rec.object_id for rec in records))


def center_collision_audit(
    objects: Sequence[tuple[BoundingBox, int]],
    scale: ScaleConfig,
) -> dict[int, list[tuple[tuple[int, int], tuple[int, ...]]]]:
    """Find center cells claimed by two or more mutually overlapping objects.

    For each scale, reports ``(cell, object_ids)`` for every cell that is
    the true center cell of at least two objects whose boxes overlap
    (reference IoU > 0). Objects sharing a cell without overlapping are not
    reported. Used to audit datasets for ambiguous center assignments.
    """
    report: dict[int, list[tuple[tuple[int, int], tuple[int, ...]]]] = {}
    corners = [to_corner(box) for box, _ in objects]
    for scale_index, stride in enumerate(scale.strides):
        by_cell: dict[tuple[int, int], list[int]] = defaultdict(list)
        for object_id, (box, _) in enumerate(objects):
            by_cell[center_cell(box.cx, box.cy, stride)].append(object_id)
        hits = []
        for cell in sorted(by_cell):
            ids = by_cell[cell]
            if len(ids) < 2:
                continue
            overlapping = tuple(
                i for i in ids
                if any(i != j and iou(corners[i], corners[j]) > 0 for j in ids)
            )
            if len(overlapping) >= 2:
                hits.append((cell, overlapping))
        report[scale_index] = hits
    return report
