"""COCO-format annotation ingestion into the shared scene representation.

Only geometry and category fields are read; pixels, segmentation masks,
and crowd regions are never loaded. Top-left (x, y, w, h) boxes convert to
center form. Annotations that cannot become valid scene objects are
skipped and counted by reason: non-positive width or height, center not
strictly inside the image, or crowd regions (which assignment never uses).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assign import AssignMode, assign, center_collision_audit, positives_per_object
from .codec import ScaleConfig
from .geom import BoundingBox


class CocoFormatError(ValueError):
    """Malformed annotation file; the message names the path and field."""


@dataclass(frozen=True)
class Scene:
    """One image's worth of ground truth: size plus (box, class) pairs."""

    image_w: float
    image_h: float
    objects: tuple[tuple[BoundingBox, int], ...]
    source_id: str = ""


@dataclass
class SkipCounts:
    nonpositive_size: int = 0
    center_outside: int = 0
    iscrowd: int = 0

    @property
    def total(self) -> int:
        return self.nonpositive_size + self.center_outside + self.iscrowd


@dataclass
class CocoLoadResult:
    scenes: list[Scene]
    skipped: SkipCounts = field(default_factory=SkipCounts)
    n_annotations: int = 0

    @property
    def n_converted(self) -> int:
        return sum(len(s.objects) for s in self.scenes)


def _require(mapping, key, where: str, path):
    try:
        return mapping[key]
    except (KeyError, TypeError):
        raise CocoFormatError(f"{path}: missing field {key!r} in {where}") from None


def load_coco(path) -> CocoLoadResult:
    """Load a COCO instances file; every annotation converts or is counted.

    Scenes come back ordered by image id, one per listed image (empty
    object lists included). Raises :class:`CocoFormatError` for malformed
    JSON, missing fields, or annotations referencing unknown images or
    categories.
    """
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise CocoFormatError(f"{path}: cannot read file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CocoFormatError(f"{path}: invalid JSON: {exc}") from exc

    images = _require(doc, "images", "document", path)
    annotations = _require(doc, "annotations", "document", path)
    categories = _require(doc, "categories", "document", path)

    category_ids = {_require(c, "id", "category", path) for c in categories}
    sizes: dict[int, tuple[float, float]] = {}
    for img in images:
        img_id = _require(img, "id", "image", path)
        sizes[img_id] = (
            float(_require(img, "width", f"image {img_id}", path)),
            float(_require(img, "height", f"image {img_id}", path)),
        )

    objects: dict[int, list[tuple[BoundingBox, int]]] = {i: [] for i in sizes}
    skipped = SkipCounts()
    for ann in annotations:
        img_id = _require(ann, "image_id", "annotation", path)
        if img_id not in sizes:
            raise CocoFormatError(f"{path}: annotation references unknown image_id {img_id}")
        cat = _require(ann, "category_id", f"annotation for image {img_id}", path)
        if cat not in category_ids:
            raise CocoFormatError(
                f"{path}: annotation references undeclared category_id {cat}"
            )
        bbox = _require(ann, "bbox", f"annotation for image {img_id}", path)
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise CocoFormatError(
                f"{path}: bbox must be [x, y, w, h], got {bbox!r}"
            )
        if ann.get("iscrowd", 0):
            skipped.iscrowd += 1
            continue
        x, y, w, h = (float(v) for v in bbox)
        if w <= 0 or h <= 0:
            skipped.nonpositive_size += 1
            continue
        cx, cy = x + w / 2, y + h / 2
        img_w, img_h = sizes[img_id]
        if not (0 < cx < img_w and 0 < cy < img_h):
            skipped.center_outside += 1
            continue
        objects[img_id].append((BoundingBox(cx, cy, w, h), int(cat)))

    scenes = [
        Scene(
            image_w=sizes[img_id][0],
            image_h=sizes[img_id][1],
            objects=tuple(objects[img_id]),
            source_id=str(img_id),
        )
        for img_id in sorted(sizes)
    ]
    return CocoLoadResult(scenes=scenes, skipped=skipped, n_annotations=len(annotations))


def bbox_xywh(box: BoundingBox) -> list[float]:
    """Back to COCO's top-left (x, y, w, h) form."""
    return [box.x1, box.y1, box.w, box.h]


def export_coco(scenes: list[Scene]) -> dict:
    """Rebuild a minimal COCO document from scenes (exact inverse of load
    for annotations that were converted)."""
    images = []
    annotations = []
    cats = set()
    ann_id = 1
    for idx, scene in enumerate(scenes):
        img_id = int(scene.source_id) if scene.source_id.isdigit() else idx + 1
        images.append(
            {"id": img_id, "width": scene.image_w, "height": scene.image_h}
        )
        for box, class_id in scene.objects:
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": img_id,
                    "category_id": class_id,
                    "bbox": bbox_xywh(box),
                    "iscrowd": 0,
                }
            )
            cats.add(class_id)
            ann_id += 1
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c} for c in sorted(cats)],
    }


def _scene_scale(scene: Scene, scale: ScaleConfig) -> ScaleConfig:
    if (scene.image_w, scene.image_h) == (scale.image_w, scale.image_h):
        return scale
    return ScaleConfig(
        strides=scale.strides,
        gains=scale.gains,
        image_w=int(scene.image_w),
        image_h=int(scene.image_h),
    )


def dataset_stats(
    scenes: list[Scene],
    scale: ScaleConfig,
    mode: AssignMode = AssignMode(),
) -> dict:
    """Aggregate assignment counts and center-collision findings.

    Returns a JSON-ready report: scene/object totals, the min/median/max of
    positive samples per object, per-scale record counts, and per-scale
    collision totals with their (scene, cell, objects) details.
    """
    counts: list[int] = []
    per_scale_records = {i: 0 for i in range(scale.num_scales)}
    collisions = {i: 0 for i in range(scale.num_scales)}
    details = []
    n_objects = 0
    for scene in scenes:
        cfg = _scene_scale(scene, scale)
        n_objects += len(scene.objects)
        if not scene.objects:
            continue
        records = assign(list(scene.objects), cfg, mode)
        hist = positives_per_object(records)
        # objects filtered out at every scale still count as zero positives
        counts.extend(hist.get(i, 0) for i in range(len(scene.objects)))
        for rec in records:
            per_scale_records[rec.scale_index] += 1
        audit = center_collision_audit(list(scene.objects), cfg)
        for scale_index, hits in audit.items():
            collisions[scale_index] += len(hits)
            for cell, ids in hits:
                details.append(
                    {
                        "scene": scene.source_id,
                        "scale": scale_index,
                        "cell": list(cell),
                        "objects": list(ids),
                    }
                )
    positives = {
        "min": int(min(counts)) if counts else 0,
        "median": float(np.median(counts)) if counts else 0.0,
        "max": int(max(counts)) if counts else 0,
        "total": int(sum(counts)),
        "per_scale": {str(k): int(v) for k, v in per_scale_records.items()},
    }
    return {
        "n_scenes": len(scenes),
        "n_objects": n_objects,
        "positives": positives,
        "collisions": {
            "per_scale": {str(k): int(v) for k, v in collisions.items()},
            "total": int(sum(collisions.values())),
            "details": details,
        },
    }
