"""Grid-relative corner-distance box coding.

A ground-truth box is represented, per feature-map scale, by four positive
distances measured in grid-cell units:

* ``l`` and ``t`` run from the assigned cell's *bottom-right* corner
  leftwards/upwards to the box's left and top boundaries,
* ``r`` and ``b`` run from the cell's *top-left* corner rightwards/downwards
  to the box's right and bottom boundaries.

For the cell containing the box center this makes all four distances
strictly positive for any positive-size box, even one smaller than a single
cell, and gives the exact identities ``l + r == w/stride + 1`` and
``t + b == h/stride + 1``. The identities are in fact independent of which
cell the distances are measured from: shifting the cell by one column moves
``l`` and ``r`` by -1/+1 and leaves the sum unchanged.

Raw network outputs map to distances through a doubled, squared sigmoid
scaled by a per-level gain::

    distance = (2 * sigmoid(p))**2 * gain

so each decoded distance lives in the open interval ``(0, 4 * gain)`` and is
strictly increasing in the logit. :func:`encode_logit` is the exact inverse,
used by round-trip tests and the synthetic fitting harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit


class CodecError(ValueError):
    """Raised for invalid scale configurations, assignments, or logit ranges."""


@dataclass(frozen=True)
class ScaleConfig:
    """Feature-map pyramid layout: strides, decode gains, image size.

    Strides must be strictly increasing and divide both image dimensions
    exactly, so every scale has an integer grid. Gains control the decoded
    distance range ``(0, 4 * gain)`` per scale; the default doubles across
    the first two levels and jumps to 16 at the coarsest, reading the
    level multipliers as powers of two with exponents 1, 2 and 4.
    """

    strides: tuple[int, ...] = (8, 16, 32)
    gains: tuple[float, ...] = (2.0, 4.0, 16.0)
    image_w: int = 640
    image_h: int = 640

    def __post_init__(self) -> None:
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        if not self.strides:
            raise CodecError("at least one stride is required")
        if any(s <= 0 for s in self.strides):
            raise CodecError(f"strides must be positive, got {self.strides}")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise CodecError(f"strides must be strictly increasing, got {self.strides}")
        if len(self.gains) != len(self.strides):
            raise CodecError(
                f"need one gain per stride: {len(self.gains)} gains, "
                f"{len(self.strides)} strides"
            )
        if any(g <= 0 for g in self.gains):
            raise CodecError(f"gains must be positive, got {self.gains}")
        for s in self.strides:
            if self.image_w % s or self.image_h % s:
                raise CodecError(
                    f"stride {s} does not divide image size "
                    f"{self.image_w}x{self.image_h}"
                )

    @property
    def num_scales(self) -> int:
        return len(self.strides)

    def grid_size(self, scale_index: int) -> tuple[int, int]:
        """Grid dimensions (cells_x, cells_y) at one scale."""
        s = self.strides[scale_index]
        return self.image_w // s, self.image_h // s


@dataclass(frozen=True)
class RegressionTarget:
    """Corner distances (l, t, r, b) in grid-cell units at one scale."""

    l: float
    t: float
    r: float
    b: float
    scale_index: int

    def as_array(self) -> np.ndarray:
        return np.array([self.l, self.t, self.r, self.b], dtype=float)


@dataclass(frozen=True)
class RawPrediction:
    """Unbounded distance logits (p0..p3) at one scale."""

    p0: float
    p1: float
    p2: float
    p3: float
    scale_index: int

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3], dtype=float)


def center_cell(cx: float, cy: float, stride: int) -> tuple[int, int]:
    """Grid cell containing a point: floor of the point over the stride."""
    return int(math.floor(cx / stride)), int(math.floor(cy / stride))


def encode(
    box,
    cell: tuple[int, int],
    scale: ScaleConfig,
    scale_index: int,
    *,
    require_positive: bool = True,
) -> RegressionTarget:
    """Encode a center-form box into corner distances relative to ``cell``.

    ``cell`` is normally the cell containing the box center; augmented
    assignment may substitute a neighboring cell, in which case individual
    distances shift by whole cells but the sum identities still hold.

    With ``require_positive`` (the default), a cell so far from the box
    that some distance is non-positive raises :class:`CodecError`; the
    assignment layer disables the check for deliberately shifted cells,
    whose targets can be legitimately non-positive for sub-cell boxes.
    """
    s = scale.strides[scale_index]
    ax, ay = cell
    l = (ax + 1) - box.x1 / s
    t = (ay + 1) - box.y1 / s
    r = box.x2 / s - ax
    b = box.y2 / s - ay
    if require_positive and min(l, t, r, b) <= 0:
        raise CodecError(
            f"cell {cell} is not a valid assignment for box at "
            f"({box.cx}, {box.cy}) stride {s}: distances "
            f"({l:.6g}, {t:.6g}, {r:.6g}, {b:.6g}) must all be positive"
        )
    return RegressionTarget(l, t, r, b, scale_index)


def decode_distances(p: np.ndarray, gain) -> np.ndarray:
    """Vectorized logit-to-distance map: ``(2*sigmoid(p))**2 * gain``."""
    s = expit(np.asarray(p, dtype=float))
    return 4.0 * np.asarray(gain, dtype=float) * s * s


def decode_jacobian(p: np.ndarray, gain) -> np.ndarray:
    """Elementwise derivative of :func:`decode_distances` in the logits."""
    s = expit(np.asarray(p, dtype=float))
    return 8.0 * np.asarray(gain, dtype=float) * s * s * (1.0 - s)


def encode_logit_array(d: np.ndarray, gain) -> np.ndarray:
    """Vectorized exact inverse of :func:`decode_distances`.

    Every entry must lie strictly inside ``(0, 4 * gain)``; the sigmoid
    cannot reach the endpoints.
    """
    d = np.asarray(d, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if np.any(d <= 0.0) or np.any(d >= 4.0 * gain):
        bad = np.argwhere((d <= 0.0) | (d >= 4.0 * gain))
        idx = tuple(bad[0])
        raise CodecError(
            f"distance {d[idx]:.6g} at index {idx} outside representable "
            f"open interval (0, {4.0 * np.max(gain):.6g})"
        )
    return logit(np.sqrt(d / gain) / 2.0)


def decode(raw: RawPrediction, scale: ScaleConfig) -> RegressionTarget:
    """Decode raw logits into corner distances at their scale."""
    d = decode_distances(raw.as_array(), scale.gains[raw.scale_index])
    return RegressionTarget(d[0], d[1], d[2], d[3], raw.scale_index)


_COMPONENTS = ("l", "t", "r", "b")


def encode_logit(target: RegressionTarget, scale: ScaleConfig) -> RawPrediction:
    """Exact inverse of :func:`decode` for targets inside the open range.

    Raises :class:`CodecError` naming the offending component when any
    distance falls outside ``(0, 4 * gain)`` for the target's scale.
    """
    gain = scale.gains[target.scale_index]
    d = target.as_array()
    hi = 4.0 * gain
    for name, value in zip(_COMPONENTS, d):
        if not (0.0 < value < hi):
            raise CodecError(
                f"component {name}={value:.6g} not representable at scale "
                f"{target.scale_index}: open interval (0, {hi:.6g})"
            )
    p = logit(np.sqrt(d / gain) / 2.0)
    return RawPrediction(p[0], p[1], p[2], p[3], target.scale_index)


def representable_range(scale: ScaleConfig, scale_index: int) -> tuple[float, float]:
    """Per-side pixel distance representable at a scale: (0, 4*gain*stride).

    Useful for reporting which objects are geometrically learnable where.
    """
    return 0.0, 4.0 * scale.gains[scale_index] * scale.strides[scale_index]
