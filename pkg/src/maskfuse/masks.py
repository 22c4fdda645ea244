"""Binary masks, COCO uncompressed RLE, boxes and the geometric kernels.

A binary mask is a plain 2-D ``numpy`` bool array of shape ``(height, width)``.
Masks stay dense in memory; RLE is only used at the I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from maskfuse.errors import MalformedRLEError, ShapeError

BinaryMask = NDArray[np.bool_]


def as_mask(array) -> BinaryMask:
    """Coerce ``array`` to a 2-D bool mask (no copy if it already is one)."""
    mask = np.asarray(array)
    if mask.ndim != 2:
        raise ShapeError(f"binary mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != np.bool_:
        mask = mask.astype(bool)
    return mask


def empty_mask(height: int, width: int) -> BinaryMask:
    return np.zeros((height, width), dtype=bool)


@dataclass(frozen=True)
class RleMask:
    """Uncompressed COCO RLE: column-major runs, the first run counts zeros."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            height, width = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRLEError(f"RLE must have 'size':[H,W] and 'counts': {exc}") from exc
        if isinstance(counts, str):
            raise MalformedRLEError("compressed RLE strings are not supported; use a counts list")
        return cls(int(height), int(width), tuple(counts))


def rle_encode(mask: BinaryMask) -> RleMask:
    mask = as_mask(mask)
    height, width = mask.shape
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return RleMask(height, width, ())
    # positions where the value changes, plus both ends
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return RleMask(height, width, tuple(runs))


def rle_decode(rle: RleMask) -> BinaryMask:
    counts = np.asarray(rle.counts, dtype=np.int64)
    total = rle.height * rle.width
    if (counts < 0).any():
        raise MalformedRLEError("RLE counts must be non-negative")
    if int(counts.sum()) != total:
        raise MalformedRLEError(
            f"RLE counts sum to {int(counts.sum())}, expected {rle.height}x{rle.width}={total}"
        )
    if counts.size > 1 and (counts[1:] == 0).any():
        raise MalformedRLEError("RLE has an interior zero-length run")
    values = np.arange(counts.size) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((rle.height, rle.width), order="F")


def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")


def mask_area(mask: BinaryMask) -> int:
    return int(np.count_nonzero(mask))


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    return a | b


def mask_intersection(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    return a & b


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks; 0.0 when both are empty."""
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel units, ``(x, y)`` is the top-left corner."""

    x: float
    y: float
    w: float
    h: float

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return max(self.w, 0) * max(self.h, 0)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, xywh) -> "Box":
        x, y, w, h = xywh
        return cls(x, y, w, h)

    def union(self, other: "Box") -> "Box":
        """Smallest box containing both boxes."""
        if self.area == 0:
            return other
        if other.area == 0:
            return self
        x1, y1 = min(self.x, other.x), min(self.y, other.y)
        x2, y2 = max(self.x2, other.x2), max(self.y2, other.y2)
        return Box(x1, y1, x2 - x1, y2 - y1)

    def scaled(self, sx: float, sy: float) -> "Box":
        return Box(self.x * sx, self.y * sy, self.w * sx, self.h * sy)

    def pixel_slices(self, height: int, width: int) -> tuple[slice, slice]:
        """Row/column slices of the pixels the box touches, clipped to the image."""
        r0 = min(max(math.floor(self.y), 0), height)
        r1 = min(max(math.ceil(self.y2), r0), height)
        c0 = min(max(math.floor(self.x), 0), width)
        c1 = min(max(math.ceil(self.x2), c0), width)
        return slice(r0, r1), slice(c0, c1)

    def contains(self, other: "Box") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


def bbox_from_mask(mask: BinaryMask) -> Box:
    """Tightest box around the true pixels; ``Box(0, 0, 0, 0)`` for an empty mask."""
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return Box(0, 0, 0, 0)
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    return Box(c0, r0, c1 - c0 + 1, r1 - r0 + 1)


def bbox_iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    inter = max(iw, 0) * max(ih, 0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def mask_resize(mask: BinaryMask, new_h: int, new_w: int) -> BinaryMask:
    """Nearest-neighbour resize.

    Output pixel ``(r, c)`` samples source pixel
    ``(floor((r + 0.5) * H / new_h), floor((c + 0.5) * W / new_w))``; the
    floor is taken in integer arithmetic so no rounding error creeps in.
    """
    mask = as_mask(mask)
    if new_h < 0 or new_w < 0:
        raise ShapeError(f"target size must be non-negative, got {new_h}x{new_w}")
    height, width = mask.shape
    if height == 0 or width == 0:
        return empty_mask(new_h, new_w)
    rows = ((2 * np.arange(new_h) + 1) * height) // (2 * new_h) if new_h else np.arange(0)
    cols = ((2 * np.arange(new_w) + 1) * width) // (2 * new_w) if new_w else np.arange(0)
    return mask[np.ix_(rows, cols)]


class MaskOverlap:
    """Pairwise mask IoU over a fixed list of same-sized masks.

    Areas and tight boxes are computed once; each pair only touches the
    pixels where the two tight boxes overlap, so cost does not scale with
    image size.
    """

    def __init__(self, masks):
        self.masks = [as_mask(m) for m in masks]
        self.areas = [mask_area(m) for m in self.masks]
        self.boxes = [bbox_from_mask(m) for m in self.masks]

    def iou(self, i: int, j: int, other: "MaskOverlap | None" = None) -> float:
        """IoU of mask ``i`` of this set and mask ``j`` of ``other`` (default: this set)."""
        other = other or self
        a, b = self.boxes[i], other.boxes[j]
        r0, r1 = max(a.y, b.y), min(a.y2, b.y2)
        c0, c1 = max(a.x, b.x), min(a.x2, b.x2)
        inter = 0
        if r0 < r1 and c0 < c1:
            inter = int(
                np.count_nonzero(self.masks[i][r0:r1, c0:c1] & other.masks[j][r0:r1, c0:c1])
            )
        union = self.areas[i] + other.areas[j] - inter
        return inter / union if union else 0.0

    def iou_matrix(self, other: "MaskOverlap") -> np.ndarray:
        out = np.zeros((len(self.masks), len(other.masks)))
        for i in range(len(self.masks)):
            for j in range(len(other.masks)):
                out[i, j] = self.iou(i, j, other)
        return out
