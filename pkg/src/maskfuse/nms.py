"""Greedy non-maximum suppression: hard NMS and SoftNMS (linear / Gaussian).

Overlap between two detections is either the IoU of their boxes or the IoU
of their masks. Suppression runs independently per ``(image_id, category_id)``
group unless ``per_group=False`` is passed.
"""

from __future__ import annotations

import dataclasses
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Sequence

from maskfuse.errors import ConfigError, ContractError
from maskfuse.masks import BinaryMask, Box, MaskOverlap, as_mask, bbox_iou

METHODS = ("hard", "soft-linear", "soft-gaussian")
OVERLAPS = ("box-iou", "mask-iou")


@dataclass(frozen=True, eq=False)
class Detection:
    """One predicted instance. ``mask`` has the full image's height and width."""

    image_id: Hashable
    category_id: Hashable
    score: float
    box: Box
    mask: BinaryMask

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ContractError(f"detection score {self.score!r} outside [0, 1]")
        object.__setattr__(self, "mask", as_mask(self.mask))

    @property
    def image_size(self) -> tuple[int, int]:
        return self.mask.shape

    def with_score(self, score: float) -> "Detection":
        return dataclasses.replace(self, score=score)


@dataclass(frozen=True)
class NmsConfig:
    method: str = "soft-linear"
    overlap: str = "box-iou"
    iou_threshold: float = 0.3
    sigma: float = 0.5
    prune_threshold: float = 0.001

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown NMS method {self.method!r}; choose from {METHODS}")
        if self.overlap not in OVERLAPS:
            raise ConfigError(f"unknown overlap {self.overlap!r}; choose from {OVERLAPS}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold {self.iou_threshold} outside [0, 1]")
        if not 0.0 <= self.prune_threshold <= 1.0:
            raise ConfigError(f"prune_threshold {self.prune_threshold} outside [0, 1]")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


def _suppress_group(dets: list[Detection], cfg: NmsConfig) -> list[tuple[int, float]]:
    """Run greedy suppression on one group; returns (local index, final score)."""
    if cfg.overlap == "mask-iou":
        shapes = {d.mask.shape for d in dets}
        if len(shapes) > 1:
            raise ContractError(f"mask sizes differ within one image: {sorted(shapes)}")
        overlap = MaskOverlap([d.mask for d in dets]).iou
    else:
        boxes = [d.box for d in dets]

        def overlap(i: int, j: int) -> float:
            return bbox_iou(boxes[i], boxes[j])

    scores = [float(d.score) for d in dets]
    alive = [i for i in range(len(dets)) if scores[i] >= cfg.prune_threshold]
    kept = []
    while alive:
        # highest score first, lowest index on ties
        best = max(alive, key=lambda i: (scores[i], -i))
        kept.append((best, scores[best]))
        survivors = []
        for i in alive:
            if i == best:
                continue
            ov = overlap(best, i)
            if cfg.method == "hard":
                if ov > cfg.iou_threshold:
                    continue
            elif cfg.method == "soft-linear":
                if ov > cfg.iou_threshold:
                    scores[i] *= 1.0 - ov
            else:
                scores[i] *= math.exp(-(ov * ov) / cfg.sigma)
            if scores[i] < cfg.prune_threshold:
                continue
            survivors.append(i)
        alive = survivors
    return kept


def suppress(
    detections: Sequence[Detection],
    cfg: NmsConfig | None = None,
    *,
    per_group: bool = True,
) -> list[Detection]:
    """Suppress redundant detections.

    Args:
        detections: Candidate detections.
        cfg: Method, overlap measure and thresholds; defaults to ``NmsConfig()``.
        per_group: If true, suppress independently per ``(image_id, category_id)``.
            Otherwise all detections form one group (cross-class suppression)
            and must share one ``image_id``.

    Returns:
        Survivors sorted by final score descending, ties by input position.
        Detections whose score did not change are returned as the same objects.
    """
    cfg = cfg or NmsConfig()
    detections = list(detections)
    if not detections:
        return []

    groups: dict[tuple, list[int]] = defaultdict(list)
    if per_group:
        for idx, det in enumerate(detections):
            groups[(det.image_id, det.category_id)].append(idx)
    else:
        image_ids = {det.image_id for det in detections}
        if len(image_ids) > 1:
            raise ContractError(
                f"per_group=False needs a single image, got image ids {sorted(map(str, image_ids))}"
            )
        groups[()] = list(range(len(detections)))

    ranked = []
    for members in groups.values():
        group = [detections[i] for i in members]
        for local, score in _suppress_group(group, cfg):
            ranked.append((score, members[local]))
    ranked.sort(key=lambda item: (-item[0], item[1]))

    out = []
    for score, idx in ranked:
        det = detections[idx]
        out.append(det if score == det.score else det.with_score(score))
    return out
