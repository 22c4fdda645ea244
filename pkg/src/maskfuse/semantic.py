"""Supplement confident instance masks with defect pixels from a binary semantic map."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from maskfuse.errors import ConfigError, ContractError, ShapeError
from maskfuse.masks import BinaryMask, as_mask, bbox_from_mask
from maskfuse.nms import Detection

REGION_RULES = ("bbox-clip", "whole-image")


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Per-image defect/background map; true marks a defect pixel."""

    image_id: Hashable
    mask: BinaryMask

    def __post_init__(self):
        object.__setattr__(self, "mask", as_mask(self.mask))


@dataclass(frozen=True)
class SemanticFusionConfig:
    tau1: float = 0.5
    region_rule: str = "bbox-clip"

    def __post_init__(self):
        if not 0.0 <= self.tau1 <= 1.0:
            raise ConfigError(f"tau1 {self.tau1} outside [0, 1]")
        if self.region_rule not in REGION_RULES:
            raise ConfigError(f"unknown region_rule {self.region_rule!r}; choose from {REGION_RULES}")


def _fuse_one(det: Detection, defects: BinaryMask, cfg: SemanticFusionConfig) -> Detection:
    if cfg.region_rule == "whole-image":
        fused = det.mask | defects
    else:
        rows, cols = det.box.pixel_slices(*defects.shape)
        fused = det.mask.copy()
        fused[rows, cols] |= defects[rows, cols]
    # union with the old box so the box never shrinks
    box = det.box.union(bbox_from_mask(fused))
    return dataclasses.replace(det, mask=fused, box=box)


def fuse_semantic(
    instances: Sequence[Detection],
    semantic: SemanticMap,
    cfg: SemanticFusionConfig | None = None,
) -> list[Detection]:
    """Union semantic defect pixels into every instance scoring above ``tau1``.

    Under ``bbox-clip`` only defect pixels inside the instance's box are
    added; ``whole-image`` adds every defect pixel. Category and score are
    kept, the box grows to cover the fused mask. Instances at or below the
    threshold are returned as the very same objects, in the same order.
    """
    cfg = cfg or SemanticFusionConfig()
    out = []
    for det in instances:
        if det.image_id != semantic.image_id:
            raise ContractError(
                f"instance on image {det.image_id!r} fused with semantic map of {semantic.image_id!r}"
            )
        if det.mask.shape != semantic.mask.shape:
            raise ShapeError(
                f"instance mask {det.mask.shape} vs semantic map {semantic.mask.shape} "
                f"on image {det.image_id!r}"
            )
        if det.score > cfg.tau1 and np.any(semantic.mask):
            out.append(_fuse_one(det, semantic.mask, cfg))
        else:
            out.append(det)
    return out
