"""Multi-model and multi-scale fusion: confidence reweighting then mask-IoU NMS."""

from __future__ import annotations

import dataclasses
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

from maskfuse.errors import ConfigError, ContractError
from maskfuse.masks import mask_resize
from maskfuse.nms import Detection, NmsConfig, suppress

WEIGHT_MODES = ("explicit", "map-normalized")


@dataclass(frozen=True)
class PredictionSet:
    """All detections from one model (or one test-time scale)."""

    model_id: Hashable
    detections: tuple[Detection, ...]
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        if not self.weight >= 0:
            raise ConfigError(f"weight of {self.model_id!r} must be >= 0, got {self.weight}")


def _default_ensemble_nms() -> NmsConfig:
    return NmsConfig(method="hard", overlap="mask-iou", iou_threshold=0.5)


@dataclass(frozen=True)
class EnsembleConfig:
    weights_mode: str = "explicit"
    model_maps: Mapping[Hashable, float] | None = None
    nms: NmsConfig = field(default_factory=_default_ensemble_nms)

    def __post_init__(self):
        if self.weights_mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weights_mode {self.weights_mode!r}; choose from {WEIGHT_MODES}")
        if self.weights_mode == "map-normalized":
            if not self.model_maps or max(self.model_maps.values()) <= 0:
                raise ConfigError("map-normalized weights need model_maps with a positive maximum")
        if self.nms.overlap != "mask-iou":
            object.__setattr__(self, "nms", dataclasses.replace(self.nms, overlap="mask-iou"))


def derive_weights(model_maps: Mapping[Hashable, float]) -> dict[Hashable, float]:
    """Scale each model's mask mAP by the best one: ``weight = mAP / max mAP``."""
    if not model_maps:
        raise ConfigError("cannot derive weights from an empty mAP table")
    if any(v < 0 for v in model_maps.values()):
        raise ConfigError(f"mAP values must be non-negative: {dict(model_maps)}")
    best = max(model_maps.values())
    if best <= 0:
        raise ConfigError("cannot derive weights when every mAP is zero")
    return {model: value / best for model, value in model_maps.items()}


def resolve_weights(sets: Sequence[PredictionSet], cfg: EnsembleConfig) -> list[float]:
    if cfg.weights_mode == "explicit":
        return [s.weight for s in sets]
    weights = derive_weights(cfg.model_maps)
    missing = [s.model_id for s in sets if s.model_id not in weights]
    if missing:
        raise ConfigError(f"no mAP given for model(s) {missing}")
    return [weights[s.model_id] for s in sets]


def ensemble_fuse(sets: Sequence[PredictionSet], cfg: EnsembleConfig | None = None) -> list[Detection]:
    """Reweight every model's scores, pool them and run mask-IoU NMS per (image, category).

    The pool is put in a canonical order (score desc, model id, position in
    its set) before suppression, so permuting ``sets`` does not change the
    result.
    """
    cfg = cfg or EnsembleConfig()
    weights = resolve_weights(sets, cfg)

    sizes: dict[Hashable, tuple[int, int]] = {}
    pooled = []
    for pset, weight in zip(sets, weights):
        for pos, det in enumerate(pset.detections):
            size = sizes.setdefault(det.image_id, det.mask.shape)
            if size != det.mask.shape:
                raise ContractError(
                    f"image {det.image_id!r} has mask size {det.mask.shape} in model "
                    f"{pset.model_id!r} but {size} elsewhere"
                )
            score = min(max(det.score * weight, 0.0), 1.0)
            if score != det.score:
                det = det.with_score(score)
            pooled.append((det, str(pset.model_id), pos))

    pooled.sort(key=lambda item: (-item[0].score, item[1], item[2]))
    return suppress([det for det, _, _ in pooled], cfg.nms)


def rescale_detection(det: Detection, height: int, width: int) -> Detection:
    src_h, src_w = det.mask.shape
    if (src_h, src_w) == (height, width):
        return det
    box = det.box.scaled(width / src_w, height / src_h)
    return dataclasses.replace(det, box=box, mask=mask_resize(det.mask, height, width))


def tta_merge(
    scaled_sets: Sequence[tuple[tuple[int, int], PredictionSet]],
    original_h: int,
    original_w: int,
    cfg: EnsembleConfig | None = None,
) -> list[Detection]:
    """Bring predictions made at several test scales back to the original size and fuse them.

    Args:
        scaled_sets: ``((height, width), PredictionSet)`` pairs; each set's masks
            must have exactly that size.
        original_h: Height of the original image.
        original_w: Width of the original image.
        cfg: Only ``nms`` is used; every scale gets weight 1.0.
    """
    cfg = cfg or EnsembleConfig()
    if original_h <= 0 or original_w <= 0:
        raise ConfigError(f"original size must be positive, got {original_h}x{original_w}")
    rescaled = []
    for (height, width), pset in scaled_sets:
        if height <= 0 or width <= 0:
            raise ConfigError(f"zero-area scale {height}x{width} for {pset.model_id!r}")
        dets = []
        for det in pset.detections:
            if det.mask.shape != (height, width):
                raise ContractError(
                    f"{pset.model_id!r}: mask {det.mask.shape} does not match scale {(height, width)}"
                )
            dets.append(rescale_detection(det, original_h, original_w))
        rescaled.append(PredictionSet(pset.model_id, dets, weight=1.0))
    return ensemble_fuse(rescaled, EnsembleConfig(weights_mode="explicit", nms=cfg.nms))


def group_by_image(detections: Sequence[Detection]) -> dict[Hashable, list[Detection]]:
    groups: dict[Hashable, list[Detection]] = defaultdict(list)
    for det in detections:
        groups[det.image_id].append(det)
    return dict(groups)
