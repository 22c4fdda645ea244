"""Post-processing toolkit for instance segmentation: mask fusion, SoftNMS, ensembling, COCO-style evaluation."""

from maskfuse.ensemble import EnsembleConfig, PredictionSet, derive_weights, ensemble_fuse, tta_merge
from maskfuse.evaluation import (
    EvalParams,
    GroundTruth,
    MetricsReport,
    aggregate_report,
    average_precision,
    evaluate,
    match_detections,
    semantic_mean_iou,
)
from maskfuse.masks import (
    Box,
    RleMask,
    bbox_from_mask,
    bbox_iou,
    mask_area,
    mask_intersection,
    mask_iou,
    mask_resize,
    mask_union,
    rle_decode,
    rle_encode,
)
from maskfuse.nms import Detection, NmsConfig, suppress
from maskfuse.semantic import SemanticFusionConfig, SemanticMap, fuse_semantic

__version__ = "0.1.0"
