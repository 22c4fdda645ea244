"""COCO-style mask mAP / mAR, semantic mean IoU and the per-dataset report.

Matching and precision interpolation follow the usual COCO evaluator rules
(greedy matching in score order, 101 recall points, precision envelope),
restricted to the all-areas setting with no crowd or ignore regions.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from maskfuse.errors import InputError, ShapeError
from maskfuse.masks import BinaryMask, Box, MaskOverlap, as_mask, bbox_iou
from maskfuse.nms import Detection
from maskfuse.semantic import SemanticMap


def _default_iou_thresholds() -> tuple[float, ...]:
    return tuple(np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1).tolist())


def _default_recall_points() -> tuple[float, ...]:
    return tuple(np.linspace(0.0, 1.0, int(np.round((1.0 - 0.0) / 0.01)) + 1).tolist())


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple[float, ...] = field(default_factory=_default_iou_thresholds)
    recall_points: tuple[float, ...] = field(default_factory=_default_recall_points)
    max_detections: int = 100
    overlap: str = "mask"

    def __post_init__(self):
        thr = np.asarray(self.iou_thresholds, dtype=float)
        if thr.size == 0 or (np.diff(thr) <= 0).any() or thr.min() < 0 or thr.max() > 1:
            raise ValueError(f"iou_thresholds must be strictly increasing in [0, 1]: {self.iou_thresholds}")
        if self.overlap not in ("mask", "box"):
            raise ValueError(f"overlap must be 'mask' or 'box', got {self.overlap!r}")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


@dataclass(frozen=True, eq=False)
class Annotation:
    image_id: Hashable
    category_id: Hashable
    mask: BinaryMask
    box: Box


@dataclass
class GroundTruth:
    """Annotations of one dataset.

    ``images`` maps image id to ``(height, width)``; ``categories`` maps
    category id to its name.
    """

    images: dict[Hashable, tuple[int, int]]
    categories: dict[Hashable, str]
    annotations: list[Annotation]

    def __post_init__(self):
        bad = []
        for i, ann in enumerate(self.annotations):
            if ann.image_id not in self.images:
                bad.append(f"annotation {i}: unknown image_id {ann.image_id!r}")
            elif ann.mask.shape != tuple(self.images[ann.image_id]):
                bad.append(
                    f"annotation {i}: mask {ann.mask.shape} vs image size {tuple(self.images[ann.image_id])}"
                )
            if ann.category_id not in self.categories:
                bad.append(f"annotation {i}: unknown category_id {ann.category_id!r}")
        if bad:
            raise InputError("; ".join(bad))

    def as_detections(self, score: float = 1.0) -> list[Detection]:
        return [
            Detection(a.image_id, a.category_id, score, a.box, a.mask) for a in self.annotations
        ]


@dataclass
class MatchRecord:
    """Greedy matching result for one (image, category) cell at one IoU threshold.

    ``scores`` and ``dt_matched`` follow the score-sorted, truncated
    detection order; ``gt_matched`` follows the ground-truth order.
    """

    scores: np.ndarray
    dt_matched: np.ndarray
    gt_matched: np.ndarray

    @property
    def num_gt(self) -> int:
        return int(self.gt_matched.size)


def _sorted_ids(ids):
    try:
        return sorted(ids)
    except TypeError:
        return sorted(ids, key=str)


def _rank(dets: Sequence[Detection], max_detections: int) -> list[Detection]:
    # stable: equal scores keep input order
    order = np.argsort([-d.score for d in dets], kind="mergesort")
    return [dets[i] for i in order[:max_detections]]


def overlap_matrix(dets: Sequence[Detection], gts: Sequence[Annotation], kind: str = "mask") -> np.ndarray:
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    if kind == "box":
        return np.array([[bbox_iou(d.box, g.box) for g in gts] for d in dets], dtype=float)
    return MaskOverlap([d.mask for d in dets]).iou_matrix(MaskOverlap([g.mask for g in gts]))


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_t: float,
    params: EvalParams | None = None,
    ious: np.ndarray | None = None,
) -> MatchRecord:
    """Greedily match detections of one image and category to ground truth.

    Detections are ranked by score (stable) and cut to ``max_detections``.
    Each one, in turn, takes the still-unmatched ground truth with the
    highest IoU that is at least ``iou_t``. ``ious`` may be passed in
    precomputed for the ranked detections to avoid recomputing it per
    threshold.
    """
    params = params or EvalParams()
    ranked = _rank(dets, params.max_detections)
    if ious is None:
        ious = overlap_matrix(ranked, gts, params.overlap)
    dt_matched = np.zeros(len(ranked), dtype=bool)
    gt_matched = np.zeros(len(gts), dtype=bool)
    for d in range(len(ranked)):
        best_iou = min(iou_t, 1 - 1e-10)
        best = -1
        for g in range(len(gts)):
            if gt_matched[g]:
                continue
            if ious[d, g] < best_iou:
                continue
            best_iou = ious[d, g]
            best = g
        if best >= 0:
            dt_matched[d] = True
            gt_matched[best] = True
    scores = np.array([d.score for d in ranked], dtype=float)
    return MatchRecord(scores, dt_matched, gt_matched)


def average_precision(records: Sequence[MatchRecord], recall_points: Sequence[float] | None = None) -> float | None:
    """101-point interpolated AP over the match records of one category and threshold.

    Returns ``None`` when the records hold no ground truth at all; such a
    category is left out of the averages.
    """
    recall_points = np.asarray(recall_points if recall_points is not None else _default_recall_points())
    num_gt = sum(r.num_gt for r in records)
    if num_gt == 0:
        return None
    if not records:
        return 0.0
    scores = np.concatenate([r.scores for r in records])
    matched = np.concatenate([r.dt_matched for r in records])
    order = np.argsort(-scores, kind="mergesort")
    tp = np.cumsum(matched[order]).astype(float)
    fp = np.cumsum(~matched[order]).astype(float)
    precision_at_point = np.zeros(len(recall_points))
    if tp.size:
        recall = tp / num_gt
        precision = tp / (tp + fp + np.spacing(1))
        # envelope: precision never increases to the left
        precision = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, recall_points, side="left")
        valid = idx < precision.size
        precision_at_point[valid] = precision[idx[valid]]
    return float(precision_at_point.mean())


@dataclass
class EvalResult:
    """mAP / mAR in percent, with the per-threshold, per-category cells behind them.

    ``ap`` and ``ar`` have shape ``(len(iou_thresholds), len(category_ids))``
    and hold fractions in [0, 1].
    """

    map: float
    mar: float
    category_ids: list
    ap: np.ndarray
    ar: np.ndarray


def _check_known_ids(predictions: Sequence[Detection], gt: GroundTruth) -> None:
    unknown_images = {d.image_id for d in predictions if d.image_id not in gt.images}
    unknown_cats = {d.category_id for d in predictions if d.category_id not in gt.categories}
    if unknown_images or unknown_cats:
        parts = []
        if unknown_images:
            parts.append(f"unknown image ids {_sorted_ids(unknown_images)}")
        if unknown_cats:
            parts.append(f"unknown category ids {_sorted_ids(unknown_cats)}")
        raise InputError("predictions reference " + " and ".join(parts))


def evaluate(
    predictions: Sequence[Detection],
    gt: GroundTruth,
    params: EvalParams | None = None,
) -> EvalResult:
    """Mask (or box) mAP@[.5:.95] and mAR@[.5:.95] in percent.

    Categories without any ground-truth instance in ``gt`` are excluded.
    With no evaluable category at all, both metrics are 0.
    """
    params = params or EvalParams()
    predictions = list(predictions)
    _check_known_ids(predictions, gt)

    dets_by_cell: dict[tuple, list[Detection]] = defaultdict(list)
    for det in predictions:
        dets_by_cell[(det.image_id, det.category_id)].append(det)
    gts_by_cell: dict[tuple, list[Annotation]] = defaultdict(list)
    for ann in gt.annotations:
        gts_by_cell[(ann.image_id, ann.category_id)].append(ann)

    image_ids = _sorted_ids(gt.images)
    cat_ids = [c for c in _sorted_ids(gt.categories) if any(a.category_id == c for a in gt.annotations)]
    thresholds = params.iou_thresholds
    ap = np.zeros((len(thresholds), len(cat_ids)))
    ar = np.zeros((len(thresholds), len(cat_ids)))

    for k, cat in enumerate(cat_ids):
        records: list[list[MatchRecord]] = [[] for _ in thresholds]
        for img in image_ids:
            gts = gts_by_cell.get((img, cat), [])
            dets = dets_by_cell.get((img, cat), [])
            if not gts and not dets:
                continue
            ranked = _rank(dets, params.max_detections)
            ious = overlap_matrix(ranked, gts, params.overlap)
            for t, iou_t in enumerate(thresholds):
                records[t].append(match_detections(ranked, gts, iou_t, params, ious=ious))
        for t in range(len(thresholds)):
            num_gt = sum(r.num_gt for r in records[t])
            ap[t, k] = average_precision(records[t], params.recall_points)
            ar[t, k] = sum(int(r.gt_matched.sum()) for r in records[t]) / num_gt

    if not cat_ids:
        return EvalResult(0.0, 0.0, [], ap, ar)
    return EvalResult(100.0 * float(ap.mean()), 100.0 * float(ar.mean()), cat_ids, ap, ar)


def semantic_mean_iou(pred_maps: Sequence[SemanticMap], gt_maps: Sequence[SemanticMap]) -> float:
    """Mean of defect IoU and background IoU over all pixels of all images, in percent.

    A class absent from both prediction and ground truth everywhere is left
    out of the mean.
    """
    preds = {m.image_id: m for m in pred_maps}
    gts = {m.image_id: m for m in gt_maps}
    unpaired = set(preds) ^ set(gts)
    if unpaired:
        raise InputError(f"semantic maps without a partner: {_sorted_ids(unpaired)}")
    inter = np.zeros(2, dtype=np.int64)
    union = np.zeros(2, dtype=np.int64)
    for image_id, gt_map in gts.items():
        p, g = as_mask(preds[image_id].mask), as_mask(gt_map.mask)
        if p.shape != g.shape:
            raise ShapeError(f"semantic map of image {image_id!r}: {p.shape} vs {g.shape}")
        inter += [np.count_nonzero(~p & ~g), np.count_nonzero(p & g)]
        union += [np.count_nonzero(~p | ~g), np.count_nonzero(p | g)]
    present = union > 0
    if not present.any():
        raise InputError("no pixels to evaluate")
    return 100.0 * float(np.mean(inter[present] / union[present]))


@dataclass
class MetricsReport:
    per_dataset: dict[str, dict[str, float]]
    average_map: float
    average_mar: float
    combined: float
    semantic_miou: dict[str, float] | None = None

    def to_json(self, decimals: int = 2) -> dict:
        def r(x):
            return round(float(x), decimals)

        out = {
            "per_dataset": {
                name: {"mAP": r(m["mAP"]), "mAR": r(m["mAR"])} for name, m in self.per_dataset.items()
            },
            "average_map": r(self.average_map),
            "average_mar": r(self.average_mar),
            "combined": r(self.combined),
        }
        if self.semantic_miou is not None:
            out["semantic_miou"] = {name: r(v) for name, v in self.semantic_miou.items()}
        return out

    def render_table(self, title: str = "") -> str:
        """Plain-text table: datasets as columns, mAP/mAR rows, Average and (mAP+mAR)/2 columns."""
        names = list(self.per_dataset)
        header = [title] + names + ["Average", "(mAP+mAR)/2"]
        rows = [
            ["mAP"] + [f"{self.per_dataset[n]['mAP']:.2f}" for n in names]
            + [f"{self.average_map:.2f}", f"{self.combined:.2f}"],
            ["mAR"] + [f"{self.per_dataset[n]['mAR']:.2f}" for n in names]
            + [f"{self.average_mar:.2f}", ""],
        ]
        if self.semantic_miou:
            rows.append(
                ["mean IoU"]
                + [f"{self.semantic_miou[n]:.2f}" if n in self.semantic_miou else "-" for n in names]
                + ["", ""]
            )
        widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
        lines = []
        for row in [header] + rows:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines)


def _as_pair(metrics) -> tuple[float, float]:
    if isinstance(metrics, EvalResult):
        return metrics.map, metrics.mar
    if isinstance(metrics, Mapping):
        return float(metrics["mAP"]), float(metrics["mAR"])
    mean_ap, mean_ar = metrics
    return float(mean_ap), float(mean_ar)


def aggregate_report(
    per_dataset: Mapping[str, object],
    semantic_mious: Mapping[str, float] | None = None,
) -> MetricsReport:
    """Unweighted means over datasets plus the combined ``(mAP + mAR) / 2`` score.

    Each value of ``per_dataset`` may be an :class:`EvalResult`, a
    ``{"mAP": .., "mAR": ..}`` mapping or an ``(mAP, mAR)`` pair, in percent.
    """
    if not per_dataset:
        raise InputError("aggregate_report needs at least one dataset")
    pairs = {name: _as_pair(m) for name, m in per_dataset.items()}
    average_map = float(np.mean([p[0] for p in pairs.values()]))
    average_mar = float(np.mean([p[1] for p in pairs.values()]))
    return MetricsReport(
        per_dataset={name: {"mAP": p[0], "mAR": p[1]} for name, p in pairs.items()},
        average_map=average_map,
        average_mar=average_mar,
        combined=(average_map + average_mar) / 2,
        semantic_miou=dict(semantic_mious) if semantic_mious is not None else None,
    )
