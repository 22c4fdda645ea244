"""JSON interchange: COCO-layout ground truth, prediction arrays and semantic maps.

Every mask travels as uncompressed column-major RLE,
``{"size": [H, W], "counts": [...]}``. Parsers collect one diagnostic per bad
record instead of stopping at the first one; the ``load_*`` helpers raise
:class:`ValidationError` carrying all of them.
"""

from __future__ import annotations

import json
import numbers
from pathlib import Path
from typing import Any, Iterable

from maskfuse.errors import MaskFuseError, ValidationError
from maskfuse.evaluation import Annotation, GroundTruth
from maskfuse.masks import Box, RleMask, bbox_from_mask, rle_decode, rle_encode
from maskfuse.nms import Detection
from maskfuse.semantic import SemanticMap


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: malformed JSON at offset {exc.pos} (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _is_id(value) -> bool:
    return isinstance(value, (int, str)) and not isinstance(value, bool)


def _decode_segmentation(rec: dict, where: str):
    if "segmentation" not in rec:
        raise ValueError(f"{where}: missing field 'segmentation'")
    try:
        return rle_decode(RleMask.from_json(rec["segmentation"]))
    except (MaskFuseError, TypeError, ValueError) as exc:
        raise ValueError(f"{where}: bad segmentation: {exc}") from exc


def _parse_box(value, where: str) -> Box:
    if (
        not isinstance(value, list)
        or len(value) != 4
        or not all(isinstance(v, numbers.Real) and not isinstance(v, bool) for v in value)
    ):
        raise ValueError(f"{where}: bbox must be [x, y, w, h] numbers, got {value!r}")
    box = Box.from_list(value)
    if box.x < 0 or box.y < 0 or box.w < 0 or box.h < 0:
        raise ValueError(f"{where}: bbox has negative entries {value!r}")
    return box


def _records(data, source: str, key: str | None = None) -> tuple[list, list[str]]:
    if key is not None:
        if not isinstance(data, dict) or not isinstance(data.get(key), list):
            return [], [f"{source}: expected an object with a '{key}' list"]
        return data[key], []
    if not isinstance(data, list):
        return [], [f"{source}: expected a JSON array of records"]
    return data, []


def parse_ground_truth(data, source: str = "<gt>") -> tuple[GroundTruth | None, list[str]]:
    diagnostics: list[str] = []
    images: dict = {}
    categories: dict = {}
    annotations: list[Annotation] = []
    for key in ("images", "categories", "annotations"):
        _, problems = _records(data, source, key)
        diagnostics += problems
    if diagnostics:
        return None, diagnostics

    for i, rec in enumerate(data["images"]):
        where = f"{source}: images[{i}]"
        try:
            if not _is_id(rec.get("id")):
                raise ValueError(f"{where}: missing or invalid 'id'")
            height, width = rec["height"], rec["width"]
            if not (isinstance(height, int) and isinstance(width, int) and height > 0 and width > 0):
                raise ValueError(f"{where}: height/width must be positive integers")
            if rec["id"] in images:
                raise ValueError(f"{where}: duplicate image id {rec['id']!r}")
            images[rec["id"]] = (height, width)
        except (KeyError, AttributeError, TypeError) as exc:
            diagnostics.append(f"{where}: missing field {exc}")
        except ValueError as exc:
            diagnostics.append(str(exc))
    for i, rec in enumerate(data["categories"]):
        where = f"{source}: categories[{i}]"
        if not isinstance(rec, dict) or not _is_id(rec.get("id")):
            diagnostics.append(f"{where}: missing or invalid 'id'")
            continue
        categories[rec["id"]] = str(rec.get("name", rec["id"]))
    for i, rec in enumerate(data["annotations"]):
        where = f"{source}: annotations[{i}]"
        try:
            if not isinstance(rec, dict):
                raise ValueError(f"{where}: expected an object")
            for field in ("image_id", "category_id"):
                if field not in rec:
                    raise ValueError(f"{where}: missing field '{field}'")
            if rec["image_id"] not in images:
                raise ValueError(f"{where}: unknown image_id {rec['image_id']!r}")
            if rec["category_id"] not in categories:
                raise ValueError(f"{where}: unknown category_id {rec['category_id']!r}")
            mask = _decode_segmentation(rec, where)
            if mask.shape != images[rec["image_id"]]:
                raise ValueError(
                    f"{where}: mask size {list(mask.shape)} != image size {list(images[rec['image_id']])}"
                )
            box = _parse_box(rec["bbox"], where) if "bbox" in rec else bbox_from_mask(mask)
            annotations.append(Annotation(rec["image_id"], rec["category_id"], mask, box))
        except ValueError as exc:
            diagnostics.append(str(exc))
    if diagnostics:
        return None, diagnostics
    return GroundTruth(images, categories, annotations), []


def parse_predictions(
    data,
    source: str = "<predictions>",
    gt: GroundTruth | None = None,
    mask_size: tuple[int, int] | None = None,
) -> tuple[list[Detection], list[str]]:
    """Parse a prediction array.

    With ``gt``, image and category ids must exist there and masks must match
    the image size, unless ``mask_size`` names the size every mask must have
    instead (predictions made at a test-time scale).
    """
    records, diagnostics = _records(data, source)
    dets = []
    for i, rec in enumerate(records):
        where = f"{source}: record {i}"
        try:
            if not isinstance(rec, dict):
                raise ValueError(f"{where}: expected an object")
            for field in ("image_id", "category_id", "score", "bbox", "segmentation"):
                if field not in rec:
                    raise ValueError(f"{where}: missing field '{field}'")
            score = rec["score"]
            if not isinstance(score, numbers.Real) or isinstance(score, bool) or not 0 <= score <= 1:
                raise ValueError(f"{where}: score {score!r} outside [0, 1]")
            mask = _decode_segmentation(rec, where)
            box = _parse_box(rec["bbox"], where)
            if gt is not None:
                if rec["image_id"] not in gt.images:
                    raise ValueError(f"{where}: image_id {rec['image_id']!r} not in ground truth")
                if rec["category_id"] not in gt.categories:
                    raise ValueError(f"{where}: category_id {rec['category_id']!r} not in ground truth")
                expected = mask_size or gt.images[rec["image_id"]]
                if mask.shape != tuple(expected):
                    raise ValueError(f"{where}: mask size {list(mask.shape)} != expected {list(expected)}")
            elif mask_size is not None and mask.shape != tuple(mask_size):
                raise ValueError(f"{where}: mask size {list(mask.shape)} != expected {list(mask_size)}")
            dets.append(Detection(rec["image_id"], rec["category_id"], float(score), box, mask))
        except ValueError as exc:
            diagnostics.append(str(exc))
    return dets, diagnostics


def parse_semantic_maps(data, source: str = "<semantic>") -> tuple[list[SemanticMap], list[str]]:
    records, diagnostics = _records(data, source)
    maps = []
    seen = set()
    for i, rec in enumerate(records):
        where = f"{source}: record {i}"
        try:
            if not isinstance(rec, dict) or "image_id" not in rec:
                raise ValueError(f"{where}: missing field 'image_id'")
            if rec["image_id"] in seen:
                raise ValueError(f"{where}: duplicate semantic map for image {rec['image_id']!r}")
            seen.add(rec["image_id"])
            maps.append(SemanticMap(rec["image_id"], _decode_segmentation(rec, where)))
        except ValueError as exc:
            diagnostics.append(str(exc))
    return maps, diagnostics


def _raise_if(diagnostics: list[str], source) -> None:
    if diagnostics:
        raise ValidationError(f"{source}: {len(diagnostics)} problem(s); first: {diagnostics[0]}", diagnostics)


def load_ground_truth(path: str | Path) -> GroundTruth:
    gt, diagnostics = parse_ground_truth(read_json(path), str(path))
    _raise_if(diagnostics, path)
    return gt


def load_predictions(
    path: str | Path, gt: GroundTruth | None = None, mask_size: tuple[int, int] | None = None
) -> list[Detection]:
    dets, diagnostics = parse_predictions(read_json(path), str(path), gt, mask_size)
    _raise_if(diagnostics, path)
    return dets


def load_semantic_maps(path: str | Path) -> list[SemanticMap]:
    maps, diagnostics = parse_semantic_maps(read_json(path), str(path))
    _raise_if(diagnostics, path)
    return maps


def detection_to_json(det: Detection) -> dict:
    return {
        "image_id": det.image_id,
        "category_id": det.category_id,
        "score": float(det.score),
        "bbox": [float(v) for v in det.box.to_list()],
        "segmentation": rle_encode(det.mask).to_json(),
    }


def dump_predictions(dets: Iterable[Detection]) -> list[dict]:
    return [detection_to_json(d) for d in dets]


def semantic_map_to_json(smap: SemanticMap) -> dict:
    return {"image_id": smap.image_id, "segmentation": rle_encode(smap.mask).to_json()}


def ground_truth_to_json(gt: GroundTruth) -> dict:
    return {
        "images": [{"id": i, "height": h, "width": w} for i, (h, w) in gt.images.items()],
        "categories": [{"id": c, "name": n} for c, n in gt.categories.items()],
        "annotations": [
            {
                "id": k + 1,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": [float(v) for v in a.box.to_list()],
                "area": int(a.mask.sum()),
                "iscrowd": 0,
                "segmentation": rle_encode(a.mask).to_json(),
            }
            for k, a in enumerate(gt.annotations)
        ],
    }
