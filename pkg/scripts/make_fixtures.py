"""Regenerate the committed test fixtures.

    python scripts/make_fixtures.py [--out tests/fixtures]

Writes
  coco_oracle/   20-image, 3-category GT + ~150 predictions, and the mask
                 AP/AR that pycocotools computes on them (reference.json)
  pipeline/      four small datasets (three models each, semantic maps, one
                 dataset predicted at two test scales) and a run config

pycocotools is only needed here, never by the library.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from maskfuse.ensemble import rescale_detection
from maskfuse.io import dump_predictions, ground_truth_to_json, semantic_map_to_json, write_json
from maskfuse.semantic import SemanticMap
from maskfuse.synthetic import jitter, random_blob, random_ground_truth, random_predictions

AVERAGE_MAP = {"htc": 47.20, "r50": 40.17, "convnext": 41.86}


def coco_reference(gt_json: dict, pred_json: list) -> dict:
    from pycocotools import mask as mask_utils
    from pycocotools.coco import COCO
    from pycocotools.cocoeval import COCOeval

    coco_gt = COCO()
    coco_gt.dataset = json.loads(json.dumps(gt_json))
    coco_gt.createIndex()

    results = []
    for det in pred_json:
        height, width = det["segmentation"]["size"]
        rle = mask_utils.frPyObjects(det["segmentation"], height, width)
        rle["counts"] = rle["counts"].decode("ascii")
        results.append({**det, "segmentation": rle})
    coco_dt = coco_gt.loadRes(results) if results else COCO()

    ev = COCOeval(coco_gt, coco_dt, iouType="segm")
    ev.evaluate()
    ev.accumulate()
    ev.summarize()
    precision = ev.eval["precision"][:, :, :, 0, -1]  # T x R x K, all areas, maxDets=100
    recall = ev.eval["recall"][:, :, 0, -1]  # T x K
    valid = recall > -1
    ap = np.where(precision > -1, precision, np.nan).mean(axis=1)
    return {
        "category_ids": [int(c) for c in ev.params.catIds],
        "mAP": 100.0 * float(ev.stats[0]),
        "mAR": 100.0 * float(ev.stats[8]),
        "ap": np.where(valid, ap, -1).tolist(),
        "ar": recall.tolist(),
    }


def make_coco_oracle(out: Path, seed: int = 2023) -> None:
    rng = np.random.default_rng(seed)
    gt = random_ground_truth(rng, num_images=20, num_categories=3, size_range=(32, 64), max_instances=5)
    dets = random_predictions(rng, gt, hit_rate=0.9, max_copies=3, false_positives=2.5)
    gt_json = ground_truth_to_json(gt)
    pred_json = dump_predictions(dets)
    write_json(out / "gt.json", gt_json)
    write_json(out / "predictions.json", pred_json)
    ref = coco_reference(gt_json, pred_json)
    ref["num_detections"] = len(pred_json)
    ref["num_annotations"] = len(gt_json["annotations"])
    write_json(out / "reference.json", ref)
    print(f"coco_oracle: {len(pred_json)} detections, mAP {ref['mAP']:.4f}, mAR {ref['mAR']:.4f}")


def semantic_prediction(rng, gt, image_id) -> SemanticMap:
    height, width = gt.images[image_id]
    truth = np.zeros((height, width), dtype=bool)
    for ann in gt.annotations:
        if ann.image_id == image_id:
            truth |= ann.mask
    pred = jitter(rng, truth, max_shift=1) if truth.any() else truth
    if rng.random() < 0.3:
        pred = pred | random_blob(rng, height, width)
    return SemanticMap(image_id, pred)


def semantic_truth(gt, image_id) -> SemanticMap:
    truth = np.zeros(gt.images[image_id], dtype=bool)
    for ann in gt.annotations:
        if ann.image_id == image_id:
            truth |= ann.mask
    return SemanticMap(image_id, truth)


def make_pipeline(out: Path, seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    hit_rates = {"htc": 0.75, "r50": 0.55, "convnext": 0.6}
    datasets = []
    for name in ("cable", "screw", "wood", "lens"):
        gt = random_ground_truth(rng, num_images=6, num_categories=2, size_range=(24, 40))
        write_json(out / name / "gt.json", ground_truth_to_json(gt))
        preds = {}
        for model, rate in hit_rates.items():
            dets = random_predictions(rng, gt, hit_rate=rate, max_copies=2, false_positives=0.7)
            if name == "lens" and model == "htc":
                for size in (48, 96):
                    scaled = [rescale_detection(d, size, size) for d in dets]
                    key = f"htc@{size}"
                    write_json(out / name / f"{key}.json", dump_predictions(scaled))
                    preds[key] = f"{name}/{key}.json"
                continue
            write_json(out / name / f"{model}.json", dump_predictions(dets))
            preds[model] = f"{name}/{model}.json"
        write_json(
            out / name / "semantic.json",
            [semantic_map_to_json(semantic_prediction(rng, gt, i)) for i in gt.images],
        )
        write_json(
            out / name / "semantic_gt.json",
            [semantic_map_to_json(semantic_truth(gt, i)) for i in gt.images],
        )
        entry = {
            "name": name,
            "gt_path": f"{name}/gt.json",
            "prediction_paths": preds,
            "semantic_path": f"{name}/semantic.json",
            "semantic_gt_path": f"{name}/semantic_gt.json",
            "primary_model": "htc",
        }
        if name == "lens":
            entry["scale_tags"] = {
                "htc@48": {"model": "htc", "size": [48, 48]},
                "htc@96": {"model": "htc", "size": [96, 96]},
            }
        datasets.append(entry)

    config = {
        "datasets": datasets,
        "stages": ["soft-nms", "tta-merge", "semantic-fusion", "ensemble", "evaluate"],
        "nms": {"method": "soft-linear", "overlap": "mask-iou", "iou_threshold": 0.3, "sigma": 0.5,
                "prune_threshold": 0.001},
        "semantic": {"tau1": 0.5, "region_rule": "bbox-clip"},
        "ensemble": {
            "weights_mode": "map-normalized",
            "model_maps": AVERAGE_MAP,
            "nms": {"method": "hard", "overlap": "mask-iou", "iou_threshold": 0.5},
        },
        "output_dir": "out",
    }
    write_json(out / "config.json", config)
    print(f"pipeline: {len(datasets)} datasets")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    args = parser.parse_args()
    out = Path(args.out)
    make_coco_oracle(out / "coco_oracle")
    make_pipeline(out / "pipeline")


if __name__ == "__main__":
    main()
