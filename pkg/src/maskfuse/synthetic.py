"""Random masks, ground truth and predictions for fixtures and tests."""

from __future__ import annotations

import numpy as np

from maskfuse.evaluation import Annotation, GroundTruth
from maskfuse.masks import bbox_from_mask
from maskfuse.nms import Detection


def random_blob(rng: np.random.Generator, height: int, width: int, min_size: int = 6) -> np.ndarray:
    """A filled ellipse or rectangle, always with at least one pixel."""
    while True:
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(min_size / 2, max(height / 4, min_size))
        rx = rng.uniform(min_size / 2, max(width / 4, min_size))
        rows, cols = np.ogrid[:height, :width]
        if rng.random() < 0.5:
            mask = ((rows + 0.5 - cy) / ry) ** 2 + ((cols + 0.5 - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(rows + 0.5 - cy) <= ry) & (np.abs(cols + 0.5 - cx) <= rx)
        if mask.any():
            return mask


def jitter(rng: np.random.Generator, mask: np.ndarray, max_shift: int = 1, flip: float = 0.1) -> np.ndarray:
    """Shift a mask by a few pixels and flip a fraction of the pixels on its border band."""
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    out = np.roll(mask, (int(dy), int(dx)), axis=(0, 1))
    band = out ^ np.roll(out, 1, axis=0) | out ^ np.roll(out, 1, axis=1)
    out = out ^ (band & (rng.random(mask.shape) < flip))
    if not out.any():
        return mask.copy()
    return out


def random_ground_truth(
    rng: np.random.Generator,
    num_images: int,
    num_categories: int,
    size_range: tuple[int, int] = (24, 48),
    max_instances: int = 4,
) -> GroundTruth:
    images, annotations = {}, []
    for image_id in range(1, num_images + 1):
        height, width = (int(v) for v in rng.integers(size_range[0], size_range[1] + 1, size=2))
        images[image_id] = (height, width)
        for _ in range(int(rng.integers(1, max_instances + 1))):
            mask = random_blob(rng, height, width)
            annotations.append(
                Annotation(image_id, int(rng.integers(1, num_categories + 1)), mask, bbox_from_mask(mask))
            )
    categories = {c: f"defect_{c}" for c in range(1, num_categories + 1)}
    return GroundTruth(images, categories, annotations)


def random_predictions(
    rng: np.random.Generator,
    gt: GroundTruth,
    hit_rate: float = 0.8,
    max_copies: int = 2,
    false_positives: float = 1.0,
    score_decimals: int = 4,
) -> list[Detection]:
    """Noisy copies of ground-truth instances plus random false positives.

    ``false_positives`` is the mean number of spurious detections per image.
    Scores are distinct within the returned list.
    """
    dets = []
    used: set[float] = set()

    def score(low: float, high: float) -> float:
        while True:
            s = round(float(rng.uniform(low, high)), score_decimals)
            if s not in used:
                used.add(s)
                return s

    categories = list(gt.categories)
    for ann in gt.annotations:
        if rng.random() > hit_rate:
            continue
        for _ in range(int(rng.integers(1, max_copies + 1))):
            mask = jitter(rng, ann.mask)
            cat = ann.category_id if rng.random() > 0.1 else categories[int(rng.integers(len(categories)))]
            dets.append(Detection(ann.image_id, cat, score(0.3, 0.99), bbox_from_mask(mask), mask))
    for image_id, (height, width) in gt.images.items():
        for _ in range(int(rng.poisson(false_positives))):
            mask = random_blob(rng, height, width)
            cat = categories[int(rng.integers(len(categories)))]
            dets.append(Detection(image_id, cat, score(0.01, 0.7), bbox_from_mask(mask), mask))
    order = rng.permutation(len(dets))
    return [dets[i] for i in order]
