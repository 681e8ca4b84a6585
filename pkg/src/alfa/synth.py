"""Synthetic scenes and simulated detectors for desk-scale experiments.

A simulated detector sees every ground-truth object, misses some, jitters
the corners of the rest and draws class scores concentrated on the true
class. It also emits false positives with diffuse scores, then applies its
own NMS as a real detector would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._nms import nms_keep
from .clustering import Prediction
from .evaluation import GroundTruthObject, GroundTruthSet
from .geometry import BoundingBox, boxes_to_array
from .scores import ClassScores

REFERENCE_SEED = 2018
DEFAULT_IMAGE_SIZE = (500, 375)
MIN_SIDE = 2.0


@dataclass(frozen=True)
class NoiseModel:
    box_jitter_sigma: float = 6.0
    miss_rate: float = 0.1
    false_positive_rate: float = 1.0
    score_sharpness: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.box_jitter_sigma < 0:
            raise ValueError(f"box_jitter_sigma must be non-negative, got {self.box_jitter_sigma}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")
        if self.false_positive_rate < 0:
            raise ValueError(f"false_positive_rate must be non-negative, got {self.false_positive_rate}")
        if not self.score_sharpness > 0:
            raise ValueError(f"score_sharpness must be positive, got {self.score_sharpness}")


# Reference detectors with deliberately different failure modes, so that
# their errors are only partly correlated.
REFERENCE_DETECTORS = (
    NoiseModel(box_jitter_sigma=5.0, miss_rate=0.25, false_positive_rate=1.5, score_sharpness=6.0, seed=101),
    NoiseModel(box_jitter_sigma=10.0, miss_rate=0.10, false_positive_rate=2.0, score_sharpness=5.0, seed=202),
    NoiseModel(box_jitter_sigma=7.0, miss_rate=0.15, false_positive_rate=1.0, score_sharpness=3.0, seed=303),
)


def _random_box(rng, width: float, height: float) -> tuple[float, float, float, float]:
    w = width * rng.uniform(0.1, 0.5)
    h = height * rng.uniform(0.1, 0.5)
    x = rng.uniform(0.0, width - w)
    y = rng.uniform(0.0, height - h)
    return x, y, x + w, y + h


def generate_scenes(
    n_images: int,
    num_classes: int,
    objects_per_image: tuple[int, int] = (1, 6),
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    seed: int = REFERENCE_SEED,
) -> GroundTruthSet:
    """Random ground truth; every image draws from its own derived seed."""
    lo, hi = objects_per_image
    if not 0 <= lo <= hi:
        raise ValueError(f"bad objects_per_image range {objects_per_image}")
    if num_classes < 1:
        raise ValueError(f"num_classes must be at least 1, got {num_classes}")
    width, height = image_size
    objects, ids = [], []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        image_id = f"img{i:06d}"
        ids.append(image_id)
        for _ in range(int(rng.integers(lo, hi + 1))):
            label = int(rng.integers(1, num_classes + 1))
            objects.append(GroundTruthObject(image_id, label, BoundingBox(*_random_box(rng, width, height))))
    return GroundTruthSet(num_classes, objects, ids)


def _jitter(rng, box: BoundingBox, sigma: float, width: float, height: float) -> BoundingBox:
    x1, y1, x2, y2 = np.asarray(box.as_tuple()) + rng.normal(0.0, sigma, 4) if sigma > 0 else box.as_tuple()
    x1, x2 = np.clip([x1, x2], 0.0, width)
    y1, y2 = np.clip([y1, y2], 0.0, height)
    if x2 - x1 < MIN_SIDE:
        x1, x2 = box.x_tl, box.x_br
    if y2 - y1 < MIN_SIDE:
        y1, y2 = box.y_tl, box.y_br
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


def _scores(rng, num_classes: int, true_label: int | None, sharpness: float) -> np.ndarray:
    if true_label is None:
        fg = rng.dirichlet(np.ones(num_classes))
        background = rng.beta(3.0, 1.5)
    else:
        alpha = np.ones(num_classes)
        alpha[true_label - 1] = sharpness
        fg = rng.dirichlet(alpha)
        background = rng.beta(1.0, sharpness)
    out = np.concatenate(([background], (1.0 - background) * fg))
    return out / out.sum()


def simulate_detector(
    gts: GroundTruthSet,
    noise: NoiseModel,
    detector_id: int = 1,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    nms_iou: float = 0.5,
) -> dict[str, list[Prediction]]:
    """Per-image predictions of one simulated detector."""
    width, height = image_size
    k = gts.num_classes
    by_image: dict[str, list[GroundTruthObject]] = {i: [] for i in gts.image_ids}
    for g in gts.objects:
        by_image[g.image_id].append(g)

    out = {}
    for index, image_id in enumerate(gts.image_ids):
        rng = np.random.default_rng([noise.seed, index])
        boxes, scores = [], []
        for g in by_image[image_id]:
            if rng.random() < noise.miss_rate:
                continue
            boxes.append(_jitter(rng, g.box, noise.box_jitter_sigma, width, height))
            scores.append(_scores(rng, k, g.label, noise.score_sharpness))
        for _ in range(int(rng.poisson(noise.false_positive_rate))):
            boxes.append(BoundingBox(*_random_box(rng, width, height)))
            scores.append(_scores(rng, k, None, noise.score_sharpness))
        out[image_id] = _detector_nms(boxes, scores, detector_id, nms_iou)
    return out


def _detector_nms(boxes, scores, detector_id: int, nms_iou: float) -> list[Prediction]:
    if not boxes:
        return []
    arr = np.array(scores)
    labels = np.argmax(arr[:, 1:], axis=1)
    top = arr[np.arange(len(arr)), labels + 1]
    keep = nms_keep(boxes_to_array(boxes), labels, top, nms_iou)
    return [
        Prediction(detector_id, boxes[i], ClassScores(tuple(arr[i])), rank)
        for rank, i in enumerate(keep)
    ]


def reference_benchmark(
    n_images: int = 500,
    num_classes: int = 5,
    detectors=REFERENCE_DETECTORS,
    seed: int = REFERENCE_SEED,
) -> tuple[GroundTruthSet, list[dict[str, list[Prediction]]]]:
    """Scenes plus the outputs of each simulated detector on them."""
    gts = generate_scenes(n_images, num_classes, seed=seed)
    outputs = [simulate_detector(gts, noise, detector_id=i + 1) for i, noise in enumerate(detectors)]
    return gts, outputs
