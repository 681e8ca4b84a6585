"""Turning prediction clusters into fused detections.

The full pipeline is :func:`alfa_fuse`: confidence filtering, pooling,
clustering, per-cluster score and box aggregation, then a final NMS.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from ._nms import nms_keep, per_class_nms
from .clustering import Cluster, Prediction, cluster_indices, similarity_matrix
from .errors import AllZeroProduct, ConfigError, DimensionMismatch, ZeroWeightSum
from .geometry import BoundingBox, boxes_to_array, iou_matrix
from .scores import ClassScores, low_confidence_scores, predicted_label

logger = logging.getLogger(__name__)


class ScoreStrategy(str, Enum):
    MOST_CONFIDENT = "most_confident"
    AVERAGE = "average"
    MULTIPLY = "multiply"


class BoxStrategy(str, Enum):
    MOST_CONFIDENT = "most_confident"
    AVERAGE = "average"
    CONFIDENCE_WEIGHTED = "confidence_weighted"
    CLASS_CONFIDENCE_WEIGHTED = "class_confidence_weighted"


class Convention(str, Enum):
    """How a detection's class scores become evaluation entries."""

    MAP_S = "map_s"  # one entry at the argmax label
    MAP = "map"  # one entry per foreground label


@dataclass(frozen=True)
class FusionConfig:
    tau: float = 0.75
    gamma: float = 0.28
    epsilon: float = 0.17
    theta: float = 0.015
    score_strategy: ScoreStrategy = ScoreStrategy.MULTIPLY
    box_strategy: BoxStrategy = BoxStrategy.CLASS_CONFIDENCE_WEIGHTED
    add_low_confidence: bool = True
    use_class_scores_in_metric: bool = True
    final_nms_iou: float = 0.5
    class_agnostic_nms: bool = False
    convention: Convention = Convention.MAP_S
    n_detectors: int | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "score_strategy", ScoreStrategy(self.score_strategy))
            object.__setattr__(self, "box_strategy", BoxStrategy(self.box_strategy))
            object.__setattr__(self, "convention", Convention(self.convention))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau!r}")
        if self.use_class_scores_in_metric and not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not 0.0 <= self.theta < 1.0:
            raise ConfigError(f"theta must lie in [0, 1), got {self.theta!r}")
        if not 0.0 < self.final_nms_iou <= 1.0:
            raise ConfigError(f"final_nms_iou must lie in (0, 1], got {self.final_nms_iou!r}")
        if self.n_detectors is not None and self.n_detectors < 1:
            raise ConfigError(f"n_detectors must be positive, got {self.n_detectors!r}")

    def replace(self, **changes) -> FusionConfig:
        return replace(self, **changes)

    def to_mapping(self) -> dict[str, object]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else v
        return out

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> FusionConfig:
        """Build a config from string or typed values; unknown keys are errors."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)


_FLOAT_KEYS = {"tau", "gamma", "epsilon", "theta", "final_nms_iou"}
_BOOL_KEYS = {"add_low_confidence", "use_class_scores_in_metric", "class_agnostic_nms"}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in _FLOAT_KEYS:
            return float(text)
        if key == "n_detectors":
            return None if text.lower() in ("", "none") else int(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if key in _BOOL_KEYS:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    return text


@dataclass(frozen=True)
class Proposal:
    members: Cluster
    fused_scores: ClassScores
    fused_box: BoundingBox


@dataclass(frozen=True)
class FusedDetection:
    """Pipeline output record.

    ``active_labels`` is ``None`` when every label is live. Under per-class
    final NMS it holds the labels whose entries survived suppression.
    """

    box: BoundingBox
    scores: ClassScores
    active_labels: frozenset[int] | None = None

    def label(self) -> tuple[int, float]:
        return predicted_label(self.scores)


@dataclass
class FusionStats:
    """Counters for degenerate cases the pipeline recovers from."""

    zero_weight_fallbacks: int = 0
    dropped_all_zero: int = 0
    # predictions that passed the confidence threshold
    predictions_in: int = 0
    detections_out: int = 0


# --------------------------------------------------------------------------
# array kernels


def _top_scores(scores: np.ndarray) -> np.ndarray:
    return scores[..., 1:].max(axis=-1)


def _most_confident_index(scores: np.ndarray) -> int:
    return int(np.argmax(_top_scores(scores)))


def _average_scores(members: np.ndarray, n_pad: int, lc: np.ndarray | None) -> np.ndarray:
    total = members.sum(axis=-2)
    if n_pad:
        total = total + n_pad * lc
    return total / (members.shape[-2] + n_pad)


def _log_product(members: np.ndarray, n_pad: int, lc: np.ndarray | None) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_prod = np.log(members).sum(axis=-2)
        if n_pad:
            log_prod = log_prod + n_pad * np.log(lc)
    return log_prod


def _normalized_exp(log_prod: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``exp`` normalized to sum 1, plus a mask of rows that were not all zero."""
    peak = log_prod.max(axis=-1, keepdims=True)
    ok = np.isfinite(peak)
    out = np.exp(log_prod - np.where(ok, peak, 0.0))
    out /= np.where(ok, out.sum(axis=-1, keepdims=True), 1.0)
    return out, ok[..., 0]


def _multiply_scores(members: np.ndarray, n_pad: int, lc: np.ndarray | None) -> np.ndarray:
    out, ok = _normalized_exp(_log_product(members, n_pad, lc))
    if not ok:
        raise AllZeroProduct("every component of the score product is zero")
    return out


def _envelope_clip(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    # rounding must not push the result outside the member envelope
    return np.clip(box, boxes.min(axis=-2), boxes.max(axis=-2))


def _weighted_box(boxes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    total = weights.sum(axis=-1, keepdims=True)
    if not np.all(total > 0.0):
        raise ZeroWeightSum("box weights sum to zero")
    box = np.einsum("...s,...sc->...c", weights / total, boxes)
    return _envelope_clip(box, boxes)


def _average_box(boxes: np.ndarray) -> np.ndarray:
    return _envelope_clip(boxes.mean(axis=-2), boxes)


def _fuse_batch(
    boxes: np.ndarray,
    scores: np.ndarray,
    n_pad: int,
    lc: np.ndarray | None,
    cfg: FusionConfig,
    stats: FusionStats | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fuse ``m`` clusters of equal size ``s`` at once.

    ``boxes`` is ``(m, s, 4)`` and ``scores`` ``(m, s, K + 1)``. Returns the
    fused boxes, fused scores and a mask of clusters that survived (the
    multiplicative product can vanish).
    """
    m, size = boxes.shape[:2]
    rows = np.arange(m)
    strategy = cfg.score_strategy
    ok = np.ones(m, dtype=bool)
    if strategy is ScoreStrategy.MOST_CONFIDENT:
        fused = scores[rows, np.argmax(_top_scores(scores), axis=1)]
    elif strategy is ScoreStrategy.AVERAGE:
        fused = _average_scores(scores, n_pad, lc)
    else:
        fused, ok = _normalized_exp(_log_product(scores, n_pad, lc))

    if size == 1:
        return boxes[:, 0], fused, ok
    box_strategy = cfg.box_strategy
    if box_strategy is BoxStrategy.MOST_CONFIDENT:
        box = boxes[rows, np.argmax(_top_scores(scores), axis=1)]
    elif box_strategy is BoxStrategy.AVERAGE:
        box = _average_box(boxes)
    elif box_strategy is BoxStrategy.CONFIDENCE_WEIGHTED:
        box = _weighted_box(boxes, _top_scores(scores))
    else:
        labels = np.argmax(fused[:, 1:], axis=1) + 1
        weights = scores[rows, :, labels]
        zero = ~(weights.sum(axis=1) > 0.0) & ok
        if zero.any():
            for label in labels[zero]:
                logger.warning("zero class-confidence weights for label %d; using plain average", label)
            if stats is not None:
                stats.zero_weight_fallbacks += int(zero.sum())
            weights = np.where(zero[:, None], 1.0, weights)
        # clusters whose product vanished are dropped later; keep their weights finite
        weights = np.where(ok[:, None], weights, 1.0)
        box = _weighted_box(boxes, weights)
    return box, fused, ok


def _fuse_one(
    boxes: np.ndarray,
    scores: np.ndarray,
    n_pad: int,
    lc: np.ndarray | None,
    cfg: FusionConfig,
    stats: FusionStats | None,
) -> tuple[np.ndarray, np.ndarray]:
    box, fused, ok = _fuse_batch(boxes[None], scores[None], n_pad, lc, cfg, stats)
    if not ok[0]:
        raise AllZeroProduct("every component of the score product is zero")
    return box[0], fused[0]


# --------------------------------------------------------------------------
# public per-cluster operations


def _n_detectors(cfg: FusionConfig, fallback: int) -> int:
    return cfg.n_detectors if cfg.n_detectors is not None else fallback


def pad_missing(cluster: Cluster, cfg: FusionConfig) -> list[ClassScores]:
    """Member scores followed by one low-confidence tuple per missing detector."""
    padded = [p.scores for p in cluster]
    if not cfg.add_low_confidence:
        return padded
    n = _n_detectors(cfg, len(cluster))
    missing = n - len(cluster)
    if missing < 0:
        raise DimensionMismatch(f"cluster has {len(cluster)} members but only {n} detectors")
    if missing:
        lc = low_confidence_scores(padded[0].num_classes, cfg.epsilon)
        padded.extend([lc] * missing)
    return padded


def _stack(padded: Sequence[ClassScores], n_detectors: int | None) -> np.ndarray:
    if not padded:
        raise ValueError("need at least one score tuple")
    if n_detectors is not None and len(padded) != n_detectors:
        raise DimensionMismatch(f"expected {n_detectors} score tuples, got {len(padded)}")
    if len({len(c) for c in padded}) != 1:
        raise DimensionMismatch("score tuples of different lengths")
    return np.array([c.values for c in padded], dtype=float)


def fuse_scores_most_confident(padded: Sequence[ClassScores]) -> ClassScores:
    """The tuple with the largest foreground score; ties go to the first."""
    arr = _stack(padded, None)
    return padded[_most_confident_index(arr)]


def fuse_scores_average(padded: Sequence[ClassScores], n_detectors: int | None = None) -> ClassScores:
    return ClassScores(tuple(_average_scores(_stack(padded, n_detectors), 0, None)))


def fuse_scores_multiply(padded: Sequence[ClassScores], n_detectors: int | None = None) -> ClassScores:
    """Componentwise product renormalized over all ``K + 1`` components.

    Computed in the log domain. Raises :class:`AllZeroProduct` when the
    tuples share no component with non-zero mass.
    """
    return ClassScores(tuple(_multiply_scores(_stack(padded, n_detectors), 0, None)))


def _cluster_arrays(cluster: Cluster) -> tuple[np.ndarray, np.ndarray]:
    boxes = boxes_to_array([p.box for p in cluster])
    scores = np.array([p.scores.values for p in cluster], dtype=float)
    return boxes, scores


def fuse_box_most_confident(cluster: Cluster) -> BoundingBox:
    _, scores = _cluster_arrays(cluster)
    return cluster.members[_most_confident_index(scores)].box


def fuse_box_average(cluster: Cluster) -> BoundingBox:
    boxes, _ = _cluster_arrays(cluster)
    return BoundingBox.from_array(_average_box(boxes))


def fuse_box_confidence_weighted(cluster: Cluster) -> BoundingBox:
    """Mean of member boxes weighted by each member's top foreground score."""
    boxes, scores = _cluster_arrays(cluster)
    return BoundingBox.from_array(_weighted_box(boxes, _top_scores(scores)))


def fuse_box_class_confidence_weighted(cluster: Cluster, fused_scores: ClassScores) -> BoundingBox:
    """Mean of member boxes weighted by their score for the fused label.

    Raises :class:`ZeroWeightSum` when no member gives that label any mass;
    :func:`alfa_fuse` falls back to the plain average in that case.
    """
    boxes, scores = _cluster_arrays(cluster)
    label, _ = predicted_label(fused_scores)
    return BoundingBox.from_array(_weighted_box(boxes, scores[:, label]))


def make_proposal(cluster: Cluster, cfg: FusionConfig, stats: FusionStats | None = None) -> Proposal:
    """Fuse one cluster into a proposal using the configured strategies."""
    boxes, scores = _cluster_arrays(cluster)
    n = _n_detectors(cfg, len(cluster))
    n_pad = n - len(cluster) if cfg.add_low_confidence else 0
    lc = low_confidence_scores(scores.shape[1] - 1, cfg.epsilon).as_array() if n_pad else None
    box, fused = _fuse_one(boxes, scores, n_pad, lc, cfg, stats)
    return Proposal(cluster, ClassScores(tuple(fused)), BoundingBox.from_array(box))


def threshold_filter(preds: Sequence[Prediction], theta: float) -> list[Prediction]:
    """Keep predictions whose predicted-label confidence is at least ``theta``."""
    if theta <= 0.0:
        return list(preds)
    return [p for p in preds if p.scores.top_score() >= theta]


# --------------------------------------------------------------------------
# pipeline


@dataclass
class PooledPredictions:
    """Thresholded predictions of one image in canonical order, as arrays."""

    preds: list[Prediction]
    boxes: np.ndarray
    scores: np.ndarray
    detector_ids: np.ndarray
    n_detectors: int

    def __len__(self):
        return len(self.preds)


def pool_predictions(
    per_detector: Sequence[Sequence[Prediction]], theta: float, n_detectors: int | None = None
) -> PooledPredictions:
    n = n_detectors if n_detectors is not None else len(per_detector)
    if len(per_detector) > n:
        raise ConfigError(f"{len(per_detector)} detector lists for {n} detectors")
    preds = [p for dets in per_detector for p in threshold_filter(dets, theta)]
    preds.sort(key=lambda p: p.key)
    for p in preds:
        if p.detector_id > n:
            raise ConfigError(f"detector id {p.detector_id} outside 1..{n}")
    if preds:
        k = len(preds[0].scores)
        if any(len(p.scores) != k for p in preds):
            raise DimensionMismatch("predictions disagree on the number of classes")
    boxes = boxes_to_array([p.box for p in preds])
    scores = np.array([p.scores.values for p in preds], dtype=float) if preds else np.zeros((0, 2))
    ids = np.array([p.detector_id for p in preds], dtype=int)
    return PooledPredictions(preds, boxes, scores, ids, n)


def cluster_pooled(pooled: PooledPredictions, cfg: FusionConfig) -> list[list[int]]:
    if not len(pooled):
        return []
    sim = similarity_matrix(
        pooled.boxes, pooled.scores, pooled.detector_ids, cfg.gamma, cfg.use_class_scores_in_metric
    )
    return cluster_indices(sim, cfg.tau)


def fuse_pooled(
    pooled: PooledPredictions,
    clusters: Sequence[Sequence[int]],
    cfg: FusionConfig,
    stats: FusionStats | None = None,
) -> list[FusedDetection]:
    """Score/box aggregation plus final NMS for already clustered predictions."""
    if not clusters:
        return []
    num_classes = pooled.scores.shape[1] - 1
    lc = low_confidence_scores(num_classes, cfg.epsilon).as_array()
    n = len(clusters)
    sizes = np.fromiter((len(c) for c in clusters), dtype=int, count=n)
    boxes = np.empty((n, 4))
    scores = np.empty((n, num_classes + 1))
    keep = np.ones(n, dtype=bool)
    for size in np.unique(sizes):
        pos = np.flatnonzero(sizes == size)
        idx = np.array([clusters[i] for i in pos], dtype=int).reshape(len(pos), size)
        n_pad = pooled.n_detectors - int(size) if cfg.add_low_confidence else 0
        b, f, ok = _fuse_batch(pooled.boxes[idx], pooled.scores[idx], n_pad, lc, cfg, stats)
        boxes[pos], scores[pos], keep[pos] = b, f, ok
    if stats is not None:
        stats.dropped_all_zero += int(n - keep.sum())
    if not keep.all():
        boxes, scores = boxes[keep], scores[keep]
    if not len(boxes):
        return []
    return final_nms(boxes, scores, cfg)


def final_nms(boxes: np.ndarray, scores: np.ndarray, cfg: FusionConfig) -> list[FusedDetection]:
    """Suppress duplicate proposals and sort by predicted-label confidence."""
    fg = scores[:, 1:]
    labels = np.argmax(fg, axis=1)
    top = fg[np.arange(len(fg)), labels]
    active = None
    if cfg.class_agnostic_nms:
        keep = nms_keep(boxes, np.zeros(len(boxes), dtype=int), top, cfg.final_nms_iou)
    elif cfg.convention is Convention.MAP_S:
        keep = nms_keep(boxes, labels, top, cfg.final_nms_iou)
    else:
        active = per_class_nms(boxes, fg, cfg.final_nms_iou, iou_matrix(boxes))
        alive = np.flatnonzero(active.any(axis=1))
        keep = alive[np.argsort(-top[alive], kind="stable")]

    out = []
    for i in keep:
        labels_i = None
        if active is not None and not active[i].all():
            labels_i = frozenset(int(k) + 1 for k in np.flatnonzero(active[i]))
        out.append(
            FusedDetection(BoundingBox.from_array(boxes[i]), ClassScores(tuple(scores[i])), labels_i)
        )
    return out


def alfa_fuse(
    per_detector: Sequence[Sequence[Prediction]],
    cfg: FusionConfig,
    stats: FusionStats | None = None,
) -> list[FusedDetection]:
    """Fuse the predictions of ``N`` detectors on one image.

    ``per_detector[i]`` holds the (already NMS'd) predictions of detector
    ``i + 1``. ``cfg.n_detectors`` overrides ``N`` when set, which allows
    passing fewer lists than detectors.
    """
    pooled = pool_predictions(per_detector, cfg.theta, cfg.n_detectors)
    clusters = cluster_pooled(pooled, cfg)
    out = fuse_pooled(pooled, clusters, cfg, stats)
    if stats is not None:
        stats.predictions_in += len(pooled)
        stats.detections_out += len(out)
    return out
