"""Dataset-level helpers: run a fusion method over many images and time it."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .baselines import nms_fuse
from .clustering import Prediction
from .fusion import Convention, FusedDetection, FusionConfig, FusionStats, alfa_fuse

DetectorOutput = Mapping[str, Sequence[Prediction]]


@dataclass
class FusionRun:
    detections: dict[str, list[FusedDetection]]
    timings_ms: list[float] = field(default_factory=list)
    predictions_in: int = 0
    detections_out: int = 0
    stats: FusionStats = field(default_factory=FusionStats)

    def timing_summary(self) -> dict[str, float]:
        return timing_summary(self.timings_ms)


def timing_summary(timings_ms: Sequence[float]) -> dict[str, float]:
    if not len(timings_ms):
        return {"mean_ms": 0.0, "median_ms": 0.0, "p99_ms": 0.0, "max_ms": 0.0}
    t = np.asarray(timings_ms, dtype=float)
    return {
        "mean_ms": float(t.mean()),
        "median_ms": float(np.median(t)),
        "p99_ms": float(np.percentile(t, 99)),
        "max_ms": float(t.max()),
    }


def image_ids_of(outputs: Sequence[DetectorOutput], extra: Sequence[str] = ()) -> list[str]:
    seen = dict.fromkeys(extra)
    for out in outputs:
        for image_id in out:
            seen.setdefault(image_id)
    return list(seen)


def per_image(outputs: Sequence[DetectorOutput], image_id: str) -> list[list[Prediction]]:
    return [list(out.get(image_id, ())) for out in outputs]


def as_detections(output: DetectorOutput, image_ids: Sequence[str] | None = None) -> dict[str, list[FusedDetection]]:
    """View a single detector's predictions as fused detections (for evaluation)."""
    ids = image_ids if image_ids is not None else list(output)
    return {i: [FusedDetection(p.box, p.scores) for p in output.get(i, ())] for i in ids}


def run_alfa(
    outputs: Sequence[DetectorOutput],
    cfg: FusionConfig,
    image_ids: Sequence[str] | None = None,
) -> FusionRun:
    if cfg.n_detectors is None:
        cfg = cfg.replace(n_detectors=len(outputs))
    ids = image_ids if image_ids is not None else image_ids_of(outputs)
    run = FusionRun({})
    for image_id in ids:
        inputs = per_image(outputs, image_id)
        start = time.perf_counter()
        fused = alfa_fuse(inputs, cfg, run.stats)
        run.timings_ms.append(1e3 * (time.perf_counter() - start))
        run.detections[image_id] = fused
        run.predictions_in += sum(len(x) for x in inputs)
    run.detections_out = run.stats.detections_out
    return run


def run_nms(
    outputs: Sequence[DetectorOutput],
    theta: float,
    convention: Convention | str = Convention.MAP_S,
    iou_thresh: float = 0.5,
    image_ids: Sequence[str] | None = None,
) -> FusionRun:
    ids = image_ids if image_ids is not None else image_ids_of(outputs)
    run = FusionRun({})
    for image_id in ids:
        inputs = per_image(outputs, image_id)
        start = time.perf_counter()
        fused = nms_fuse(inputs, theta, iou_thresh, convention)
        run.timings_ms.append(1e3 * (time.perf_counter() - start))
        run.detections[image_id] = fused
        run.predictions_in += sum(len(x) for x in inputs)
        run.detections_out += len(fused)
    return run
