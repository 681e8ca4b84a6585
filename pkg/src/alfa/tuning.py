"""k-fold cross-validated hyperparameter search for ALFA.

Clustering only depends on ``tau``, ``gamma`` and the metric toggle, so
each (tau, gamma) pair is clustered once per image and every strategy and
``epsilon`` value is fused from that cached clustering.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .evaluation import ApMode, GroundTruthSet, crossval_map, mean_average_precision
from .fusion import (
    BoxStrategy,
    Convention,
    FusionConfig,
    ScoreStrategy,
    cluster_pooled,
    fuse_pooled,
    pool_predictions,
)
from .pipeline import DetectorOutput, per_image


def _frange(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step))
    return tuple(round(lo + i * step, 10) for i in range(n + 1))


@dataclass(frozen=True)
class GridSpec:
    taus: tuple[float, ...] = _frange(0.40, 0.80, 0.05)
    gammas: tuple[float, ...] = _frange(0.10, 0.50, 0.05)
    epsilons: tuple[float, ...] = _frange(0.10, 0.60, 0.05)
    score_strategies: tuple[ScoreStrategy, ...] = (ScoreStrategy.AVERAGE, ScoreStrategy.MULTIPLY)
    box_strategies: tuple[BoxStrategy, ...] = tuple(BoxStrategy)

    def __len__(self):
        return (
            len(self.taus) * len(self.gammas) * len(self.epsilons)
            * len(self.score_strategies) * len(self.box_strategies)
        )


def _values(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _numbers(text: str) -> tuple[float, ...]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be lo:hi:step, got {text!r}")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad range {text!r}")
        return _frange(lo, hi, step)
    return tuple(float(v) for v in _values(text))


def parse_grid(text: str | None) -> GridSpec:
    """Parse ``"tau=0.4:0.8:0.05;gamma=0.2,0.3;score=average;box=all"``.

    Omitted keys keep their defaults.
    """
    grid = GridSpec()
    if not text:
        return grid
    changes = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"grid entry {part!r} is not key=value")
        try:
            if key == "tau":
                changes["taus"] = _numbers(value)
            elif key == "gamma":
                changes["gammas"] = _numbers(value)
            elif key in ("epsilon", "eps"):
                changes["epsilons"] = _numbers(value)
            elif key == "score":
                changes["score_strategies"] = tuple(ScoreStrategy(v) for v in _values(value))
            elif key == "box":
                vals = _values(value)
                changes["box_strategies"] = (
                    tuple(BoxStrategy) if vals == ["all"] else tuple(BoxStrategy(v) for v in vals)
                )
            else:
                raise ConfigError(f"unknown grid key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"bad grid value for {key}: {exc}") from None
    return GridSpec(**{**grid.__dict__, **changes})


def kfold_split(image_ids: Sequence[str], k: int, seed: int = 0) -> list[list[str]]:
    """Deterministic split of image ids into ``k`` near-equal folds."""
    if k < 1:
        raise ConfigError(f"need at least one fold, got {k}")
    ids = sorted(image_ids)
    if k > len(ids):
        raise ConfigError(f"{k} folds for {len(ids)} images")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [sorted(ids[i] for i in chunk) for chunk in np.array_split(perm, k)]


@dataclass
class Trial:
    config: FusionConfig
    score: float


@dataclass
class TuneResult:
    best: FusionConfig
    best_score: float
    fold_scores: list[float]
    folds: list[list[str]]
    trials: list[Trial] = field(default_factory=list)


def _sort_key(cfg: FusionConfig):
    return (
        cfg.tau,
        cfg.gamma,
        cfg.epsilon,
        list(ScoreStrategy).index(cfg.score_strategy),
        list(BoxStrategy).index(cfg.box_strategy),
    )


def _candidates(grid: GridSpec, base: FusionConfig, random_samples: int | None, seed: int):
    combos = list(
        itertools.product(grid.taus, grid.gammas, grid.epsilons, grid.score_strategies, grid.box_strategies)
    )
    if random_samples is not None and random_samples < len(combos):
        pick = np.random.default_rng(seed).choice(len(combos), size=random_samples, replace=False)
        combos = [combos[i] for i in sorted(pick)]
    cfgs = [
        base.replace(tau=t, gamma=g, epsilon=e, score_strategy=s, box_strategy=b)
        for t, g, e, s, b in combos
    ]
    cfgs.sort(key=_sort_key)
    return cfgs


def _evaluate_block(args):
    """Score configs sharing one (tau, gamma) pair from a single clustering."""
    outputs, image_ids, fold_data, cfgs, convention, mode, num_classes = args
    first = cfgs[0]
    pooled = {i: pool_predictions(per_image(outputs, i), first.theta, first.n_detectors) for i in image_ids}
    clusters = {i: cluster_pooled(pooled[i], first) for i in image_ids}
    results = []
    for cfg in cfgs:
        dets = {i: fuse_pooled(pooled[i], clusters[i], cfg) for i in image_ids}
        per_fold = [({i: dets[i] for i in ids}, gts) for ids, gts in fold_data]
        results.append(crossval_map(per_fold, convention, mode, num_classes).map)
    return results


def tune(
    outputs: Sequence[DetectorOutput],
    gts: GroundTruthSet,
    folds: int = 5,
    grid: GridSpec | None = None,
    convention: Convention | str = Convention.MAP_S,
    seed: int = 0,
    theta: float = 0.015,
    mode: ApMode | str = ApMode.ALL_POINTS,
    random_samples: int | None = None,
    base: FusionConfig | None = None,
    jobs: int = 1,
) -> TuneResult:
    """Search the grid for the config with the best cross-validated mAP.

    Ties go to the smaller ``tau``, then the smaller ``gamma`` (then the
    rest of the grid order).
    """
    grid = grid or GridSpec()
    convention = Convention(convention)
    if base is None:
        base = FusionConfig(theta=theta, convention=convention, n_detectors=len(outputs))
    image_ids = list(gts.image_ids)
    split = kfold_split(image_ids, folds, seed)
    fold_data = [(ids, gts.for_images(ids).objects) for ids in split]
    cfgs = _candidates(grid, base, random_samples, seed)
    if not cfgs:
        raise ConfigError("empty search grid")

    blocks = [list(g) for _, g in itertools.groupby(cfgs, key=lambda c: (c.tau, c.gamma))]
    tasks = [(outputs, image_ids, fold_data, b, convention, mode, gts.num_classes) for b in blocks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_evaluate_block, tasks))
    else:
        scores = [_evaluate_block(t) for t in tasks]

    trials = [Trial(c, s) for b, bs in zip(blocks, scores) for c, s in zip(b, bs)]
    best = trials[0]
    for t in trials[1:]:
        if t.score > best.score:
            best = t
    fold_scores = []
    for ids, fold_gts in fold_data:
        d = _evaluate_fold(outputs, ids, best.config)
        fold_scores.append(mean_average_precision(d, fold_gts, convention, mode, gts.num_classes).map)
    return TuneResult(best.config, best.score, fold_scores, split, trials)


def _evaluate_fold(outputs, image_ids, cfg):
    out = {}
    for image_id in image_ids:
        pooled = pool_predictions(per_image(outputs, image_id), cfg.theta, cfg.n_detectors)
        out[image_id] = fuse_pooled(pooled, cluster_pooled(pooled, cfg), cfg)
    return out
