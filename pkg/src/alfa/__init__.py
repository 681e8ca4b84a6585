"""Agglomerative late fusion of object detector outputs (ALFA).

The main entry point is :func:`alfa_fuse`, which fuses the predictions of
several detectors on one image. :func:`nms_fuse` is the greedy NMS
baseline; :mod:`alfa.evaluation` computes VOC-style mAP.
"""

from .baselines import greedy_nms, nms_fuse
from .clustering import (
    Cluster,
    Prediction,
    agglomerative_cluster,
    cluster_fast,
    cluster_similarity,
    connectivity_groups,
    prediction_similarity,
)
from .errors import (
    AllZeroProduct,
    AlfaError,
    ConfigError,
    DegenerateBox,
    DegenerateScores,
    DimensionMismatch,
    InvalidEpsilon,
    InvalidGamma,
    InvalidScores,
    InvariantViolation,
    ParseError,
    ZeroWeightSum,
)
from .evaluation import (
    ApMode,
    ApResult,
    GroundTruthObject,
    GroundTruthSet,
    average_precision,
    crossval_map,
    weighted_fold_ap,
    match_and_score,
    mean_average_precision,
)
from .fusion import (
    BoxStrategy,
    Convention,
    FusedDetection,
    FusionConfig,
    Proposal,
    ScoreStrategy,
    alfa_fuse,
    threshold_filter,
)
from .geometry import BoundingBox, area, intersection_area, iou
from .presets import default_config, load_preset
from .scores import (
    ClassScores,
    ForegroundScores,
    bhattacharyya,
    low_confidence_scores,
    predicted_label,
    renormalize_foreground,
)

__version__ = "0.1.0"
