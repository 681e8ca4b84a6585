"""Class-score tuples and the operations defined on them.

A :class:`ClassScores` holds ``K + 1`` probabilities where index 0 is the
"no object" probability and indices ``1..K`` are the object classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScores, DimensionMismatch, InvalidEpsilon, InvalidScores

# Inputs whose sum is off by more than this are rejected rather than renormalized.
SUM_TOLERANCE = 1e-3
BACKGROUND_LIMIT = 1.0 - 1e-12
_EXACT = 4 * 2.220446049250313e-16


def _normalized(values, min_len: int, what: str) -> tuple[float, ...]:
    vals = tuple(map(float, values))
    if len(vals) < min_len:
        raise InvalidScores(f"{what} needs at least {min_len} components, got {len(vals)}")
    try:
        total = math.fsum(vals)
    except (ValueError, OverflowError):
        total = math.nan
    # a nan or inf anywhere makes the sum non-finite
    if not math.isfinite(total):
        raise InvalidScores(f"non-finite {what} {vals}")
    if min(vals) < 0:
        raise InvalidScores(f"negative component in {what} {vals}")
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise InvalidScores(f"{what} sum to {total!r}, expected 1")
    if abs(total - 1.0) <= _EXACT:
        # already normalized to float precision; keeps reconstruction idempotent
        return vals
    return tuple(v / total for v in vals)


@dataclass(frozen=True)
class ClassScores:
    """``(c0, c1, ..., cK)``; renormalized to sum to one on construction."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", _normalized(self.values, 2, "class scores"))

    @property
    def num_classes(self) -> int:
        return len(self.values) - 1

    @property
    def background(self) -> float:
        return self.values[0]

    @property
    def foreground(self) -> tuple[float, ...]:
        return self.values[1:]

    def top_score(self) -> float:
        """Largest foreground component."""
        return max(self.values[1:])

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


@dataclass(frozen=True)
class ForegroundScores:
    """Foreground-only distribution over the ``K`` object classes."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", _normalized(self.values, 1, "foreground scores"))

    def __len__(self):
        return len(self.values)


def renormalize_foreground(c: ClassScores) -> ForegroundScores:
    c0 = c.values[0]
    if c0 >= BACKGROUND_LIMIT:
        raise DegenerateScores(f"background probability {c0!r} leaves no foreground mass")
    scale = 1.0 - c0
    return ForegroundScores(tuple(v / scale for v in c.values[1:]))


def bhattacharyya(a: ForegroundScores, b: ForegroundScores) -> float:
    """Bhattacharyya coefficient ``sum_k sqrt(a_k * b_k)``, clipped to ``[0, 1]``."""
    if len(a) != len(b):
        raise DimensionMismatch(f"distributions over {len(a)} and {len(b)} classes")
    bc = sum(math.sqrt(max(x * y, 0.0)) for x, y in zip(a.values, b.values))
    return min(bc, 1.0)


def low_confidence_scores(num_classes: int, epsilon: float) -> ClassScores:
    """Scores ``(1 - eps, eps/K, ..., eps/K)`` standing in for a missed detection."""
    if num_classes < 1:
        raise DimensionMismatch(f"need at least one class, got {num_classes}")
    if not 0.0 < epsilon < 1.0:
        raise InvalidEpsilon(f"epsilon must lie in (0, 1), got {epsilon!r}")
    share = epsilon / num_classes
    return ClassScores((1.0 - epsilon,) + (share,) * num_classes)


def predicted_label(c: ClassScores) -> tuple[int, float]:
    """Argmax over the foreground classes; ties go to the smallest label."""
    fg = c.values[1:]
    best = max(range(len(fg)), key=lambda k: (fg[k], -k))
    return best + 1, fg[best]


def scores_to_array(scores) -> np.ndarray:
    """Stack a sequence of :class:`ClassScores` into an ``(n, K+1)`` array."""
    return np.array([s.values for s in scores], dtype=float)
