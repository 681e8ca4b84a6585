"""Complete-link agglomerative clustering of detector predictions.

Two predictions are compared by ``IoU**gamma * BC**(1 - gamma)`` where BC is
the Bhattacharyya coefficient of their foreground class distributions.
Predictions from the same detector always have similarity 0, so a cluster
never holds two predictions of one detector.

:func:`agglomerative_cluster` is a direct, slow implementation kept as a
reference. :func:`cluster_fast` first splits the predictions into connected
components of the ``similarity >= tau`` graph and clusters each component
on its own; both return the same partition.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, InvalidGamma
from .geometry import BoundingBox, boxes_to_array, iou, iou_matrix
from .scores import BACKGROUND_LIMIT, ClassScores, bhattacharyya, renormalize_foreground


@dataclass(frozen=True)
class Prediction:
    detector_id: int
    box: BoundingBox
    scores: ClassScores
    source_index: int = 0

    def __post_init__(self):
        if self.detector_id < 1:
            raise ValueError(f"detector ids start at 1, got {self.detector_id}")

    @property
    def key(self) -> tuple[int, int]:
        """Stable ordering key used for every tie-break."""
        return (self.detector_id, self.source_index)


@dataclass(frozen=True)
class Cluster:
    members: tuple[Prediction, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("a cluster needs at least one member")
        members = tuple(sorted(self.members, key=lambda p: p.key))
        ids = [p.detector_id for p in members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"cluster holds two predictions of one detector: {ids}")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def detector_ids(self) -> frozenset[int]:
        return frozenset(p.detector_id for p in self.members)


def _check_gamma(gamma: float, use_class_scores: bool) -> None:
    if use_class_scores and not 0.0 < gamma < 1.0:
        raise InvalidGamma(f"gamma must lie in (0, 1), got {gamma!r}")


def prediction_similarity(
    p: Prediction, q: Prediction, gamma: float, use_class_scores: bool = True
) -> float:
    """Similarity of two predictions in ``[0, 1]``.

    With ``use_class_scores=False`` the class term is dropped and the result
    is the plain IoU of the boxes.
    """
    _check_gamma(gamma, use_class_scores)
    if p.detector_id == q.detector_id:
        return 0.0
    overlap = iou(p.box, q.box)
    if overlap == 0.0:
        return 0.0
    if not use_class_scores:
        return overlap
    bc = bhattacharyya(renormalize_foreground(p.scores), renormalize_foreground(q.scores))
    if bc == 0.0:
        return 0.0
    return overlap**gamma * bc ** (1.0 - gamma)


def cluster_similarity(
    a: Cluster, b: Cluster, gamma: float, use_class_scores: bool = True
) -> float:
    """Complete-link similarity: the minimum over all cross pairs."""
    return min(
        prediction_similarity(p, q, gamma, use_class_scores) for p in a for q in b
    )


def similarity_matrix(
    boxes: np.ndarray,
    scores: np.ndarray,
    detector_ids: np.ndarray,
    gamma: float,
    use_class_scores: bool = True,
) -> np.ndarray:
    """Pairwise prediction similarities for array inputs.

    ``boxes`` is ``(n, 4)``, ``scores`` is ``(n, K+1)`` with the background
    in column 0. The diagonal and same-detector entries are 0.
    """
    _check_gamma(gamma, use_class_scores)
    n = len(boxes)
    if n == 0:
        return np.zeros((0, 0))
    overlap = iou_matrix(boxes)
    # only overlapping pairs from different detectors can be similar
    rows, cols = np.nonzero(np.triu(overlap > 0.0, k=1))
    keep = detector_ids[rows] != detector_ids[cols]
    rows, cols = rows[keep], cols[keep]
    values = overlap[rows, cols]
    if use_class_scores:
        if np.any(scores[:, 0] >= BACKGROUND_LIMIT):
            raise ValueError("pure-background prediction reached the similarity stage")
        fg = scores[:, 1:] / (1.0 - scores[:, :1])
        root = np.sqrt(np.clip(fg, 0.0, None))
        bc = np.clip(np.einsum("ij,ij->i", root[rows], root[cols]), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            values = np.power(values, gamma) * np.power(bc, 1.0 - gamma)
        values[bc == 0.0] = 0.0
    sim = np.zeros((n, n))
    sim[rows, cols] = values
    sim[cols, rows] = values
    return sim


def _arrays(preds: Sequence[Prediction]):
    boxes = boxes_to_array([p.box for p in preds])
    scores = np.array([p.scores.values for p in preds], dtype=float)
    ids = np.array([p.detector_id for p in preds], dtype=int)
    return boxes, scores, ids


def _check_tau(tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau!r}")


def _canonical(preds: Sequence[Prediction]) -> list[Prediction]:
    return sorted(preds, key=lambda p: p.key)


def complete_link_reference(sim: np.ndarray, tau: float) -> list[list[int]]:
    """Direct complete-link clustering on a canonical-order similarity matrix.

    Repeatedly merges the most similar pair of clusters while that
    similarity is at least ``tau``. Among equally similar pairs the one
    whose smallest members come first wins. Cluster similarities are
    recomputed from member pairs, never updated incrementally.
    """
    _check_tau(tau)
    # a cluster is identified by its smallest member position
    clusters: dict[int, list[int]] = {i: [i] for i in range(len(sim))}

    def linkage(a: int, b: int) -> float:
        return min(sim[i, j] for i in clusters[a] for j in clusters[b])

    pair_sim = {(a, b): linkage(a, b) for a, b in combinations(clusters, 2)}
    while pair_sim:
        best = max(pair_sim.values())
        if best < tau:
            break
        a, b = min(pair for pair, s in pair_sim.items() if s == best)
        clusters[a] = sorted(clusters[a] + clusters.pop(b))
        pair_sim = {pair: s for pair, s in pair_sim.items() if a not in pair and b not in pair}
        for c in clusters:
            if c != a:
                pair_sim[(min(a, c), max(a, c))] = linkage(a, c)
    return [members for _, members in sorted(clusters.items())]


def agglomerative_cluster(
    preds: Sequence[Prediction],
    tau: float,
    gamma: float,
    use_class_scores: bool = True,
) -> list[Cluster]:
    """Reference complete-link clustering over the whole input at once.

    Ties between equally similar cluster pairs are broken on the
    ``(detector_id, source_index)`` keys, so the result does not depend on
    input order.
    """
    _check_tau(tau)
    preds = _canonical(preds)
    if not preds:
        return []
    sim = similarity_matrix(*_arrays(preds), gamma, use_class_scores)
    return [Cluster(tuple(preds[i] for i in c)) for c in complete_link_reference(sim, tau)]


def _components(sim: np.ndarray, tau: float) -> list[np.ndarray]:
    n = len(sim)
    rows, cols = np.nonzero(sim >= tau)
    graph = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, bounds)


def _complete_link(sim: np.ndarray, tau: float) -> list[list[int]]:
    """Complete-link merging on one group with min-combination updates.

    Rows of ``sim`` must be in canonical order. Returns member positions.
    """
    m = len(sim)
    s = sim.copy()
    np.fill_diagonal(s, -1.0)
    members = {i: [i] for i in range(m)}
    while len(members) > 1:
        flat = int(np.argmax(s))
        i, j = divmod(flat, m)
        if s[i, j] < tau:
            break
        # first maximum in row-major order has i < j and is the lexicographic tie winner
        row = np.minimum(s[i], s[j])
        s[i, :] = row
        s[:, i] = row
        s[i, i] = -1.0
        s[j, :] = -1.0
        s[:, j] = -1.0
        members[i] += members.pop(j)
    return [sorted(v) for v in members.values()]


def cluster_indices(sim: np.ndarray, tau: float) -> list[list[int]]:
    """Group-then-cluster on a precomputed canonical-order similarity matrix.

    Returns clusters as sorted index lists, ordered by their first index.
    """
    _check_tau(tau)
    if len(sim) == 0:
        return []
    out: list[list[int]] = []
    for group in _components(sim, tau):
        if len(group) <= 2:
            # a two-node component is held together by one edge above tau
            out.append(sorted(int(i) for i in group))
            continue
        group = np.sort(group)
        for local in _complete_link(sim[np.ix_(group, group)], tau):
            out.append([int(group[k]) for k in local])
    out.sort(key=lambda c: c[0])
    return out


def connectivity_groups(
    preds: Sequence[Prediction],
    tau: float,
    gamma: float,
    use_class_scores: bool = True,
) -> list[list[Prediction]]:
    """Connected components of the graph linking pairs with similarity >= tau."""
    _check_tau(tau)
    preds = _canonical(preds)
    if not preds:
        return []
    sim = similarity_matrix(*_arrays(preds), gamma, use_class_scores)
    groups = [sorted(int(i) for i in g) for g in _components(sim, tau)]
    groups.sort(key=lambda g: g[0])
    return [[preds[i] for i in g] for g in groups]


def cluster_fast(
    preds: Sequence[Prediction],
    tau: float,
    gamma: float,
    use_class_scores: bool = True,
) -> list[Cluster]:
    """Same partition as :func:`agglomerative_cluster`, computed per group."""
    _check_tau(tau)
    preds = _canonical(preds)
    if not preds:
        return []
    sim = similarity_matrix(*_arrays(preds), gamma, use_class_scores)
    return [Cluster(tuple(preds[i] for i in c)) for c in cluster_indices(sim, tau)]
