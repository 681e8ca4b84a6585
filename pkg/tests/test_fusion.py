from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from alfa.clustering import Cluster
from alfa.errors import AllZeroProduct, ConfigError, ZeroWeightSum
from alfa.fusion import (
    BoxStrategy,
    Convention,
    FusionConfig,
    FusionStats,
    ScoreStrategy,
    alfa_fuse,
    fuse_box_average,
    fuse_box_class_confidence_weighted,
    fuse_box_confidence_weighted,
    fuse_box_most_confident,
    fuse_scores_average,
    fuse_scores_most_confident,
    fuse_scores_multiply,
    make_proposal,
    pad_missing,
    threshold_filter,
)
from alfa.geometry import BoundingBox, iou
from alfa.scores import ClassScores, low_confidence_scores, predicted_label

from conftest import pred, random_instance


def cs(*v):
    return ClassScores(tuple(v))


def exact_product(tuples):
    """Normalized componentwise product in exact rational arithmetic."""
    prod = [Fraction(1)] * len(tuples[0])
    for t in tuples:
        prod = [p * Fraction(x) for p, x in zip(prod, t)]
    total = sum(prod)
    return [float(p / total) for p in prod]


class TestPadMissing:
    def test_nothing_missing(self):
        c = Cluster((pred(1, (0, 0, 10, 10), (0.1, 0.9)), pred(2, (0, 0, 10, 10), (0.2, 0.8))))
        assert pad_missing(c, FusionConfig(n_detectors=2)) == [m.scores for m in c]

    def test_pads_with_low_confidence(self):
        c = Cluster((pred(2, (0, 0, 10, 10), (0.0, 0.5, 0.5)),))
        padded = pad_missing(c, FusionConfig(n_detectors=3, epsilon=0.5))
        assert len(padded) == 3
        assert padded[0] == c.members[0].scores
        for p in padded[1:]:
            assert p.values == pytest.approx((0.5, 0.25, 0.25))

    def test_toggle_off(self):
        c = Cluster((pred(2, (0, 0, 10, 10), (0.0, 0.5, 0.5)),))
        padded = pad_missing(c, FusionConfig(n_detectors=3, add_low_confidence=False))
        assert padded == [c.members[0].scores]


class TestScoreStrategies:
    def test_most_confident(self):
        a, b = cs(0.05, 0.9, 0.05), cs(0.3, 0.1, 0.6)
        assert fuse_scores_most_confident([a]) is a
        assert fuse_scores_most_confident([b, a]) is a
        c = cs(0.4, 0.0, 0.6)
        assert fuse_scores_most_confident([b, c]) is b

    def test_average(self):
        a = cs(0.1, 0.2, 0.7)
        assert fuse_scores_average([a, a, a], 3).values == pytest.approx(a.values, abs=1e-12)
        out = fuse_scores_average([cs(0.2, 0.8, 0.0), cs(0.4, 0.2, 0.4)], 2)
        assert out.values == pytest.approx((0.3, 0.5, 0.2), abs=1e-12)
        out = fuse_scores_average([cs(0.0, 0.5, 0.5), low_confidence_scores(2, 0.5)], 2)
        assert out.values == pytest.approx((0.25, 0.375, 0.375), abs=1e-12)

    def test_multiply(self):
        a = cs(0.1, 0.2, 0.7)
        assert fuse_scores_multiply([a], 1).values == pytest.approx(a.values, abs=1e-12)
        out = fuse_scores_multiply([cs(0.5, 0.5, 0.0), cs(0.5, 0.0, 0.5)], 2)
        assert out.values == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)
        out = fuse_scores_multiply([cs(0.2, 0.8), cs(0.2, 0.8)], 2)
        assert out.values == pytest.approx((1 / 17, 16 / 17), abs=1e-12)

    def test_multiply_all_zero(self):
        with pytest.raises(AllZeroProduct):
            fuse_scores_multiply([cs(0.0, 1.0, 0.0), cs(0.0, 0.0, 1.0)])

    def test_multiply_matches_exact_product(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 6))
            tuples = [tuple(rng.dirichlet(np.ones(4))) for _ in range(n)]
            out = fuse_scores_multiply([ClassScores(t) for t in tuples], n)
            expected = exact_product([ClassScores(t).values for t in tuples])
            assert out.values == pytest.approx(expected, abs=1e-9)

    def test_multiply_no_underflow(self):
        # ten tuples whose smallest components are 1e-6
        tuples = [cs(1e-6, 1e-6, 1 - 2e-6)] * 5 + [cs(1e-6, 1 - 2e-6, 1e-6)] * 5
        out = fuse_scores_multiply(tuples, 10)
        expected = exact_product([t.values for t in tuples])
        assert sum(out.values) == pytest.approx(1.0, abs=1e-9)
        assert out.values == pytest.approx(expected, rel=1e-6, abs=1e-300)
        assert out.values[0] > 0.0

    def test_multiply_and_average_ignore_epsilon_without_missing(self, rng):
        members = [pred(d, (0, 0, 10, 10), rng.dirichlet(np.ones(4))) for d in (1, 2, 3)]
        c = Cluster(tuple(members))
        for strategy in (ScoreStrategy.AVERAGE, ScoreStrategy.MULTIPLY):
            outs = {
                make_proposal(c, FusionConfig(n_detectors=3, epsilon=e, score_strategy=strategy)).fused_scores
                for e in (0.1, 0.5, 0.9)
            }
            assert len(outs) == 1


class TestBoxStrategies:
    A = (0, 0, 10, 10)
    B = (10, 10, 20, 20)

    def test_singletons(self):
        c = Cluster((pred(1, (1, 2, 3, 4), (0.1, 0.9)),))
        for fn in (fuse_box_most_confident, fuse_box_average, fuse_box_confidence_weighted):
            assert fn(c) == BoundingBox(1, 2, 3, 4)
        assert fuse_box_class_confidence_weighted(c, c.members[0].scores) == BoundingBox(1, 2, 3, 4)

    def test_most_confident(self):
        c = Cluster((pred(1, self.A, (0.1, 0.6, 0.3)), pred(2, self.B, (0.05, 0.05, 0.9))))
        assert fuse_box_most_confident(c) == BoundingBox(*self.B)
        tie = Cluster((pred(1, self.A, (0.1, 0.9)), pred(2, self.B, (0.1, 0.9))))
        assert fuse_box_most_confident(tie) == BoundingBox(*self.A)

    def test_average(self):
        c = Cluster((pred(1, self.A, (0.1, 0.9)), pred(2, self.B, (0.3, 0.7))))
        assert fuse_box_average(c).as_tuple() == pytest.approx((5, 5, 15, 15))
        same = Cluster(tuple(pred(d, (1, 2, 7, 9), (0.1, 0.9)) for d in (1, 2, 3)))
        assert fuse_box_average(same) == BoundingBox(1, 2, 7, 9)

    def test_confidence_weighted(self):
        c = Cluster((pred(1, self.A, (0.1, 0.9)), pred(2, self.B, (0.9, 0.1))))
        assert fuse_box_confidence_weighted(c).as_tuple() == pytest.approx((1, 1, 11, 11), abs=1e-12)
        even = Cluster((pred(1, self.A, (0.4, 0.6)), pred(2, self.B, (0.4, 0.6))))
        assert fuse_box_confidence_weighted(even).as_tuple() == pytest.approx(fuse_box_average(even).as_tuple())

    def test_class_confidence_weighted(self):
        c = Cluster((pred(1, self.A, (0.4, 0.6, 0.0)), pred(2, self.B, (0.8, 0.2, 0.0))))
        fused = fuse_scores_average([m.scores for m in c])
        assert predicted_label(fused)[0] == 1
        box = fuse_box_class_confidence_weighted(c, fused)
        assert box.as_tuple() == pytest.approx((2.5, 2.5, 12.5, 12.5), abs=1e-12)

    def test_class_confidence_zero_weights(self):
        c = Cluster((pred(1, self.A, (0.0, 0.0, 1.0)), pred(2, self.B, (0.0, 0.0, 1.0))))
        with pytest.raises(ZeroWeightSum):
            fuse_box_class_confidence_weighted(c, cs(0.0, 1.0, 0.0))


def test_class_confidence_fallback_is_counted(caplog):
    # Symmetric pads can never put the argmax on a class no member supports,
    # so drive the kernel with a lopsided pad tuple to reach the fallback.
    from alfa.fusion import _fuse_one

    boxes = np.array([[0.0, 0.0, 10.0, 10.0], [2.0, 2.0, 12.0, 12.0]])
    scores = np.array([[0.5, 0.0, 0.5], [0.5, 0.0, 0.5]])
    lc = np.array([0.0, 1.0, 0.0])
    cfg = FusionConfig(score_strategy="average")
    stats = FusionStats()
    with caplog.at_level("WARNING", logger="alfa.fusion"):
        box, fused = _fuse_one(boxes, scores, 4, lc, cfg, stats)
    assert int(np.argmax(fused[1:])) + 1 == 1
    assert stats.zero_weight_fallbacks == 1
    assert "plain average" in caplog.text
    assert box == pytest.approx([1.0, 1.0, 11.0, 11.0])


def test_threshold_filter():
    preds = [
        pred(1, (0, 0, 10, 10), (0.94, 0.03, 0.03), 0),
        pred(1, (0, 0, 10, 10), (0.9, 0.05, 0.05), 1),
        pred(1, (0, 0, 10, 10), (0.2, 0.8, 0.0), 2),
    ]
    assert threshold_filter(preds, 0.0) == preds
    assert threshold_filter(preds, 0.05) == preds[1:]
    assert threshold_filter(preds, 0.5) == preds[2:]


def test_config_validation():
    with pytest.raises(ConfigError):
        FusionConfig(tau=0.0)
    with pytest.raises(ConfigError):
        FusionConfig(gamma=1.0)
    FusionConfig(gamma=1.0, use_class_scores_in_metric=False)
    with pytest.raises(ConfigError):
        FusionConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        FusionConfig(score_strategy="vote")
    cfg = FusionConfig.from_mapping({"tau": "0.5", "add_low_confidence": "false", "box_strategy": "average"})
    assert cfg.tau == 0.5 and cfg.add_low_confidence is False and cfg.box_strategy is BoxStrategy.AVERAGE
    with pytest.raises(ConfigError):
        FusionConfig.from_mapping({"bogus": "1"})


class TestAlfaFuse:
    def test_empty(self):
        assert alfa_fuse([[], []], FusionConfig()) == []

    def test_single_prediction_is_damped(self):
        p = pred(1, (10, 10, 50, 50), (0.1, 0.8, 0.1))
        cfg = FusionConfig(score_strategy="multiply", epsilon=0.5, theta=0.0)
        out = alfa_fuse([[p], []], cfg)
        assert len(out) == 1
        assert out[0].box == p.box
        # (0.1, 0.8, 0.1) * (0.5, 0.25, 0.25) = (0.05, 0.2, 0.025), total 0.275
        assert out[0].scores.values == pytest.approx((0.05 / 0.275, 0.2 / 0.275, 0.025 / 0.275), abs=1e-12)

    def test_two_detectors_one_object(self):
        a = pred(1, (10, 10, 50, 50), (0.1, 0.85, 0.05))
        b = pred(2, (12, 11, 53, 52), (0.2, 0.75, 0.05))
        out = alfa_fuse([[a], [b]], FusionConfig(tau=0.5, gamma=0.3))
        assert len(out) == 1
        box = out[0].box.as_tuple()
        for k in range(4):
            lo, hi = sorted((a.box.as_tuple()[k], b.box.as_tuple()[k]))
            assert lo <= box[k] <= hi
        assert predicted_label(out[0].scores)[0] == 1

    def test_output_sorted_and_nms_clean(self, rng):
        for seed in range(20):
            r = np.random.default_rng(seed)
            preds = random_instance(r, 40, 3)
            per_det = [[p for p in preds if p.detector_id == d] for d in (1, 2, 3)]
            out = alfa_fuse(per_det, FusionConfig(tau=0.6, gamma=0.3, n_detectors=3))
            confs = [predicted_label(d.scores)[1] for d in out]
            assert confs == sorted(confs, reverse=True)
            for x, y in combinations(out, 2):
                if predicted_label(x.scores)[0] == predicted_label(y.scores)[0]:
                    assert iou(x.box, y.box) <= 0.5

    def test_selection_without_aggregation(self):
        for seed in range(10):
            r = np.random.default_rng(seed)
            preds = random_instance(r, 30, 3)
            per_det = [[p for p in preds if p.detector_id == d] for d in (1, 2, 3)]
            cfg = FusionConfig(
                tau=0.5, gamma=0.4, score_strategy="most_confident", add_low_confidence=False, n_detectors=3
            )
            inputs = {p.scores.values for p in preds}
            for d in alfa_fuse(per_det, cfg):
                assert d.scores.values in inputs

    def test_theta_monotone(self):
        # Filtering is nested per instance; the fused count is only monotone in
        # aggregate, since dropping a member can split a cluster downstream.
        thetas = (0.0, 0.1, 0.2, 0.3, 0.5, 0.7)
        totals = np.zeros(len(thetas), dtype=int)
        for seed in range(50):
            r = np.random.default_rng(seed)
            preds = random_instance(r, 40, 3)
            per_det = [[p for p in preds if p.detector_id == d] for d in (1, 2, 3)]
            kept = [{p.key for lst in per_det for p in threshold_filter(lst, t)} for t in thetas]
            assert all(b <= a for a, b in zip(kept, kept[1:]))
            totals += [
                len(alfa_fuse(per_det, FusionConfig(theta=t, tau=0.5, gamma=0.3, n_detectors=3))) for t in thetas
            ]
        assert list(totals) == sorted(totals, reverse=True)

    def test_map_convention_masks(self):
        a = pred(1, (0, 0, 10, 10), (0.1, 0.5, 0.4))
        b = pred(1, (1, 0, 11, 10), (0.1, 0.4, 0.5), 1)
        cfg = FusionConfig(convention=Convention.MAP, n_detectors=1, theta=0.0)
        out = alfa_fuse([[a, b]], cfg)
        # each box wins its own class column and loses the other
        assert len(out) == 2
        assert {d.active_labels for d in out} == {frozenset({1}), frozenset({2})}

    def test_rejects_unknown_detector(self):
        p = pred(3, (0, 0, 10, 10), (0.1, 0.9))
        with pytest.raises(ConfigError):
            alfa_fuse([[p]], FusionConfig(n_detectors=2))


@pytest.mark.parametrize("score", ["most_confident", "average", "multiply"])
@pytest.mark.parametrize("box", ["most_confident", "average", "confidence_weighted", "class_confidence_weighted"])
def test_batched_fusion_matches_per_cluster(score, box):
    from alfa.fusion import cluster_pooled, fuse_pooled, pool_predictions

    # an IoU threshold of 1 never suppresses, so every proposal is visible
    cfg = FusionConfig(tau=0.5, gamma=0.3, n_detectors=3, score_strategy=score, box_strategy=box, final_nms_iou=1.0)
    for seed in range(5):
        preds = random_instance(np.random.default_rng(seed), 45, 3)
        pooled = pool_predictions([[p for p in preds if p.detector_id == d] for d in (1, 2, 3)], cfg.theta, 3)
        clusters = cluster_pooled(pooled, cfg)
        batched = fuse_pooled(pooled, clusters, cfg)
        single = [make_proposal(Cluster(tuple(pooled.preds[i] for i in c)), cfg) for c in clusters]
        key = lambda t: tuple(np.round(t, 9))  # noqa: E731
        got = sorted(key(d.box.as_tuple() + d.scores.values) for d in batched)
        want = sorted(key(p.fused_box.as_tuple() + p.fused_scores.values) for p in single)
        assert got == want
