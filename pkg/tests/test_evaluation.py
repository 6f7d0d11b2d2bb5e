import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rism.evaluation import (
    ConfusionCounts,
    EmptyMaskError,
    compare_methods,
    conservatism_statistic,
    iou,
    occlusion_uncertainty_stat,
    omega_sweep,
)
from rism.grids import OBSERVED, PARTIAL, UNOBSERVED, LabelSet


def brute_iou(pred, truth, mask):
    occ_i = occ_u = free_i = free_u = 0
    for p, t, m in zip(pred.ravel(), truth.ravel(), mask.ravel()):
        if not m:
            continue
        occ_i += p and t
        occ_u += p or t
        free_i += (not p) and (not t)
        free_u += (not p) or (not t)
    return (occ_i / occ_u if occ_u else 1.0), (free_i / free_u if free_u else 1.0)


class FixedMethod:
    """Looks up a precomputed prediction by sample index."""

    def __init__(self, name, preds):
        self.name = name
        self.preds = preds

    def predict(self, sample):
        return self.preds[sample.index]

    def describe(self):
        return {"name": self.name}


class FakeSample:
    def __init__(self, index, occ, obs):
        self.index = index
        self.labels = LabelSet(occ.astype(np.uint8), obs.astype(np.uint8))


class TestIou:
    def test_perfect(self):
        t = np.array([[1, 0], [0, 1]], bool)
        r = iou(t, t, np.ones_like(t))
        assert (r.iou_occupied, r.iou_free, r.mean_iou) == (1.0, 1.0, 1.0)

    def test_inverted(self):
        t = np.array([[1, 0], [0, 1]], bool)
        r = iou(~t, t, np.ones_like(t))
        assert (r.iou_occupied, r.iou_free) == (0.0, 0.0)

    def test_hand_count(self):
        truth = np.zeros(16, bool)
        truth[:4] = True
        pred = np.zeros(16, bool)
        pred[[0, 1, 10, 11]] = True
        r = iou(pred.reshape(4, 4), truth.reshape(4, 4), np.ones((4, 4), bool))
        assert r.iou_occupied == pytest.approx(2 / 6)
        assert r.iou_free == pytest.approx(10 / 14)
        assert r.counts == ConfusionCounts(tp=2, fp=2, fn=2, tn=10)

    def test_empty_union_is_one(self):
        r = iou(np.zeros((3, 3), bool), np.zeros((3, 3)), np.ones((3, 3), bool))
        assert r.iou_occupied == 1.0 and r.iou_free == 1.0

    def test_empty_mask(self):
        with pytest.raises(EmptyMaskError):
            iou(np.zeros((3, 3), bool), np.zeros((3, 3)), np.zeros((3, 3), bool))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            iou(np.zeros((3, 3), bool), np.zeros((3, 4)), np.ones((3, 3), bool))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_matches_brute_force_and_invariances(self, seed):
        rng = np.random.default_rng(seed)
        pred, truth = rng.random((6, 7)) < 0.3, rng.random((6, 7)) < 0.3
        mask = rng.random((6, 7)) < 0.7
        mask[0, 0] = True
        r = iou(pred, truth, mask)
        occ, free = brute_iou(pred, truth, mask)
        assert r.iou_occupied == pytest.approx(occ) and r.iou_free == pytest.approx(free)
        assert r.mean_iou == (r.iou_occupied + r.iou_free) / 2
        perm = rng.permutation(pred.size)
        assert iou(pred.ravel()[perm], truth.ravel()[perm], mask.ravel()[perm]) == r
        scrambled = np.where(mask, pred, rng.random(pred.shape) < 0.5)
        assert iou(scrambled, truth, mask).counts == r.counts


class TestCompare:
    def make(self, n, seed=0):
        rng = np.random.default_rng(seed)
        samples, preds = [], {}
        for i in range(n):
            occ = rng.random((8, 8)) < 0.2
            obs = rng.choice([UNOBSERVED, OBSERVED, PARTIAL], size=(8, 8), p=[0.3, 0.5, 0.2])
            samples.append(FakeSample(i, occ, obs))
            preds[i] = rng.random((8, 8)) < 0.25
        return samples, preds

    def test_single_sample_reduces_to_iou(self):
        samples, preds = self.make(1)
        (r,) = compare_methods(samples, [FixedMethod("m", preds)])
        s = samples[0]
        direct = iou(preds[0], s.labels.occupancy, s.labels.observability == OBSERVED)
        assert r.counts == direct.counts and r.mean_iou == direct.mean_iou

    def test_pooling_equals_concatenation(self):
        samples, preds = self.make(5)
        (r,) = compare_methods(samples, [FixedMethod("m", preds)])
        pred = np.concatenate([preds[s.index] for s in samples])
        truth = np.concatenate([s.labels.occupancy for s in samples])
        mask = np.concatenate([s.labels.observability == OBSERVED for s in samples])
        assert r.counts == iou(pred, truth, mask).counts

    def test_order_invariant(self):
        samples, preds = self.make(6)
        methods = [FixedMethod("a", preds), FixedMethod("b", {k: ~v for k, v in preds.items()})]
        a = compare_methods(samples, methods)
        b = compare_methods(samples[::-1], methods)
        assert a == b
        assert [r.method for r in a] == ["a", "b"]


class TestConservatism:
    def test_counts_confident_unobserved(self):
        p = np.array([[0.9, 0.6, 0.1], [0.74, 0.76, 0.99]])
        o = np.array([[UNOBSERVED, UNOBSERVED, UNOBSERVED], [UNOBSERVED, UNOBSERVED, OBSERVED]])
        assert conservatism_statistic([p], [o]) == pytest.approx(3 / 5)

    def test_omega_sweep_single_value(self):
        samples = [FakeSample(0, np.zeros((2, 2)), np.full((2, 2), UNOBSERVED))]
        rows = omega_sweep(lambda omega: (lambda s: np.full((2, 2), 0.5 + 0.1 * omega)), [1.0], samples)
        assert rows == [(1.0, 0.0)]

    def test_omega_sweep_rows_follow_order(self):
        samples = [FakeSample(0, np.zeros((2, 2)), np.full((2, 2), UNOBSERVED))]
        rows = omega_sweep(lambda omega: (lambda s: np.full((2, 2), min(1.0, 0.5 + omega))), [0.1, 1.0], samples)
        assert rows == [(0.1, 0.0), (1.0, 1.0)]


class TestOcclusionStat:
    def test_constant_gamma_ratio_one(self):
        obs = np.array([[UNOBSERVED, OBSERVED], [PARTIAL, OBSERVED]])
        stats = occlusion_uncertainty_stat([np.full((2, 2), 0.6941)], [obs])
        assert stats.ratio == pytest.approx(1.0)

    def test_medians(self):
        g = np.array([[3.0, 1.0], [5.0, 2.0]])
        obs = np.array([[UNOBSERVED, OBSERVED], [UNOBSERVED, OBSERVED]])
        stats = occlusion_uncertainty_stat([g], [obs])
        assert (stats.median_gamma_unobserved, stats.median_gamma_observed) == (4.0, 1.5)
        assert stats.ratio == pytest.approx(4.0 / 1.5)

    def test_fully_observed_sample_has_no_unobserved_median(self):
        stats = occlusion_uncertainty_stat([np.ones((2, 2))], [np.full((2, 2), OBSERVED)])
        assert stats.median_gamma_unobserved is None and stats.ratio is None
