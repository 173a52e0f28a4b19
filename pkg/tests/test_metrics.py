"""Classification metrics against exhaustive pairwise references."""

import numpy as np
import pytest

import oracles
from histoscan.metrics import accuracy, auc_ovr, binary_auc, macro_f1, metrics_report


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestAccuracy:
    def test_hand_case(self):
        assert accuracy(np.array([0, 1, 1, 2]), np.array([0, 1, 0, 2])) == 75.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            accuracy(np.array([0, 1]), np.array([0, 1, 2]))


class TestMacroF1:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        assert macro_f1(y, y, 3) == 100.0

    def test_hand_case_two_classes(self):
        # class 0: tp=1 fp=1 fn=1 -> f1 = 2/4; class 1: tp=1 fp=1 fn=1 -> 2/4
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([0, 1, 0, 1])
        assert macro_f1(y_true, y_pred, 2) == pytest.approx(50.0)

    def test_absent_class_scores_zero(self):
        # class 2 never occurs: contributes 0 to the unweighted mean
        y_true = np.array([0, 1, 0, 1])
        y_pred = np.array([0, 1, 0, 1])
        assert macro_f1(y_true, y_pred, 3) == pytest.approx(100.0 * 2 / 3)

    def test_all_wrong_is_zero(self):
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([1, 1, 0, 0])
        assert macro_f1(y_true, y_pred, 2) == 0.0


class TestBinaryAUC:
    def test_matches_pairwise_reference_exactly(self, rng):
        # tie-heavy integer scores force the half-win path
        for trial in range(100):
            n = int(rng.integers(4, 40))
            y = rng.integers(0, 2, n)
            if y.min() == y.max():
                y[0] = 1 - y[0]
            scores = rng.integers(0, 6, n).astype(np.float64)
            assert binary_auc(y, scores) == oracles.pairwise_auc(y, scores)

    def test_perfect_and_inverted_ranking(self):
        y = np.array([0, 0, 1, 1])
        assert binary_auc(y, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
        assert binary_auc(y, np.array([0.9, 0.8, 0.2, 0.1])) == 0.0

    def test_all_ties_is_half(self):
        y = np.array([0, 1, 0, 1])
        assert binary_auc(y, np.full(4, 0.5)) == 0.5

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            binary_auc(np.array([1, 1, 1]), np.array([0.1, 0.2, 0.3]))


class TestAUCOvr:
    def test_matches_per_class_mean(self, rng):
        y = rng.integers(0, 3, 30)
        y[:3] = [0, 1, 2]  # all classes present
        probs = rng.uniform(0, 1, (30, 3))
        want = np.mean([oracles.pairwise_auc(y == k, probs[:, k])
                        for k in range(3)])
        assert auc_ovr(y, probs) == pytest.approx(100.0 * want, rel=1e-12)

    def test_absent_class_skipped(self, rng):
        # three columns but class 2 never appears: average over two AUCs
        y = np.array([0, 0, 1, 1])
        probs = rng.uniform(0, 1, (4, 3))
        want = np.mean([oracles.pairwise_auc(y == k, probs[:, k])
                        for k in range(2)])
        assert auc_ovr(y, probs) == pytest.approx(100.0 * want, rel=1e-12)

    def test_single_class_raises(self, rng):
        with pytest.raises(ValueError):
            auc_ovr(np.zeros(5, dtype=np.int64), rng.uniform(0, 1, (5, 3)))

    def test_shape_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            auc_ovr(np.array([0, 1]), rng.uniform(0, 1, (3, 2)))


class TestReport:
    def test_report_fields_and_ranges(self, rng):
        y = rng.integers(0, 3, 24)
        y[:3] = [0, 1, 2]
        probs = rng.uniform(0.01, 1, (24, 3))
        probs /= probs.sum(axis=1, keepdims=True)
        report = metrics_report(y, probs)
        assert set(report) == {"accuracy", "macro_f1", "auc"}
        for v in report.values():
            assert 0.0 <= v <= 100.0

    def test_report_uses_argmax_predictions(self):
        y = np.array([0, 1])
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert metrics_report(y, probs)["accuracy"] == 100.0
