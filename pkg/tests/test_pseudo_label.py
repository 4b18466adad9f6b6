"""Pseudo-label prediction, masking, and quality/quantity metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixclr import (ConfigurationError, NumericError, ThresholdPolicy,
                    keep_ratio, predict_pseudo_labels, pseudo_label_quality)


def logits_for_probs(probs):
    return np.log(np.asarray(probs, dtype=np.float64))


class TestPredict:
    def test_confident_sample_is_kept(self):
        pl = predict_pseudo_labels(logits_for_probs([[0.97, 0.03]]),
                                   ThresholdPolicy("fixed", 0.95))
        assert pl.predicted_class[0] == 0
        assert pl.keep_mask[0]
        assert pl.confidence[0] == pytest.approx(0.97)

    def test_unconfident_sample_is_dropped(self):
        pl = predict_pseudo_labels(logits_for_probs([[0.60, 0.40]]),
                                   ThresholdPolicy("fixed", 0.95))
        assert pl.predicted_class[0] == 0
        assert not pl.keep_mask[0]

    def test_uniform_logits_confidence_exactly_one_over_c(self):
        pl = predict_pseudo_labels(np.zeros((1, 10)), ThresholdPolicy("fixed", 0.11))
        assert pl.confidence[0] == 0.1
        assert not pl.keep_mask[0]
        # tie broken toward the lowest class index
        assert pl.predicted_class[0] == 0

    def test_keep_mask_is_confidence_vs_threshold(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((40, 5))
        pl = predict_pseudo_labels(logits, ThresholdPolicy("fixed", 0.5))
        np.testing.assert_array_equal(pl.keep_mask, pl.confidence >= 0.5)

    def test_non_finite_logits_rejected(self):
        with pytest.raises(NumericError):
            predict_pseudo_labels(np.array([[np.nan, 0.0]]), ThresholdPolicy())
        with pytest.raises(NumericError):
            predict_pseudo_labels(np.array([[np.inf, 0.0]]), ThresholdPolicy())

    def test_confidence_range(self):
        rng = np.random.default_rng(1)
        logits = 10 * rng.standard_normal((100, 7))
        pl = predict_pseudo_labels(logits, ThresholdPolicy())
        assert np.all(pl.confidence >= 1 / 7 - 1e-12)
        assert np.all(pl.confidence <= 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=0.01, max_value=0.99),
           st.floats(min_value=0.0, max_value=0.009999))
    def test_raising_threshold_never_increases_keep_ratio(self, low, delta):
        logits = np.random.default_rng(3).standard_normal((64, 4))
        lo = predict_pseudo_labels(logits, ThresholdPolicy("fixed", low))
        hi = predict_pseudo_labels(logits, ThresholdPolicy("fixed", low + delta))
        assert keep_ratio(hi) <= keep_ratio(lo)

    def test_plugin_policy_supplies_weights_and_threshold(self):
        def plugin(logits, step):
            return np.full(len(logits), 0.5), 0.3

        pl = predict_pseudo_labels(np.random.default_rng(0).standard_normal((10, 3)),
                                   ThresholdPolicy("plugin", plugin=plugin), step=7)
        assert pl.threshold_used == 0.3
        np.testing.assert_array_equal(pl.weights, np.full(10, 0.5))
        np.testing.assert_array_equal(pl.keep_mask, pl.confidence >= 0.3)

    def test_invalid_policies_rejected(self):
        with pytest.raises(ConfigurationError):
            ThresholdPolicy("fixed", 0.0)
        with pytest.raises(ConfigurationError):
            ThresholdPolicy("fixed", 1.5)
        with pytest.raises(ConfigurationError):
            ThresholdPolicy("plugin")


class TestKeepRatio:
    def test_half_kept(self):
        pl = predict_pseudo_labels(logits_for_probs(
            [[0.99, 0.01], [0.6, 0.4], [0.97, 0.03], [0.55, 0.45]]),
            ThresholdPolicy("fixed", 0.95))
        assert keep_ratio(pl) == 0.5

    def test_all_and_none(self):
        pl = predict_pseudo_labels(logits_for_probs([[0.99, 0.01]] * 4),
                                   ThresholdPolicy("fixed", 0.9))
        assert keep_ratio(pl) == 1.0
        pl = predict_pseudo_labels(logits_for_probs([[0.6, 0.4]] * 4),
                                   ThresholdPolicy("fixed", 0.9))
        assert keep_ratio(pl) == 0.0

    def test_empty_batch_rejected(self):
        pl = predict_pseudo_labels(np.zeros((0, 3)), ThresholdPolicy())
        with pytest.raises(ConfigurationError):
            keep_ratio(pl)


class TestQuality:
    def test_half_correct(self):
        pl = predict_pseudo_labels(logits_for_probs([[0.99, 0.01], [0.01, 0.99]]),
                                   ThresholdPolicy("fixed", 0.9))
        assert pseudo_label_quality(pl, np.array([0, 0])) == 0.5

    def test_all_correct(self):
        pl = predict_pseudo_labels(logits_for_probs([[0.99, 0.01], [0.01, 0.99]]),
                                   ThresholdPolicy("fixed", 0.9))
        assert pseudo_label_quality(pl, np.array([0, 1])) == 1.0

    def test_zero_kept_is_undefined_not_zero(self):
        pl = predict_pseudo_labels(logits_for_probs([[0.6, 0.4]]),
                                   ThresholdPolicy("fixed", 0.95))
        assert pseudo_label_quality(pl, np.array([0])) is None

    def test_only_kept_samples_count(self):
        pl = predict_pseudo_labels(
            logits_for_probs([[0.99, 0.01], [0.55, 0.45], [0.01, 0.99]]),
            ThresholdPolicy("fixed", 0.9))
        # middle sample dropped; wrong prediction there must not matter
        assert pseudo_label_quality(pl, np.array([0, 0, 1])) == 1.0
