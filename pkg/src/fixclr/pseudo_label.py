"""Confidence-thresholded pseudo-labels and their quality/quantity metrics.

``predict_pseudo_labels`` turns weak-view logits into per-sample predicted
classes, confidences, and a keep mask.  ``keep_ratio`` measures quantity;
``pseudo_label_quality`` measures accuracy of the kept labels against
ground truth and is evaluation-only: the trainer never sees its output, it
exists purely for instrumentation.

Threshold policies are either a fixed cutoff (default 0.95) or a plugin
callable ``(logits, step) -> (per_sample_weights, threshold)``, which is
enough surface to host adaptive-threshold schedulers; stateful plugins keep
their own logits history.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericError

PluginFn = Callable[[np.ndarray, int], tuple[np.ndarray, float]]


@dataclass(frozen=True)
class ThresholdPolicy:
    """Fixed confidence cutoff or pluggable weight/threshold schedule."""

    kind: str = "fixed"  # "fixed" or "plugin"
    value: float = 0.95
    plugin: PluginFn | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if not 0 < self.value <= 1:
                raise ConfigurationError("fixed threshold must be in (0, 1]")
        elif self.kind == "plugin":
            if self.plugin is None:
                raise ConfigurationError("plugin policy needs a plugin callable")
        else:
            raise ConfigurationError(f"unknown threshold policy kind {self.kind!r}")


@dataclass(frozen=True)
class PseudoLabelBatch:
    """Per-sample predictions, confidences, and the keep mask."""

    predicted_class: np.ndarray
    confidence: np.ndarray
    keep_mask: np.ndarray
    threshold_used: float
    weights: np.ndarray | None = None  # per-sample plugin weights, kept rows only matter

    def __len__(self) -> int:
        return len(self.predicted_class)

    @property
    def num_kept(self) -> int:
        return int(self.keep_mask.sum())


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max shift."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_pseudo_labels(logits: np.ndarray, policy: ThresholdPolicy,
                          step: int = 0) -> PseudoLabelBatch:
    """Softmax, argmax, and threshold a batch of logits.

    Argmax ties break toward the lowest class index.  Confidences land in
    [1/C, 1]; a sample is kept when its confidence is >= the threshold in
    effect.  Non-finite logits raise :class:`NumericError`.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ConfigurationError("logits must be a 2-d (n, C) array")
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in pseudo-label prediction")

    probs = softmax(logits)
    predicted = probs.argmax(axis=1)  # np.argmax returns the lowest tied index
    confidence = probs[np.arange(len(probs)), predicted]

    weights = None
    if policy.kind == "plugin":
        weights, threshold = policy.plugin(logits, step)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(logits),):
            raise ConfigurationError("plugin weights must be one value per sample")
    else:
        threshold = policy.value
    keep = confidence >= threshold
    return PseudoLabelBatch(predicted, confidence, keep, float(threshold), weights)


def keep_ratio(batch: PseudoLabelBatch) -> float:
    """Fraction of samples whose confidence cleared the threshold."""
    if len(batch) == 0:
        raise ConfigurationError("keep_ratio is undefined for an empty batch")
    return batch.num_kept / len(batch)


def pseudo_label_quality(batch: PseudoLabelBatch, truth: np.ndarray) -> float | None:
    """Accuracy of kept pseudo-labels against ground truth.

    Returns ``None`` when nothing was kept (undefined, deliberately distinct
    from 0.0).  Ground truth is used for reporting only and must never feed
    back into training.
    """
    truth = np.asarray(truth)
    if truth.shape != batch.predicted_class.shape:
        raise ConfigurationError("truth must have one label per sample")
    if batch.num_kept == 0:
        return None
    kept = batch.keep_mask
    return float((batch.predicted_class[kept] == truth[kept]).mean())
