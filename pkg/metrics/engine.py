import logging
from typing import Optional, Sequence

import numpy as np
from django.conf import settings

from core.exceptions import MetricError, UnknownLabelError

from .models import MODE_CHOICES, ClassMetrics, ConfusionMatrix, MetricSet

logger = logging.getLogger('metrics')


def confusion(y_true: Sequence, y_pred: Sequence, classes: Sequence[str]) -> ConfusionMatrix:
    classes = tuple(classes)
    if len(y_true) != len(y_pred):
        raise MetricError(f"{len(y_true)} true labels but {len(y_pred)} predictions")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for truth, pred in zip(y_true, y_pred):
        if truth not in index:
            raise UnknownLabelError(truth)
        if pred not in index:
            raise UnknownLabelError(pred)
        counts[index[truth], index[pred]] += 1
    return ConfusionMatrix(classes, counts)


def _ratio(numerator: float, denominator: float) -> float:
    # undefined ratios count as 0
    return float(numerator / denominator) if denominator > 0 else 0.0


def _harmonic(precision: float, recall: float) -> float:
    return 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def score(cm: ConfusionMatrix, mode: str = 'macro', positive_class: Optional[str] = None) -> MetricSet:
    """
    Accuracy, per-class precision/recall/F and their macro means.

    Binary mode needs exactly two classes and reports the positive (failure)
    class F as ``f``; macro mode reports the macro F.
    """
    if mode not in MODE_CHOICES:
        raise MetricError(f"mode must be one of {MODE_CHOICES}, got {mode!r}")
    total = cm.total
    if total == 0:
        raise MetricError("cannot score an empty confusion matrix")

    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    per_class = {}
    for i, c in enumerate(cm.classes):
        precision = _ratio(tp[i], predicted[i])
        recall = _ratio(tp[i], actual[i])
        per_class[c] = ClassMetrics(precision, recall, _harmonic(precision, recall), int(actual[i]))

    f_macro = float(np.mean([m.f for m in per_class.values()]))
    metrics = dict(
        mode=mode,
        accuracy=float(tp.sum() / total),
        f_macro=f_macro,
        macro_precision=float(np.mean([m.precision for m in per_class.values()])),
        macro_recall=float(np.mean([m.recall for m in per_class.values()])),
        per_class=per_class,
    )
    if mode == 'macro':
        return MetricSet(f=f_macro, **metrics)

    positive_class = positive_class or settings.BENCHMARK_CONFIG['POSITIVE_CLASS']
    if len(cm.classes) != 2 or positive_class not in per_class:
        raise MetricError(f"binary scoring needs two classes including {positive_class!r}, got {cm.classes}")
    positive = per_class[positive_class]
    return MetricSet(
        f=positive.f,
        positive_class=positive_class,
        positive_precision=positive.precision,
        positive_recall=positive.recall,
        **metrics,
    )


def evaluate(y_true: Sequence, y_pred: Sequence, classes: Sequence[str], mode: str = 'macro') -> MetricSet:
    return score(confusion(y_true, y_pred, classes), mode)


def expected_dummy_accuracy(class_probs) -> float:
    """Expected accuracy of a classifier guessing with the class frequencies: sum of p^2."""
    probs = np.asarray(list(class_probs.values()) if isinstance(class_probs, dict) else class_probs,
                       dtype=np.float64)
    if probs.size == 0 or np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-9:
        raise MetricError(f"class probabilities must be non-negative and sum to 1, got {probs.tolist()}")
    return float(np.sum(probs ** 2))
