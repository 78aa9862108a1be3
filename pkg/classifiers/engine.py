import logging
import time
from collections import Counter
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.exceptions import ConfigurationError, ModelError
from core.utils import natural_key

from .learners import LEARNERS
from .models import WEIGHTING_CHOICES, ModelSpec, Standardizer, TrainedModel

logger = logging.getLogger('classifiers')


def compute_class_weights(labels: Sequence[str], mode: str = 'balanced',
                          classes: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """
    Per-class sample weights.

    ``balanced`` gives class c the weight N / (K * N_c); ``none`` gives 1.
    Every class in ``classes`` (default: the labels present) must occur.
    """
    if mode not in WEIGHTING_CHOICES:
        raise ConfigurationError(f"class weighting must be one of {WEIGHTING_CHOICES}, got {mode!r}")
    labels = list(labels)
    if not labels:
        raise ModelError("cannot weight an empty label set")
    counts = Counter(labels)
    classes = list(classes) if classes is not None else sorted(counts, key=natural_key)
    empty = [c for c in classes if counts.get(c, 0) == 0]
    if empty:
        raise ModelError(f"classes without samples: {empty}")
    if mode == 'none':
        return {c: 1.0 for c in classes}
    n, k = len(labels), len(classes)
    return {c: n / (k * counts[c]) for c in classes}


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ModelError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = int(np.count_nonzero(~np.isfinite(X).all(axis=1)))
        raise ModelError(f"feature matrix has non-finite values in {bad} rows")
    return X


def fit(spec: ModelSpec, X, y: Sequence[str], X_val=None, y_val: Optional[Sequence[str]] = None) -> TrainedModel:
    """
    Fit ``spec`` on raw features ``X`` with labels ``y``.

    The standardizer is derived from ``X`` alone; ``X_val``/``y_val`` are only
    used for MLP early stopping and are transformed with the training
    statistics. The label vocabulary is the sorted set of training labels.
    """
    X = _as_matrix(X)
    y = [str(label) for label in y]
    if X.shape[0] != len(y):
        raise ModelError(f"{X.shape[0]} feature rows but {len(y)} labels")
    if not y:
        raise ModelError("cannot fit on an empty training set")
    classes = tuple(sorted(set(y), key=natural_key))
    if len(classes) < 2 and spec.kind != 'dummy_stratified':
        raise ModelError(f"{spec.kind} needs at least two classes, training labels are all {classes[0]!r}")

    started = time.perf_counter()
    standardizer = Standardizer.fit(X)
    Z = standardizer.transform(X)
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[label] for label in y], dtype=np.int64)
    class_weights = compute_class_weights(y, spec.class_weighting, classes)
    sample_weight = np.array([class_weights[label] for label in y])

    extra = {}
    if X_val is not None and y_val is not None and len(y_val):
        Z_val = standardizer.transform(_as_matrix(X_val))
        keep = [i for i, label in enumerate(y_val) if str(label) in index]
        if len(keep) < len(y_val):
            logger.warning(f"⚠️ {len(y_val) - len(keep)} validation samples carry classes unseen in training; ignored")
        extra = {
            'X_val': Z_val[keep],
            'y_val': np.array([index[str(y_val[i])] for i in keep], dtype=np.int64),
        }

    learner = LEARNERS[spec.kind]
    state, fit_info = learner.fit(Z, y_idx, len(classes), sample_weight, spec.hyperparams, spec.seed, **extra)
    fit_info = {**fit_info, 'n_train': int(X.shape[0])}
    logger.info(f"✅ Fitted {spec.kind} on {X.shape[0]} x {X.shape[1]} ({len(classes)} classes) "
                f"in {time.perf_counter() - started:.2f}s")
    return TrainedModel(
        spec=spec,
        classes=classes,
        standardizer=standardizer,
        state=state,
        class_weights=class_weights,
        fit_info=fit_info,
    )


def predict_scores(model: TrainedModel, X) -> np.ndarray:
    """
    Per-class scores, columns in ``model.classes`` order.

    Rows sum to 1 for probabilistic kinds; ``svm_rbf`` returns signed
    one-vs-rest margins.
    """
    Z = model.standardizer.transform(_as_matrix(X))
    return LEARNERS[model.spec.kind].scores(model.state, Z, model.spec.hyperparams, model.spec.seed)


def predict(model: TrainedModel, X) -> List[str]:
    # argmax returns the first maximum, so ties go to the lower class index
    return [model.classes[i] for i in np.argmax(predict_scores(model, X), axis=1)]
