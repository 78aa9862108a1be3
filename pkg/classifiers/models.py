import numbers
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from django.conf import settings

from core.exceptions import ConfigurationError, DimensionMismatchError

MODEL_KINDS = ('dummy_stratified', 'gaussian_nb', 'logistic_regression', 'svm_rbf', 'random_forest', 'mlp')
WEIGHTING_CHOICES = ('none', 'balanced')
PROBABILISTIC_KINDS = ('dummy_stratified', 'gaussian_nb', 'logistic_regression', 'random_forest', 'mlp')


def _positive(name, value):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not value > 0:
        raise ConfigurationError(f"{name} must be a positive number, got {value!r}")


def _count(name, value, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")


def validate_hyperparams(kind: str, params: Dict[str, Any]) -> None:
    if kind == 'gaussian_nb':
        if not isinstance(params['var_smoothing'], numbers.Real) or params['var_smoothing'] < 0:
            raise ConfigurationError("var_smoothing must be a number >= 0")
    elif kind == 'logistic_regression':
        _positive('C', params['C'])
        _count('max_iter', params['max_iter'])
        _positive('tol', params['tol'])
    elif kind == 'svm_rbf':
        _positive('C', params['C'])
        if params['gamma'] != 'scale':
            _positive('gamma', params['gamma'])
        _positive('tol', params['tol'])
        _count('max_iter', params['max_iter'])
        _count('max_train', params['max_train'], minimum=2)
        _count('cache_rows', params['cache_rows'])
    elif kind == 'random_forest':
        _count('n_trees', params['n_trees'])
        if params['max_depth'] is not None:
            _count('max_depth', params['max_depth'])
        _count('min_leaf', params['min_leaf'])
        max_features = params['max_features']
        if max_features not in ('sqrt', 'all'):
            if isinstance(max_features, float) and 0.0 < max_features <= 1.0:
                pass
            else:
                _count('max_features', max_features)
    elif kind == 'mlp':
        hidden = params['hidden']
        if not isinstance(hidden, (list, tuple)) or not hidden:
            raise ConfigurationError("hidden must be a non-empty list of layer widths")
        for width in hidden:
            _count('hidden width', width)
        _count('batch_size', params['batch_size'], minimum=2)
        _positive('learning_rate', params['learning_rate'])
        _count('max_epochs', params['max_epochs'])
        _count('patience', params['patience'])
        if not 0.0 <= params['bn_momentum'] < 1.0:
            raise ConfigurationError("bn_momentum must lie in [0, 1)")
        _positive('bn_eps', params['bn_eps'])


@dataclass(frozen=True)
class ModelSpec:
    """
    Classifier kind, hyperparameters, class weighting and seed.

    Missing hyperparameters take the kind's defaults from
    ``BENCHMARK_CONFIG['CLASSIFIER_DEFAULTS']``; unknown ones are rejected.
    """
    kind: str
    hyperparams: Dict[str, Any] = field(default_factory=dict)
    class_weighting: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        config = settings.BENCHMARK_CONFIG
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}; choose one of {MODEL_KINDS}")
        defaults = config['CLASSIFIER_DEFAULTS'][self.kind]
        unknown = sorted(set(self.hyperparams) - set(defaults))
        if unknown:
            raise ConfigurationError(f"unknown hyperparameters for {self.kind}: {unknown}")
        merged = {**defaults, **self.hyperparams}
        if self.kind == 'mlp':
            merged['hidden'] = list(merged['hidden'])
        validate_hyperparams(self.kind, merged)
        object.__setattr__(self, 'hyperparams', merged)

        weighting = self.class_weighting
        if weighting is None:
            weighting = config['CLASS_WEIGHTING_DEFAULTS'].get(self.kind, 'none')
        if weighting not in WEIGHTING_CHOICES:
            raise ConfigurationError(f"class_weighting must be one of {WEIGHTING_CHOICES}")
        object.__setattr__(self, 'class_weighting', weighting)

    @property
    def probabilistic(self) -> bool:
        return self.kind in PROBABILISTIC_KINDS

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'hyperparams': self.hyperparams,
            'class_weighting': self.class_weighting,
            'seed': self.seed,
        }


@dataclass(frozen=True)
class Standardizer:
    """Per-feature mean and standard deviation of the training matrix; zero std becomes 1."""
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        for name in ('mean', 'std'):
            array = np.array(getattr(self, name), dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @classmethod
    def fit(cls, X: np.ndarray) -> 'Standardizer':
        std = X.std(axis=0)
        std = np.where(std > settings.BENCHMARK_CONFIG['CONSTANT_STD_EPS'], std, 1.0)
        return cls(X.mean(axis=0), std)

    @property
    def n_features(self) -> int:
        return int(self.mean.size)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatchError(self.n_features, X.shape[1] if X.ndim == 2 else X.size)
        return (X - self.mean) / self.std


@dataclass(frozen=True)
class TrainedModel:
    """
    A fitted classifier. ``state`` is kind-specific (arrays and scalars);
    ``classes`` is the label vocabulary in score-column order.
    """
    spec: ModelSpec
    classes: Tuple[str, ...]
    standardizer: Standardizer
    state: Dict[str, Any]
    class_weights: Dict[str, float] = field(default_factory=dict)
    fit_info: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.standardizer.n_features
