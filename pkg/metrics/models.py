from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from core.exceptions import MetricError

MODE_CHOICES = ('binary', 'macro')
# which precision/recall/F a report shows
REPORT_CHOICES = ('positive', 'macro')


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, both in ``classes`` order."""
    classes: Tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        k = len(self.classes)
        if counts.shape != (k, k):
            raise MetricError(f"counts must be {k}x{k}, got {counts.shape}")
        if np.any(counts < 0):
            raise MetricError("confusion counts must be non-negative")
        if len(set(self.classes)) != k:
            raise MetricError("class names must be unique")
        counts.setflags(write=False)
        object.__setattr__(self, 'classes', tuple(self.classes))
        object.__setattr__(self, 'counts', counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.classes == other.classes and np.array_equal(self.counts, other.counts)

    def to_dict(self) -> dict:
        return {'classes': list(self.classes), 'counts': self.counts.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> 'ConfusionMatrix':
        return cls(tuple(data['classes']), np.array(data['counts'], dtype=np.int64))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f: float
    support: int


@dataclass(frozen=True)
class MetricSet:
    """
    Scores of one confusion matrix.

    ``f`` is the positive-class F in binary mode and the macro F otherwise;
    ``positive_*`` are only set in binary mode.
    """
    mode: str
    accuracy: float
    f: float
    f_macro: float
    macro_precision: float
    macro_recall: float
    per_class: Dict[str, ClassMetrics] = field(default_factory=dict)
    positive_class: Optional[str] = None
    positive_precision: Optional[float] = None
    positive_recall: Optional[float] = None

    def report_values(self, report: str = 'positive') -> Dict[str, float]:
        """Acc / Prec / Rec / F / F_mac as a report row shows them."""
        if report not in REPORT_CHOICES:
            raise MetricError(f"report must be one of {REPORT_CHOICES}, got {report!r}")
        if self.mode == 'binary' and report == 'positive':
            prec, rec, f = self.positive_precision, self.positive_recall, self.f
        else:
            prec, rec, f = self.macro_precision, self.macro_recall, self.f_macro
        return {'Acc': self.accuracy, 'Prec': prec, 'Rec': rec, 'F': f, 'F_mac': self.f_macro}

    def to_dict(self) -> dict:
        return {
            'mode': self.mode,
            'accuracy': self.accuracy,
            'f': self.f,
            'f_macro': self.f_macro,
            'macro_precision': self.macro_precision,
            'macro_recall': self.macro_recall,
            'positive_class': self.positive_class,
            'positive_precision': self.positive_precision,
            'positive_recall': self.positive_recall,
            'per_class': {
                c: {'precision': m.precision, 'recall': m.recall, 'f': m.f, 'support': m.support}
                for c, m in self.per_class.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricSet':
        per_class = {
            c: ClassMetrics(m['precision'], m['recall'], m['f'], int(m['support']))
            for c, m in data.get('per_class', {}).items()
        }
        fields = {k: v for k, v in data.items() if k != 'per_class'}
        return cls(per_class=per_class, **fields)
