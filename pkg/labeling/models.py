from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from core.exceptions import LabelingError

NORMAL = 'normal'
FAILURE = 'failure'
METHOD_CHOICES = ('threshold', 'pca_kmeans', 'declared')


def canonical_label(label: str) -> str:
    """Dataset class name from a raw label: 'Normal' -> 'normal', 'IR/0.007' -> 'IR'."""
    text = str(label).strip()
    if text.lower() == NORMAL:
        return NORMAL
    return text.split('/')[0]


@dataclass(frozen=True)
class SampleLabel:
    seq_index: int
    # None labels every window of the waveform
    window_index: Optional[int]
    label: str


@dataclass(frozen=True)
class LabelAssignment:
    bearing_id: str
    labels: Tuple[SampleLabel, ...]
    method: str
    params: Dict[str, Any] = field(default_factory=dict)
    onset_seq_index: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHOD_CHOICES:
            raise LabelingError(f"unknown labeling method {self.method!r}")
        object.__setattr__(self, 'labels', tuple(self.labels))
        index = {}
        for item in self.labels:
            key = (item.seq_index, item.window_index)
            if key in index:
                raise LabelingError(f"bearing {self.bearing_id}: duplicate label for {key}")
            index[key] = item.label
        object.__setattr__(self, '_index', index)

    def label_for(self, seq_index: int, window_index: int) -> str:
        index = self._index
        if (seq_index, window_index) in index:
            return index[(seq_index, window_index)]
        if (seq_index, None) in index:
            return index[(seq_index, None)]
        raise LabelingError(
            f"bearing {self.bearing_id}: no label for waveform {seq_index} window {window_index}"
        )

    def expand(self, samples: Sequence) -> List[str]:
        """One label per feature sample of this bearing, in sample order."""
        out = []
        for sample in samples:
            if sample.bearing_id != self.bearing_id:
                raise LabelingError(f"sample of bearing {sample.bearing_id} passed to {self.bearing_id}")
            out.append(self.label_for(sample.waveform_seq_index, sample.window_index))
        return out

    @property
    def classes(self) -> List[str]:
        return sorted({item.label for item in self.labels})

    def relabel(self, mapping, **params) -> 'LabelAssignment':
        return replace(
            self,
            labels=tuple(replace(item, label=mapping(item.label)) for item in self.labels),
            params={**self.params, **params},
        )


def label_counts(assignments: Dict[str, LabelAssignment], samples: Sequence) -> Counter:
    """Per-class counts over feature samples (windows)."""
    counts: Counter = Counter()
    for sample in samples:
        assignment = assignments.get(sample.bearing_id)
        if assignment is None:
            raise LabelingError(f"no label assignment for bearing {sample.bearing_id}")
        counts[assignment.label_for(sample.waveform_seq_index, sample.window_index)] += 1
    return counts
