from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from core.exceptions import SplitError

TRAIN = 'train'
VAL = 'val'
TEST = 'test'
PARTITIONS = (TRAIN, VAL, TEST)
STRATEGY_CHOICES = ('by_bearing', 'random')

SampleKey = Tuple[str, int, int]


@dataclass(frozen=True)
class SplitAssignment:
    """
    Partition of a sample set.

    ``mapping`` is keyed by sample provenance (bearing_id, seq_index,
    window_index). ``bearing_table`` holds the resolved bearing -> partition
    map of a bearing-wise split.
    """
    strategy: str
    mapping: Dict[SampleKey, str]
    seed: Optional[int] = None
    bearing_table: Optional[Dict[str, str]] = None
    fractions: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if self.strategy not in STRATEGY_CHOICES:
            raise SplitError(f"unknown split strategy {self.strategy!r}")
        bad = {p for p in self.mapping.values() if p not in PARTITIONS}
        if bad:
            raise SplitError(f"unknown partitions {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.mapping)

    def partition_of(self, sample) -> str:
        try:
            return self.mapping[sample.key]
        except KeyError:
            raise SplitError(f"sample {sample.key} is not covered by the split") from None

    def select(self, samples: Sequence, partition: str) -> List:
        return [s for s in samples if self.partition_of(s) == partition]

    def sizes(self) -> Dict[str, int]:
        counts = Counter(self.mapping.values())
        return {p: counts.get(p, 0) for p in PARTITIONS}

    def bearings_in(self, partition: str) -> List[str]:
        return sorted({key[0] for key, p in self.mapping.items() if p == partition})


@dataclass(frozen=True)
class LeakageAudit:
    leak_free: bool
    # bearing_id -> {partition: sample count}, only bearings spanning two or more partitions
    leaking_bearings: Dict[str, Dict[str, int]] = field(default_factory=dict)
    n_bearings: int = 0

    def to_dict(self) -> dict:
        return {
            'leak_free': self.leak_free,
            'n_bearings': self.n_bearings,
            'leaking_bearings': self.leaking_bearings,
        }
