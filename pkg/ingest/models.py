"""
Domain types for ingested vibration data.

Nothing here is stored in the database; records are immutable dataclasses
that are safe to hand across threads.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np


LAYOUT_CHOICES = ('femto_like', 'xjtu_like', 'cwru_like')
AXIS_CHOICES = ('horizontal', 'vertical')


@dataclass(frozen=True)
class WaveformRecord:
    """One acquired vibration snapshot, acceleration in g."""
    bearing_id: str
    condition_id: str
    seq_index: int
    samples: np.ndarray
    sampling_rate_hz: float
    fault_label: Optional[str] = None
    axis: str = 'horizontal'

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise ValueError(f"record {self.bearing_id}#{self.seq_index} has no samples")
        if not self.sampling_rate_hz > 0:
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        if self.seq_index < 0:
            raise ValueError(f"seq_index must be non-negative, got {self.seq_index}")
        if self.axis not in AXIS_CHOICES:
            raise ValueError(f"unknown axis {self.axis!r}")
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sampling_rate_hz', float(self.sampling_rate_hz))

    @property
    def record_id(self) -> str:
        return f"{self.bearing_id}#{self.seq_index}"

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sampling_rate_hz

    def with_samples(self, samples: np.ndarray, sampling_rate_hz: Optional[float] = None) -> 'WaveformRecord':
        return replace(
            self,
            samples=samples,
            sampling_rate_hz=self.sampling_rate_hz if sampling_rate_hz is None else sampling_rate_hz,
        )


@dataclass(frozen=True)
class ManifestEntry:
    # absolute in memory, stored relative to the dataset root
    path: Path
    bearing_id: str
    condition_id: str
    seq_index: int
    sampling_rate_hz: float
    fault_label: Optional[str] = None
    axis: str = 'horizontal'

    @property
    def key(self) -> Tuple[str, int]:
        return (self.bearing_id, self.seq_index)


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    layout: str
    root: Path
    records: Tuple[ManifestEntry, ...]
    schema_version: int = 1
    rejects: Tuple[Dict[str, str], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    def bearing_ids(self) -> List[str]:
        seen: Dict[str, None] = {}
        for entry in self.records:
            seen.setdefault(entry.bearing_id, None)
        return list(seen)

    def entries_for(self, bearing_id: str) -> List[ManifestEntry]:
        return [e for e in self.records if e.bearing_id == bearing_id]

    @property
    def declares_faults(self) -> bool:
        return any(e.fault_label is not None for e in self.records)

    def to_dict(self) -> dict:
        return {
            'schema_version': self.schema_version,
            'dataset_id': self.dataset_id,
            'layout': self.layout,
            'records': [
                {
                    'path': Path(e.path).relative_to(self.root).as_posix(),
                    'bearing_id': e.bearing_id,
                    'condition_id': e.condition_id,
                    'seq_index': e.seq_index,
                    'sampling_rate_hz': e.sampling_rate_hz,
                    'fault_label': e.fault_label,
                    'axis': e.axis,
                }
                for e in self.records
            ],
            'rejects': list(self.rejects),
        }
