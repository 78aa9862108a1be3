import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from core.exceptions import ConfigurationError


FAMILY_CHOICES = ('TIME', 'RFFT', 'STFT')

TIME_FEATURE_NAMES = (
    'mean', 'abs_median', 'std', 'skewness', 'kurtosis', 'crest_factor',
    'energy', 'rms', 'n_peaks', 'n_zero_crossings', 'shapiro_w', 'kl_divergence',
)


def half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def normalize_family(family: str) -> str:
    upper = str(family).upper()
    if upper not in FAMILY_CHOICES:
        raise ConfigurationError(f"unknown feature family {family!r}; choose one of {FAMILY_CHOICES}")
    return upper


@dataclass(frozen=True)
class WindowSpec:
    length: int
    overlap_fraction: float

    def __post_init__(self):
        if self.length < 1:
            raise ConfigurationError(f"window length must be positive, got {self.length}")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ConfigurationError(f"overlap must lie in [0, 1), got {self.overlap_fraction}")
        if self.hop < 1:
            raise ConfigurationError(f"window {self.length} with overlap {self.overlap_fraction} has zero hop")

    @property
    def hop(self) -> int:
        """round(length * (1 - overlap)), halves rounded up."""
        return half_up(self.length * (1.0 - self.overlap_fraction))

    def count(self, n_samples: int) -> int:
        if n_samples < self.length:
            return 0
        return (n_samples - self.length) // self.hop + 1

    def to_dict(self) -> dict:
        return {'length': self.length, 'overlap_fraction': self.overlap_fraction, 'hop': self.hop}


@dataclass(frozen=True)
class FeatureSample:
    """One window's feature vector with its provenance."""
    bearing_id: str
    condition_id: str
    waveform_seq_index: int
    window_index: int
    window_start_time_s: float
    family: str
    values: np.ndarray
    feature_names: Tuple[str, ...] = ()
    flags: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.bearing_id, self.waveform_seq_index, self.window_index)
