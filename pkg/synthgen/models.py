from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

from django.conf import settings

from core.exceptions import ConfigurationError


FAULT_TYPES = ('none', 'inner_race', 'outer_race', 'ball', 'cage', 'compound')
GROWTH_CHOICES = ('linear', 'exponential')

# Class names used by the public datasets for each injected fault.
FAULT_LABELS = {
    'none': 'normal',
    'inner_race': 'IR',
    'outer_race': 'OR',
    'ball': 'BALL',
    'cage': 'CAGE',
    'compound': 'COBI',
}


@dataclass(frozen=True)
class Degradation:
    onset_fraction: float
    growth: str
    end_amplitude_g: float

    def __post_init__(self):
        if not 0.0 < self.onset_fraction < 1.0:
            raise ConfigurationError(f"onset_fraction must lie in (0, 1), got {self.onset_fraction}")
        if self.growth not in GROWTH_CHOICES:
            raise ConfigurationError(f"growth must be one of {GROWTH_CHOICES}, got {self.growth!r}")
        if not self.end_amplitude_g > 0:
            raise ConfigurationError("end_amplitude_g must be positive")


@dataclass(frozen=True)
class SynthConfig:
    """
    Parameters of one synthetic bearing.

    Optional physical constants (carrier, decay, shaft amplitude, jitter) fall
    back to ``BENCHMARK_CONFIG`` when left as ``None``.
    """
    shaft_hz: float
    sampling_rate_hz: float
    fault_type: str
    fault_char_freq_hz: float
    impulse_snr_db: float
    noise_sigma_g: float
    n_waveforms: int
    waveform_len: int
    seed: int
    degradation: Optional[Degradation] = None
    bearing_id: str = '1_1'
    condition_id: str = '1'
    carrier_hz: Optional[float] = None
    impulse_decay_per_s: Optional[float] = None
    shaft_amplitude_g: Optional[float] = None
    jitter_fraction: Optional[float] = None

    def __post_init__(self):
        config = settings.BENCHMARK_CONFIG
        if self.fault_type not in FAULT_TYPES:
            raise ConfigurationError(f"fault_type must be one of {FAULT_TYPES}, got {self.fault_type!r}")
        for name in ('shaft_hz', 'sampling_rate_hz', 'fault_char_freq_hz', 'noise_sigma_g'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_waveforms < 1 or self.waveform_len < 1:
            raise ConfigurationError("n_waveforms and waveform_len must be positive")
        nyquist = self.sampling_rate_hz / 2.0
        if self.fault_char_freq_hz >= nyquist:
            raise ConfigurationError(
                f"fault_char_freq_hz {self.fault_char_freq_hz} must be below Nyquist {nyquist}"
            )
        if self.carrier_hz is None:
            object.__setattr__(self, 'carrier_hz', float(config['SYNTH_CARRIER_HZ'][self.fault_type]))
        if self.impulse_decay_per_s is None:
            object.__setattr__(self, 'impulse_decay_per_s', float(config['SYNTH_IMPULSE_DECAY_PER_S']))
        if self.shaft_amplitude_g is None:
            object.__setattr__(self, 'shaft_amplitude_g', float(config['SYNTH_SHAFT_AMPLITUDE_G']))
        if self.jitter_fraction is None:
            object.__setattr__(self, 'jitter_fraction', float(config['SYNTH_JITTER_FRACTION']))
        if self.carrier_hz >= nyquist:
            raise ConfigurationError(f"carrier_hz {self.carrier_hz} must be below Nyquist {nyquist}")

    @property
    def fault_label(self) -> str:
        return FAULT_LABELS[self.fault_type]

    @property
    def onset_amplitude_g(self) -> float:
        return self.noise_sigma_g * 10.0 ** (self.impulse_snr_db / 20.0)


@dataclass(frozen=True)
class GroundTruth:
    bearing_id: str
    fault_type: str
    fault_label: str
    onset_index: Optional[int]
    fault_char_freq_hz: float
    shaft_hz: float
    carrier_hz: float
    amplitudes_g: Tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['amplitudes_g'] = list(self.amplitudes_g)
        return data


@dataclass(frozen=True)
class NuisanceSpec:
    gain_db: float
    freq_hz: float


@dataclass(frozen=True)
class SynthBearing:
    config: SynthConfig
    nuisance: Optional[NuisanceSpec] = None


@dataclass(frozen=True)
class SynthDatasetSpec:
    dataset_id: str
    kind: str  # 'run_to_failure' or 'injected'
    bearings: List[SynthBearing]
