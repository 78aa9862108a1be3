import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from core.exceptions import ConfigurationError
from core.utils import Seeding, thread_map, write_json
from ingest.models import WaveformRecord
from ingest.utils import BEARING_LABELS_FILE, WaveformCSV

from .models import GroundTruth, SynthBearing, SynthConfig, SynthDatasetSpec

logger = logging.getLogger('synthgen')

GROUND_TRUTH_FILE = 'ground_truth.json'


class ImpulseTrain:
    """
    Periodic fault impacts: exponentially decaying sinusoid bursts at a
    carrier (resonance) frequency. Impact spacing is the characteristic period
    with uniform relative jitter; the first impact falls uniformly inside the
    first period. Bursts are scaled so their continuous envelope peak is 1.
    """

    @staticmethod
    def burst_peak(carrier_hz: float, decay_per_s: float) -> float:
        omega = 2.0 * np.pi * carrier_hz
        t_peak = math.atan2(omega, decay_per_s) / omega
        return math.exp(-decay_per_s * t_peak) * math.sin(omega * t_peak)

    @staticmethod
    def render(
        n: int,
        sampling_rate_hz: float,
        rate_hz: float,
        carrier_hz: float,
        decay_per_s: float,
        jitter_fraction: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        out = np.zeros(n)
        period = 1.0 / rate_hz
        duration = n / sampling_rate_hz
        # bursts are cut once they fall below 1e-6 of the peak
        kernel_len = min(n, int(math.ceil(sampling_rate_hz * math.log(1e6) / decay_per_s)) + 1)
        scale = 1.0 / ImpulseTrain.burst_peak(carrier_hz, decay_per_s)

        tau = rng.uniform(0.0, period)
        while tau < duration:
            start = int(math.ceil(tau * sampling_rate_hz))
            stop = min(n, start + kernel_len)
            if start < n:
                dt = np.arange(start, stop) / sampling_rate_hz - tau
                out[start:stop] += scale * np.exp(-decay_per_s * dt) * np.sin(2.0 * np.pi * carrier_hz * dt)
            tau += period * (1.0 + jitter_fraction * rng.uniform(-1.0, 1.0))
        return out


def _render_waveform(cfg: SynthConfig, index: int, amplitude_g: float) -> np.ndarray:
    # substream per (seed, waveform index): output does not depend on thread count
    rng = Seeding.rng(cfg.seed, index)
    n = cfg.waveform_len
    t = np.arange(n) / cfg.sampling_rate_hz
    phase = rng.uniform(0.0, 2.0 * np.pi)
    samples = cfg.noise_sigma_g * rng.standard_normal(n)
    samples += cfg.shaft_amplitude_g * np.sin(2.0 * np.pi * cfg.shaft_hz * t + phase)

    if amplitude_g > 0.0 and cfg.fault_type != 'none':
        samples += amplitude_g * ImpulseTrain.render(
            n, cfg.sampling_rate_hz, cfg.fault_char_freq_hz, cfg.carrier_hz,
            cfg.impulse_decay_per_s, cfg.jitter_fraction, rng,
        )
        if cfg.fault_type == 'compound':
            ratio = settings.BENCHMARK_CONFIG['SYNTH_COMPOUND_SECOND_RATIO']
            samples += 0.8 * amplitude_g * ImpulseTrain.render(
                n, cfg.sampling_rate_hz, ratio * cfg.fault_char_freq_hz, cfg.carrier_hz,
                cfg.impulse_decay_per_s, cfg.jitter_fraction, rng,
            )
    return samples


def onset_index(cfg: SynthConfig) -> int:
    return int(math.floor(cfg.degradation.onset_fraction * cfg.n_waveforms + 1e-9))


def amplitude_schedule(cfg: SynthConfig) -> List[float]:
    """Impulse amplitude per waveform: zero before onset, then growing to end_amplitude_g."""
    n = cfg.n_waveforms
    if cfg.degradation is None:
        return [cfg.onset_amplitude_g] * n
    onset = onset_index(cfg)
    start = cfg.onset_amplitude_g
    end = cfg.degradation.end_amplitude_g
    span = n - 1 - onset
    amplitudes = []
    for i in range(n):
        if i < onset:
            amplitudes.append(0.0)
            continue
        frac = (i - onset) / span if span > 0 else 1.0
        if cfg.degradation.growth == 'linear':
            amplitudes.append(start + (end - start) * frac)
        else:
            amplitudes.append(start * (end / start) ** frac)
    return amplitudes


def _build(cfg: SynthConfig, amplitudes: Sequence[float], fault_label: Optional[str]) -> List[WaveformRecord]:
    def _one(index: int) -> WaveformRecord:
        return WaveformRecord(
            bearing_id=cfg.bearing_id,
            condition_id=cfg.condition_id,
            seq_index=index,
            samples=_render_waveform(cfg, index, amplitudes[index]),
            sampling_rate_hz=cfg.sampling_rate_hz,
            fault_label=fault_label,
        )
    return thread_map(_one, range(cfg.n_waveforms))


def _ground_truth(cfg: SynthConfig, onset: Optional[int], amplitudes: Sequence[float]) -> GroundTruth:
    return GroundTruth(
        bearing_id=cfg.bearing_id,
        fault_type=cfg.fault_type,
        fault_label=cfg.fault_label,
        onset_index=onset,
        fault_char_freq_hz=cfg.fault_char_freq_hz,
        shaft_hz=cfg.shaft_hz,
        carrier_hz=cfg.carrier_hz,
        amplitudes_g=tuple(float(a) for a in amplitudes),
    )


def generate_run_to_failure(cfg: SynthConfig) -> Tuple[List[WaveformRecord], GroundTruth]:
    """
    Healthy waveforms (noise + shaft tone) up to the onset index, then fault
    impulses whose amplitude starts at the SNR-derived level and grows
    linearly or exponentially to ``end_amplitude_g`` on the last waveform.
    A ``none`` fault type stays healthy throughout and has no onset.
    """
    if cfg.degradation is None:
        raise ConfigurationError("run-to-failure generation needs a degradation block")
    if cfg.fault_type == 'none':
        amplitudes = [0.0] * cfg.n_waveforms
        onset = None
    else:
        amplitudes = amplitude_schedule(cfg)
        onset = onset_index(cfg)
    records = _build(cfg, amplitudes, fault_label=None)
    logger.debug(f"Generated run-to-failure bearing {cfg.bearing_id}: {len(records)} waveforms, onset {onset}")
    return records, _ground_truth(cfg, onset, amplitudes)


def generate_injected(cfg: SynthConfig) -> Tuple[List[WaveformRecord], GroundTruth]:
    """Stationary recordings: every waveform carries the same fault signature."""
    if cfg.degradation is not None:
        raise ConfigurationError("injected-fault generation must not declare degradation")
    amplitudes = [0.0 if cfg.fault_type == 'none' else cfg.onset_amplitude_g] * cfg.n_waveforms
    records = _build(cfg, amplitudes, fault_label=cfg.fault_label)
    logger.debug(f"Generated injected bearing {cfg.bearing_id} ({cfg.fault_label}): {len(records)} waveforms")
    return records, _ground_truth(cfg, None, amplitudes)


def add_bearing_nuisance(
    records: Sequence[WaveformRecord],
    bearing_id: str,
    nuisance_gain_db: float,
    nuisance_freq_hz: float,
) -> List[WaveformRecord]:
    """
    Add a fixed tone of amplitude 10^(gain/20) g to every waveform of
    ``bearing_id``. The tone has zero phase at each waveform's first sample,
    so it is an identical fingerprint on all of that bearing's records.
    """
    if not nuisance_freq_hz > 0:
        raise ConfigurationError("nuisance frequency must be positive")
    if nuisance_gain_db == -math.inf:
        return list(records)
    amplitude = 10.0 ** (nuisance_gain_db / 20.0)
    out = []
    for record in records:
        if record.bearing_id != bearing_id:
            out.append(record)
            continue
        if nuisance_freq_hz >= record.sampling_rate_hz / 2.0:
            raise ConfigurationError(
                f"nuisance frequency {nuisance_freq_hz} Hz is above Nyquist for {record.record_id}"
            )
        t = np.arange(record.samples.size) / record.sampling_rate_hz
        out.append(record.with_samples(record.samples + amplitude * np.sin(2.0 * np.pi * nuisance_freq_hz * t)))
    return out


# ==================== Dataset materialization ====================

def generate_dataset(spec: SynthDatasetSpec) -> Tuple[Dict[str, List[WaveformRecord]], Dict[str, GroundTruth]]:
    generate = generate_run_to_failure if spec.kind == 'run_to_failure' else generate_injected
    by_bearing: Dict[str, List[WaveformRecord]] = {}
    truths: Dict[str, GroundTruth] = {}
    for bearing in spec.bearings:
        records, truth = generate(bearing.config)
        if bearing.nuisance is not None:
            records = add_bearing_nuisance(
                records, bearing.config.bearing_id, bearing.nuisance.gain_db, bearing.nuisance.freq_hz,
            )
        by_bearing[bearing.config.bearing_id] = records
        truths[bearing.config.bearing_id] = truth
    return by_bearing, truths


def write_dataset(
    by_bearing: Dict[str, List[WaveformRecord]],
    truths: Dict[str, GroundTruth],
    out_root,
    declare_labels: bool,
) -> Path:
    """
    Write a femto_like tree (``Bearing<id>/acc_<n>.csv``), ``ground_truth.json``
    and, for injected sets, ``bearing_labels.json``.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    for bearing_id, records in by_bearing.items():
        for record in records:
            WaveformCSV.write(out_root / f'Bearing{bearing_id}' / f'acc_{record.seq_index + 1:05d}.csv',
                              record.samples)
    write_json(out_root / GROUND_TRUTH_FILE, {b: t.to_dict() for b, t in truths.items()})
    if declare_labels:
        write_json(out_root / BEARING_LABELS_FILE, {b: t.fault_label for b, t in truths.items()})
    logger.info(f"💾 Wrote synthetic dataset with {len(by_bearing)} bearings to {out_root}")
    return out_root


def materialize(spec: SynthDatasetSpec, out_root) -> Dict[str, GroundTruth]:
    by_bearing, truths = generate_dataset(spec)
    write_dataset(by_bearing, truths, out_root, declare_labels=spec.kind == 'injected')
    return truths


def parse_dataset_spec(data: dict, kind: Optional[str] = None) -> SynthDatasetSpec:
    """
    Validate a synthetic dataset document. A bare single-bearing config is
    accepted too and wrapped into a one-bearing dataset of ``kind``.
    """
    from .serializers import SynthConfigSerializer, SynthDatasetSerializer

    if 'bearings' not in data:
        serializer = SynthConfigSerializer(data=data)
        if not serializer.is_valid():
            raise ConfigurationError("invalid synthetic bearing config", serializer.errors)
        config = SynthConfigSerializer.build(serializer.validated_data)
        inferred = 'run_to_failure' if config.degradation is not None else 'injected'
        if kind is not None and kind != inferred:
            raise ConfigurationError(f"config describes a {inferred} bearing, not {kind}")
        return SynthDatasetSpec(
            dataset_id=f'synthetic-{config.bearing_id}', kind=inferred,
            bearings=[SynthBearing(config=config)],
        )

    serializer = SynthDatasetSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError("invalid synthetic dataset", serializer.errors)
    spec = serializer.validated_data['spec']
    if kind is not None and spec.kind != kind:
        raise ConfigurationError(f"dataset kind is {spec.kind}, not {kind}")
    return spec
