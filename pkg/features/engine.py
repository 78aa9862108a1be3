"""
Windowing and the three feature families.

Conventions pinned by the tests:

* RFFT: magnitudes of the one-sided DFT divided by the window length L, with
  no doubling of the interior bins. A cosine of amplitude A on bin k gives
  A/2 at index k. Window energy is recovered as
  L * (m0^2 + 2 * sum(interior^2) + m_nyquist^2); see ``spectrum_energy``.
  No taper is applied.
* STFT: periodic Hann sub-windows, magnitudes divided by the sub-window
  length, flattened time-major (all bins of slice 0, then slice 1, ...).
* TIME: see ``time_features``.
"""
import logging
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, signal, stats

from core.exceptions import FeatureError, NonFiniteFeatureError, WindowTooLongError
from core.utils import Seeding, natural_key, thread_map
from ingest.engine import load_waveform
from ingest.models import DatasetManifest, ManifestEntry, WaveformRecord

from .models import TIME_FEATURE_NAMES, FeatureSample, WindowSpec, half_up, normalize_family

logger = logging.getLogger('features')


# ==================== Windowing ====================

def segment(record: WaveformRecord, spec: WindowSpec) -> np.ndarray:
    """
    Overlapping windows as rows of a read-only view.

    Window i covers samples [i*hop, i*hop + L); the trailing remainder that
    does not fill a window is discarded.
    """
    n = record.samples.size
    if n < spec.length:
        raise WindowTooLongError(record.record_id, n, spec.length)
    return sliding_window_view(record.samples, spec.length)[::spec.hop]


# ==================== TIME ====================

@lru_cache(maxsize=32)
def _shapiro_subsample(n: int) -> Optional[np.ndarray]:
    config = settings.BENCHMARK_CONFIG
    size = config['SHAPIRO_SUBSAMPLE']
    if n <= size:
        return None
    rng = Seeding.rng(config['SHAPIRO_SEED'])
    index = np.sort(rng.choice(n, size=size, replace=False))
    index.setflags(write=False)
    return index


def zero_crossings(x: np.ndarray) -> int:
    """
    Sign changes of x - mean(x).

    Samples within 1e-9 of the largest deviation count as zero. Each run of
    zero samples counts as one crossing, plus every strict sign change
    between two adjacent non-zero samples. An integer number of sine cycles
    then gives exactly two crossings per cycle.
    """
    d = x - x.mean()
    scale = np.max(np.abs(d))
    if scale == 0.0:
        return 0
    s = np.sign(d)
    s[np.abs(d) <= 1e-9 * scale] = 0.0
    zero = s == 0.0
    zero_runs = int(zero[0]) + int(np.count_nonzero(zero[1:] & ~zero[:-1]))
    strict = int(np.count_nonzero(s[1:] * s[:-1] < 0.0))
    return zero_runs + strict


def _kl_to_gaussian(x: np.ndarray, mean: float, std: float) -> float:
    config = settings.BENCHMARK_CONFIG
    counts, edges = np.histogram(x, bins=config['KL_BINS'])
    p = counts / x.size
    cdf = stats.norm.cdf(edges, loc=mean, scale=std)
    q = np.diff(cdf)
    eps = config['KL_SMOOTHING']
    return float(stats.entropy(p + eps, q + eps))


def time_features_with_flags(window: np.ndarray) -> Tuple[np.ndarray, Tuple[str, ...]]:
    x = np.asarray(window, dtype=np.float64)
    if x.size < 8:
        raise FeatureError(f"TIME features need at least 8 samples, got {x.size}")
    config = settings.BENCHMARK_CONFIG
    eps = config['CONSTANT_STD_EPS']
    flags = []

    mean = float(x.mean())
    std = float(x.std())
    energy = float(np.dot(x, x))
    rms = float(np.sqrt(energy / x.size))
    abs_median = float(np.median(np.abs(x)))

    if rms < eps:
        crest = 0.0
        flags.append('crest_factor_guarded')
    else:
        crest = float(np.max(np.abs(x)) / rms)

    if std < eps:
        flags.append('constant_window')
        skewness = kurtosis = kl = 0.0
        shapiro_w = 1.0
        n_peaks = 0
    else:
        skewness = float(stats.skew(x))
        kurtosis = float(stats.kurtosis(x, fisher=True))
        peaks, _ = signal.find_peaks(x, prominence=config['PEAK_PROMINENCE_STD'] * std)
        n_peaks = int(peaks.size)
        index = _shapiro_subsample(x.size)
        shapiro_w = float(stats.shapiro(x if index is None else x[index]).statistic)
        kl = _kl_to_gaussian(x, mean, std)

    values = np.array([
        mean, abs_median, std, skewness, kurtosis, crest,
        energy, rms, n_peaks, zero_crossings(x), shapiro_w, kl,
    ], dtype=np.float64)
    return values, tuple(flags)


def time_features(window: np.ndarray) -> np.ndarray:
    """
    The 12 TIME features, ordered as ``TIME_FEATURE_NAMES``.

    abs_median is median(|x|), energy is sum(x^2), std has ddof 0 and
    kurtosis is the Fisher (excess) value. Crest factor max|x| / RMS is 0 when
    RMS < 1e-12. Peaks are local maxima with prominence >= 0.5 * std.
    shapiro_w is the Shapiro-Wilk W on a fixed-seed subsample of at most 512
    points. kl_divergence compares a 32-bin histogram with the Gaussian of the
    same mean and std, each bin mass smoothed by 1e-9. A constant window
    yields skewness, kurtosis, kl and peaks of 0 and W of 1.
    """
    return time_features_with_flags(window)[0]


# ==================== RFFT / STFT ====================

def rfft_features(window: np.ndarray) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)
    return np.abs(fft.rfft(x)) / x.size


def spectrum_energy(magnitudes: np.ndarray, length: int) -> float:
    """Window energy sum(x^2) from ``rfft_features`` output."""
    m2 = np.asarray(magnitudes, dtype=np.float64) ** 2
    if length % 2 == 0:
        total = m2[0] + m2[-1] + 2.0 * m2[1:-1].sum()
    else:
        total = m2[0] + 2.0 * m2[1:].sum()
    return float(length * total)


def stft_shape(window_length: int, sub_len: int, sub_overlap: float) -> Tuple[int, int]:
    """(time slices, frequency bins) of ``stft_features`` output."""
    if sub_len < 1 or sub_len > window_length:
        raise FeatureError(f"STFT sub-window {sub_len} does not fit a window of {window_length}")
    if not 0.0 <= sub_overlap < 1.0:
        raise FeatureError(f"STFT sub-overlap must lie in [0, 1), got {sub_overlap}")
    hop = half_up(sub_len * (1.0 - sub_overlap))
    if hop < 1:
        raise FeatureError("STFT sub-window hop is zero")
    return (window_length - sub_len) // hop + 1, sub_len // 2 + 1


def stft_features(window: np.ndarray, sub_len: Optional[int] = None, sub_overlap: Optional[float] = None) -> np.ndarray:
    config = settings.BENCHMARK_CONFIG
    sub_len = config['STFT_SUB_LEN'] if sub_len is None else int(sub_len)
    sub_overlap = config['STFT_SUB_OVERLAP'] if sub_overlap is None else float(sub_overlap)
    x = np.asarray(window, dtype=np.float64)
    n_slices, _ = stft_shape(x.size, sub_len, sub_overlap)
    hop = half_up(sub_len * (1.0 - sub_overlap))
    frames = sliding_window_view(x, sub_len)[::hop][:n_slices]
    taper = signal.get_window('hann', sub_len)
    magnitudes = np.abs(fft.rfft(frames * taper, axis=1)) / sub_len
    return magnitudes.reshape(-1)


# ==================== Extraction ====================

def _featurize_record(
    record: WaveformRecord,
    family: str,
    spec: WindowSpec,
    stft_sub_len: Optional[int],
    stft_sub_overlap: Optional[float],
) -> List[FeatureSample]:
    samples = []
    for index, window in enumerate(segment(record, spec)):
        flags: Tuple[str, ...] = ()
        names: Tuple[str, ...] = ()
        if family == 'TIME':
            values, flags = time_features_with_flags(window)
            names = TIME_FEATURE_NAMES
        elif family == 'RFFT':
            values = rfft_features(window)
        else:
            values = stft_features(window, stft_sub_len, stft_sub_overlap)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NonFiniteFeatureError(
                f"{family} feature {bad} of {record.record_id} window {index} is not finite"
            )
        samples.append(FeatureSample(
            bearing_id=record.bearing_id,
            condition_id=record.condition_id,
            waveform_seq_index=record.seq_index,
            window_index=index,
            window_start_time_s=index * spec.hop / record.sampling_rate_hz,
            family=family,
            values=values,
            feature_names=names,
            flags=flags,
        ))
    return samples


def extract(
    source: Union[DatasetManifest, Iterable[WaveformRecord]],
    family: str,
    window_spec: WindowSpec,
    stft_sub_len: Optional[int] = None,
    stft_sub_overlap: Optional[float] = None,
    threads: Optional[int] = None,
) -> List[FeatureSample]:
    """
    One FeatureSample per (waveform, window), ordered by (bearing, seq, window).

    ``source`` is a manifest (waveforms are loaded inside the workers) or
    already-loaded records. Output does not depend on the thread count.
    """
    family = normalize_family(family)
    items: Sequence[Union[ManifestEntry, WaveformRecord]]
    if isinstance(source, DatasetManifest):
        items = list(source.records)
    else:
        items = list(source)
    items = sorted(items, key=lambda r: (natural_key(r.bearing_id), r.seq_index))

    def _work(item) -> List[FeatureSample]:
        record = load_waveform(item) if isinstance(item, ManifestEntry) else item
        return _featurize_record(record, family, window_spec, stft_sub_len, stft_sub_overlap)

    chunks = thread_map(_work, items, threads)
    samples = [sample for chunk in chunks for sample in chunk]
    flagged = sum(1 for s in samples if s.flags)
    logger.info(
        f"🧮 Extracted {len(samples)} {family} samples from {len(items)} waveforms "
        f"(window {window_spec.length}, hop {window_spec.hop})"
    )
    if flagged:
        logger.warning(f"⚠️ {flagged} {family} samples carry guarded-value flags")
    return samples


def feature_matrix(samples: Sequence[FeatureSample]) -> np.ndarray:
    if not samples:
        return np.zeros((0, 0))
    return np.vstack([s.values for s in samples])
