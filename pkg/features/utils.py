import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from django.conf import settings

from core.exceptions import ConfigurationError, DatasetIOError
from core.utils import read_json, write_json

from .engine import stft_shape
from .models import FeatureSample, WindowSpec, normalize_family

logger = logging.getLogger('features')

PROVENANCE_COLUMNS = [
    'bearing_id', 'condition_id', 'seq_index', 'window_index', 'window_start_time_s', 'flags',
]


def sidecar_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.name + '.json')


def value_columns(samples: Sequence[FeatureSample]) -> List[str]:
    if samples and samples[0].feature_names:
        return list(samples[0].feature_names)
    width = samples[0].values.size if samples else 0
    return [f'f{i}' for i in range(width)]


def save_features(
    samples: Sequence[FeatureSample],
    path,
    window_spec: WindowSpec,
    stft_sub_len: Optional[int] = None,
    stft_sub_overlap: Optional[float] = None,
) -> Path:
    """
    One CSV row per sample (provenance columns then values) plus a sidecar
    ``<name>.csv.json`` describing family, windowing and column semantics.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = value_columns(samples)
    family = samples[0].family if samples else None

    provenance = pd.DataFrame({
        'bearing_id': [s.bearing_id for s in samples],
        'condition_id': [s.condition_id for s in samples],
        'seq_index': [s.waveform_seq_index for s in samples],
        'window_index': [s.window_index for s in samples],
        'window_start_time_s': [s.window_start_time_s for s in samples],
        'flags': ['|'.join(s.flags) for s in samples],
    })
    values = pd.DataFrame(
        np.vstack([s.values for s in samples]) if samples else np.zeros((0, len(columns))),
        columns=columns,
    )
    frame = pd.concat([provenance, values], axis=1)
    frame.to_csv(path, index=False, float_format=settings.BENCHMARK_CONFIG['CSV_FLOAT_FORMAT'])

    meta = {
        'schema_version': settings.BENCHMARK_CONFIG['SCHEMA_VERSION'],
        'family': family,
        'window': window_spec.to_dict(),
        'n_samples': len(samples),
        'provenance_columns': PROVENANCE_COLUMNS,
        'value_columns': columns,
    }
    if family == 'RFFT':
        meta['value_semantics'] = 'one-sided DFT magnitude / window length, bin k = k * rate / length'
    elif family == 'STFT':
        sub_len = stft_sub_len or settings.BENCHMARK_CONFIG['STFT_SUB_LEN']
        sub_overlap = settings.BENCHMARK_CONFIG['STFT_SUB_OVERLAP'] if stft_sub_overlap is None else stft_sub_overlap
        slices, bins = stft_shape(window_spec.length, sub_len, sub_overlap)
        meta['stft'] = {'sub_len': sub_len, 'sub_overlap': sub_overlap, 'time_slices': slices, 'bins': bins}
        meta['value_semantics'] = 'Hann STFT magnitude / sub_len, flattened time-major'
    elif family == 'TIME':
        meta['value_semantics'] = 'named TIME statistics'
    write_json(sidecar_path(path), meta)
    logger.info(f"💾 Saved {len(samples)} {family} samples to {path}")
    return path


def load_features(path) -> List[FeatureSample]:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    family = normalize_family(meta['family']) if meta.get('family') else None
    try:
        frame = pd.read_csv(
            path, dtype={'bearing_id': str, 'condition_id': str, 'flags': str}, keep_default_na=False,
        )
    except FileNotFoundError as exc:
        raise DatasetIOError(f"feature file not found: {path}") from exc
    columns = meta['value_columns']
    missing = [c for c in PROVENANCE_COLUMNS + columns if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"{path} is missing columns {missing[:5]}")
    if family is None:
        return []

    values = frame[columns].to_numpy(dtype=np.float64)
    names = tuple(columns) if family == 'TIME' else ()
    samples = []
    for row, vector in zip(frame.itertuples(index=False), values):
        samples.append(FeatureSample(
            bearing_id=row.bearing_id,
            condition_id=row.condition_id,
            waveform_seq_index=int(row.seq_index),
            window_index=int(row.window_index),
            window_start_time_s=float(row.window_start_time_s),
            family=family,
            values=vector,
            feature_names=names,
            flags=tuple(f for f in row.flags.split('|') if f),
        ))
    return samples
