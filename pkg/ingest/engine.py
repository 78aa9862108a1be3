import logging
import math
import shutil
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from django.conf import settings
from scipy import signal

from core.exceptions import (
    ConfigurationError, DatasetIOError, ManifestError, UnsupportedRateError, WaveformLengthError,
)
from core.utils import natural_key, read_json, thread_map, write_json

from .models import DatasetManifest, ManifestEntry, WaveformRecord
from .serializers import ManifestSerializer
from .utils import (
    BEARING_LABELS_FILE, MANIFEST_FILE, LayoutConventions, LayoutMismatch, WaveformCSV,
)

logger = logging.getLogger('ingest')


# ==================== Scanning ====================

def scan_dataset(
    root_path,
    layout: str,
    dataset_id: Optional[str] = None,
    sampling_rate_hz: Optional[float] = None,
) -> DatasetManifest:
    """
    Enumerate every recording under ``root_path`` for the given layout.

    Within a bearing, files are ordered by the acquisition number in their
    name and ``seq_index`` is the rank in that order. Files whose names do not
    parse land in ``manifest.rejects`` with the reason.
    """
    root = Path(root_path)
    parse = LayoutConventions.parser(layout)
    if not root.is_dir():
        raise DatasetIOError(f"dataset root is not a readable directory: {root}")

    try:
        files = sorted((p for p in root.rglob('*') if p.is_file()),
                       key=lambda p: natural_key(p.relative_to(root).as_posix()))
    except OSError as exc:
        raise DatasetIOError(f"cannot read {root}: {exc}") from exc

    declared: Dict[str, str] = {}
    labels_path = root / BEARING_LABELS_FILE
    if labels_path.exists():
        declared = {str(k): str(v) for k, v in read_json(labels_path).items()}

    config = settings.BENCHMARK_CONFIG
    default_rate = sampling_rate_hz or config['LAYOUT_SAMPLING_RATES'].get(layout)

    by_bearing: Dict[str, list] = defaultdict(list)
    rejects: List[Dict[str, str]] = []
    for path in files:
        rel = path.relative_to(root)
        if rel.suffix.lower() != '.csv':
            continue
        try:
            parsed = parse(rel)
        except LayoutMismatch as exc:
            rejects.append({'path': rel.as_posix(), 'reason': str(exc)})
            continue
        if parsed is None:
            logger.debug(f"Skipping {rel.as_posix()}")
            continue
        by_bearing[parsed.bearing_id].append((parsed, path))

    entries: List[ManifestEntry] = []
    for bearing_id in sorted(by_bearing, key=natural_key):
        seen_keys = set()
        items = sorted(by_bearing[bearing_id], key=lambda item: item[0].order_key)
        seq = 0
        for parsed, path in items:
            if parsed.order_key in seen_keys:
                rejects.append({
                    'path': path.relative_to(root).as_posix(),
                    'reason': f"duplicate acquisition index {parsed.order_key} for bearing {bearing_id}",
                })
                continue
            seen_keys.add(parsed.order_key)
            rate = sampling_rate_hz or parsed.sampling_rate_hz or default_rate
            if not rate:
                raise ConfigurationError(f"no sampling rate known for layout {layout!r}")
            entries.append(ManifestEntry(
                path=path,
                bearing_id=bearing_id,
                condition_id=parsed.condition_id,
                seq_index=seq,
                sampling_rate_hz=float(rate),
                fault_label=declared.get(bearing_id, parsed.fault_label),
            ))
            seq += 1

    manifest = DatasetManifest(
        dataset_id=dataset_id or root.name,
        layout=layout,
        root=root,
        records=tuple(entries),
        schema_version=config['SCHEMA_VERSION'],
        rejects=tuple(rejects),
    )
    if not entries:
        logger.warning(f"⚠️ No recordings found under {root} for layout {layout}")
    else:
        logger.info(
            f"📂 Scanned {root}: {len(entries)} records over "
            f"{len(by_bearing)} bearings, {len(rejects)} rejected"
        )
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> Path:
    return write_json(path, manifest.to_dict())


def load_manifest(path, root=None) -> DatasetManifest:
    """Read and validate a manifest; paths resolve against ``root`` or the file's directory."""
    path = Path(path)
    serializer = ManifestSerializer(data=read_json(path))
    if not serializer.is_valid():
        raise ConfigurationError(f"invalid manifest {path}", serializer.errors)
    data = serializer.validated_data
    base = Path(root) if root is not None else path.parent

    entries = []
    missing = []
    for item in data['records']:
        entry_path = base / item['path']
        if not entry_path.exists():
            missing.append(item['path'])
        entries.append(ManifestEntry(
            path=entry_path,
            bearing_id=item['bearing_id'],
            condition_id=item['condition_id'],
            seq_index=item['seq_index'],
            sampling_rate_hz=item['sampling_rate_hz'],
            fault_label=item['fault_label'],
            axis=item['axis'],
        ))
    if missing:
        shown = ', '.join(missing[:10])
        raise ManifestError(f"{len(missing)} manifest paths do not exist under {base}: {shown}")

    return DatasetManifest(
        dataset_id=data['dataset_id'],
        layout=data['layout'],
        root=base,
        records=tuple(entries),
        schema_version=data['schema_version'],
        rejects=tuple(dict(r) for r in data['rejects']),
    )


# ==================== Loading ====================

def load_waveform(entry: ManifestEntry, expected_length: Optional[int] = None) -> WaveformRecord:
    samples = WaveformCSV.read(entry.path, axis=entry.axis, expected_length=expected_length)
    return WaveformRecord(
        bearing_id=entry.bearing_id,
        condition_id=entry.condition_id,
        seq_index=entry.seq_index,
        samples=samples,
        sampling_rate_hz=entry.sampling_rate_hz,
        fault_label=entry.fault_label,
        axis=entry.axis,
    )


def load_records(manifest: DatasetManifest, threads: Optional[int] = None) -> List[WaveformRecord]:
    """
    Load every record; output order follows the manifest. In fixed-length
    layouts all waveforms of a bearing must have the length of its first
    acquisition.
    """
    records = thread_map(load_waveform, manifest.records, threads)
    if manifest.layout in settings.BENCHMARK_CONFIG['FIXED_LENGTH_LAYOUTS']:
        check_bearing_lengths(manifest, records)
    logger.info(f"📥 Loaded {len(records)} waveforms from {manifest.dataset_id}")
    return records


def check_bearing_lengths(manifest: DatasetManifest, records: List[WaveformRecord]) -> None:
    first: Dict[str, WaveformRecord] = {}
    for record in records:
        held = first.get(record.bearing_id)
        if held is None or record.seq_index < held.seq_index:
            first[record.bearing_id] = record
    for entry, record in zip(manifest.records, records):
        expected = first[record.bearing_id].samples.size
        if record.samples.size != expected:
            raise WaveformLengthError(
                entry.path, expected, record.samples.size,
                f"bearing {record.bearing_id} waveforms differ in length",
            )


def group_by_bearing(records: List[WaveformRecord]) -> Dict[str, List[WaveformRecord]]:
    grouped: Dict[str, List[WaveformRecord]] = defaultdict(list)
    for record in records:
        grouped[record.bearing_id].append(record)
    return {
        bearing: sorted(items, key=lambda r: r.seq_index)
        for bearing, items in sorted(grouped.items(), key=lambda kv: natural_key(kv[0]))
    }


# ==================== Resampling ====================

def decimation_factor(source_rate_hz: float, target_rate_hz: float) -> int:
    if not target_rate_hz > 0:
        raise UnsupportedRateError(f"target rate must be positive, got {target_rate_hz}")
    ratio = source_rate_hz / target_rate_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
        raise UnsupportedRateError(
            f"{source_rate_hz} Hz -> {target_rate_hz} Hz is not an integer decimation"
        )
    return factor


def anti_alias_taps(source_rate_hz: float, target_rate_hz: float) -> np.ndarray:
    config = settings.BENCHMARK_CONFIG
    cutoff = config['FIR_CUTOFF_RATIO'] * target_rate_hz / 2.0
    return signal.firwin(config['FIR_TAPS'], cutoff, window=config['FIR_WINDOW'], fs=source_rate_hz)


def downsample(record: WaveformRecord, target_rate_hz: float) -> WaveformRecord:
    """
    Low-pass filter and decimate to ``target_rate_hz``.

    The filter is a linear-phase windowed-sinc FIR (127 taps, cutoff at 0.8 of
    the new Nyquist). The signal is zero-padded at both ends and the group
    delay of (taps - 1) / 2 samples is removed, so filtered sample i stays
    aligned with input sample i. Decimation keeps samples 0, f, 2f, ...;
    output length is exactly ceil(N / f).
    """
    factor = decimation_factor(record.sampling_rate_hz, target_rate_hz)
    if factor == 1:
        return record

    taps = anti_alias_taps(record.sampling_rate_hz, target_rate_hz)
    delay = (taps.size - 1) // 2
    full = np.convolve(record.samples, taps)
    filtered = full[delay:delay + record.samples.size]
    decimated = filtered[::factor]
    assert decimated.size == math.ceil(record.samples.size / factor)
    return record.with_samples(decimated, sampling_rate_hz=record.sampling_rate_hz / factor)


def resample_dataset(manifest: DatasetManifest, target_rate_hz: float, out_root) -> DatasetManifest:
    """Write a downsampled copy of every record plus its manifest under ``out_root``."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)

    def _convert(entry: ManifestEntry) -> ManifestEntry:
        record = downsample(load_waveform(entry), target_rate_hz)
        target = out_root / Path(entry.path).relative_to(manifest.root)
        WaveformCSV.write(target, record.samples, axis=entry.axis)
        return ManifestEntry(
            path=target,
            bearing_id=entry.bearing_id,
            condition_id=entry.condition_id,
            seq_index=entry.seq_index,
            sampling_rate_hz=record.sampling_rate_hz,
            fault_label=entry.fault_label,
            axis=entry.axis,
        )

    entries = thread_map(_convert, manifest.records)
    labels = manifest.root / BEARING_LABELS_FILE
    if labels.exists():
        shutil.copyfile(labels, out_root / BEARING_LABELS_FILE)

    resampled = DatasetManifest(
        dataset_id=f"{manifest.dataset_id}@{int(target_rate_hz)}Hz",
        layout=manifest.layout,
        root=out_root,
        records=tuple(entries),
        schema_version=manifest.schema_version,
        rejects=manifest.rejects,
    )
    save_manifest(resampled, out_root / MANIFEST_FILE)
    logger.info(f"✅ Resampled {len(entries)} records to {target_rate_hz} Hz under {out_root}")
    return resampled
