import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from django.conf import settings

from core.exceptions import LabelingError
from features.engine import feature_matrix
from features.models import FeatureSample
from ingest.models import WaveformRecord

from .models import FAILURE, NORMAL, LabelAssignment, SampleLabel, canonical_label
from .utils import KMeans, PrincipalComponents

logger = logging.getLogger('labeling')


def threshold_label(records: Sequence[WaveformRecord], threshold_g: Optional[float] = None) -> LabelAssignment:
    """
    First-exceedance labeling of one bearing.

    Onset is the first waveform whose max |sample| exceeds ``threshold_g``;
    that waveform and every later one are failure. Labels are waveform-level
    and so cover every window of each waveform.
    """
    if not records:
        raise LabelingError("threshold labeling needs at least one waveform")
    threshold_g = settings.BENCHMARK_CONFIG['THRESHOLD_G'] if threshold_g is None else float(threshold_g)
    if threshold_g <= 0:
        raise LabelingError(f"threshold must be positive, got {threshold_g}")
    bearing_id = records[0].bearing_id
    seqs = [r.seq_index for r in records]
    if any(r.bearing_id != bearing_id for r in records):
        raise LabelingError("threshold labeling runs on one bearing at a time")
    if any(b <= a for a, b in zip(seqs, seqs[1:])):
        raise LabelingError(f"bearing {bearing_id}: records are not ordered by seq_index")

    onset = None
    for record in records:
        if float(np.max(np.abs(record.samples))) > threshold_g:
            onset = record.seq_index
            break

    labels = tuple(
        SampleLabel(r.seq_index, None, FAILURE if onset is not None and r.seq_index >= onset else NORMAL)
        for r in records
    )
    logger.debug(f"Threshold {threshold_g} g on {bearing_id}: onset {onset}")
    return LabelAssignment(
        bearing_id=bearing_id,
        labels=labels,
        method='threshold',
        params={'threshold_g': threshold_g},
        onset_seq_index=onset,
    )


def pca_kmeans_label(
    spectral_samples: Sequence[FeatureSample],
    n_clusters: Optional[int] = None,
    n_components: Optional[int] = None,
    seed: int = 0,
    enrichment_threshold: Optional[float] = None,
    force_final_cluster: Optional[bool] = None,
) -> LabelAssignment:
    """
    Segment one bearing's run into normal and failure by clustering.

    Features are z-scored over the bearing (zero-variance columns dropped)
    and projected on their leading principal components; k-means groups the
    projections. A cluster whose mean normalized time position
    rank / (N - 1) is at least the enrichment threshold is a failure cluster,
    and so is the cluster of the final sample unless forcing is disabled.
    Onset is the waveform of the earliest failure sample.
    """
    config = settings.BENCHMARK_CONFIG
    n_clusters = config['KMEANS_CLUSTERS'] if n_clusters is None else int(n_clusters)
    n_components = config['PCA_COMPONENTS'] if n_components is None else int(n_components)
    theta = config['ENRICHMENT_THRESHOLD'] if enrichment_threshold is None else float(enrichment_threshold)
    force = config['FORCE_FINAL_CLUSTER'] if force_final_cluster is None else bool(force_final_cluster)

    samples = sorted(spectral_samples, key=lambda s: (s.waveform_seq_index, s.window_index))
    if not samples:
        raise LabelingError("PCA labeling needs samples")
    bearing_id = samples[0].bearing_id
    if any(s.bearing_id != bearing_id for s in samples):
        raise LabelingError("PCA labeling runs on one bearing at a time")
    if len(samples) < n_clusters:
        raise LabelingError(
            f"bearing {bearing_id}: {len(samples)} samples are fewer than {n_clusters} clusters"
        )

    X = feature_matrix(samples)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > config['CONSTANT_STD_EPS']
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.warning(f"⚠️ {bearing_id}: dropped {dropped} zero-variance feature columns before PCA")
    if not keep.any():
        raise LabelingError(f"bearing {bearing_id}: every feature column is constant")
    Z = (X[:, keep] - mean[keep]) / std[keep]

    scores, _, explained = PrincipalComponents.fit_transform(Z, n_components)
    result = KMeans.fit(
        scores, n_clusters, seed,
        restarts=config['KMEANS_RESTARTS'],
        max_iter=config['KMEANS_MAX_ITER'],
        tol=config['KMEANS_TOL'],
    )

    # cluster ids renumbered by first appearance in time
    order: Dict[int, int] = {}
    for raw in result.assignments:
        order.setdefault(int(raw), len(order))
    clusters = np.array([order[int(raw)] for raw in result.assignments])

    n = len(samples)
    position = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
    time_means = {c: float(position[clusters == c].mean()) for c in sorted(set(clusters.tolist()))}
    failure = {c for c, t in time_means.items() if t >= theta}
    if force:
        failure.add(int(clusters[-1]))

    labels = tuple(
        SampleLabel(s.waveform_seq_index, s.window_index, FAILURE if c in failure else NORMAL)
        for s, c in zip(samples, clusters)
    )
    failure_seqs = [s.waveform_seq_index for s, c in zip(samples, clusters) if c in failure]
    onset = min(failure_seqs) if failure_seqs else None
    logger.debug(
        f"PCA/k-means on {bearing_id}: cluster time means {time_means}, failure {sorted(failure)}, onset {onset}"
    )
    return LabelAssignment(
        bearing_id=bearing_id,
        labels=labels,
        method='pca_kmeans',
        params={
            'n_clusters': n_clusters,
            'n_components': int(scores.shape[1]),
            'seed': seed,
            'enrichment_threshold': theta,
            'force_final_cluster': force,
            'dropped_columns': dropped,
            'explained_variance': [float(v) for v in explained],
            'inertia': result.inertia,
            'cluster_time_means': {str(c): t for c, t in time_means.items()},
            'failure_clusters': sorted(failure),
        },
        onset_seq_index=onset,
    )


def declared_labels(entries: Iterable) -> Dict[str, LabelAssignment]:
    """
    Pass through the labels a dataset declares (manifest entries or records).

    Labels are reduced to their class: 'IR/0.007' -> 'IR', 'Normal' -> 'normal'.
    """
    by_bearing: Dict[str, List[SampleLabel]] = {}
    missing = []
    for entry in entries:
        if entry.fault_label is None or str(entry.fault_label).strip() == '':
            missing.append(f"{entry.bearing_id}#{entry.seq_index}")
            continue
        by_bearing.setdefault(entry.bearing_id, []).append(
            SampleLabel(entry.seq_index, None, canonical_label(entry.fault_label))
        )
    if missing:
        shown = ', '.join(missing[:10])
        raise LabelingError(f"{len(missing)} records carry no fault label: {shown}")

    assignments = {
        bearing_id: LabelAssignment(bearing_id=bearing_id, labels=tuple(labels), method='declared')
        for bearing_id, labels in by_bearing.items()
    }
    classes = {item.label for a in assignments.values() for item in a.labels}
    if len(classes) < 2:
        logger.warning(f"⚠️ Declared labels form a single class {sorted(classes)}; unusable for training")
    return assignments


def binarize(assignment: LabelAssignment) -> LabelAssignment:
    return assignment.relabel(lambda label: NORMAL if label == NORMAL else FAILURE)


def assign_fault_type(assignment: LabelAssignment, fault_label: str) -> LabelAssignment:
    """Failure windows of a run-to-failure bearing take the bearing's documented fault class."""
    fault_class = canonical_label(fault_label)
    return assignment.relabel(
        lambda label: fault_class if label == FAILURE else label,
        fault_type=fault_class,
    )
