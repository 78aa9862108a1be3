import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from core.exceptions import ConfigurationError
from core.utils import Seeding, read_json, thread_map, write_json

from .models import LabelAssignment, SampleLabel

logger = logging.getLogger('labeling')

FAULT_TYPE_DIR = Path(__file__).resolve().parent / 'fault_types'


class PrincipalComponents:
    """
    PCA through the SVD of a centred matrix.

    Each component's sign is fixed so that its largest-magnitude loading is
    positive, making projections reproducible across LAPACK builds.
    """

    @staticmethod
    def fit_transform(Z: np.ndarray, n_components: int):
        centred = Z - Z.mean(axis=0)
        _, singular, vt = np.linalg.svd(centred, full_matrices=False)
        k = min(n_components, vt.shape[0])
        components = vt[:k].copy()
        for row in components:
            if row[np.argmax(np.abs(row))] < 0:
                row *= -1.0
        explained = singular[:k] ** 2 / max(float(np.sum(singular ** 2)), 1e-300)
        return centred @ components.T, components, explained


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    restart: int


class KMeans:
    """Lloyd iterations from k-means++ seeds, best of several restarts."""

    @staticmethod
    def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        n = X.shape[0]
        centroids = [X[rng.integers(n)]]
        closest = np.sum((X - centroids[0]) ** 2, axis=1)
        for _ in range(1, k):
            total = closest.sum()
            if total <= 0.0:
                choice = int(rng.integers(n))
            else:
                choice = int(np.searchsorted(np.cumsum(closest), rng.uniform(0.0, total), side='right'))
                choice = min(choice, n - 1)
            centroids.append(X[choice])
            closest = np.minimum(closest, np.sum((X - X[choice]) ** 2, axis=1))
        return np.array(centroids)

    @staticmethod
    def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
        k = centroids.shape[0]
        previous = np.inf
        assignments = np.zeros(X.shape[0], dtype=int)
        inertia = np.inf
        iterations = 0
        for iterations in range(1, max_iter + 1):
            distances = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            assignments = np.argmin(distances, axis=1)
            inertia = float(distances[np.arange(X.shape[0]), assignments].sum())
            for c in range(k):
                members = assignments == c
                if members.any():
                    centroids[c] = X[members].mean(axis=0)
                else:
                    # empty cluster takes the point farthest from its centroid
                    far = int(np.argmax(distances[np.arange(X.shape[0]), assignments]))
                    centroids[c] = X[far]
            if previous < np.inf and previous - inertia <= tol * max(previous, 1e-300):
                break
            previous = inertia
        distances = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignments = np.argmin(distances, axis=1)
        inertia = float(distances[np.arange(X.shape[0]), assignments].sum())
        return assignments, centroids, inertia, iterations

    @staticmethod
    def fit(X: np.ndarray, k: int, seed: int, restarts: int, max_iter: int, tol: float) -> KMeansResult:
        def _restart(index: int) -> KMeansResult:
            rng = Seeding.rng(seed, index)
            centroids = KMeans._plus_plus(X, k, rng)
            assignments, centroids, inertia, iterations = KMeans._lloyd(X, centroids, max_iter, tol)
            return KMeansResult(assignments, centroids, inertia, iterations, index)

        results = thread_map(_restart, range(restarts))
        # lowest inertia, earliest restart on ties
        return min(results, key=lambda r: (r.inertia, r.restart))


# ==================== Files ====================

def documented_fault_types(dataset: str) -> Dict[str, str]:
    path = FAULT_TYPE_DIR / f'{dataset}.json'
    if not path.exists():
        raise ConfigurationError(f"no documented fault types for {dataset!r}")
    return {str(k): str(v) for k, v in read_json(path).items()}


def save_labels(assignments: Dict[str, LabelAssignment], path) -> Path:
    """CSV of (bearing_id, seq_index, window_index, label, method, onset) plus params sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for bearing_id, assignment in assignments.items():
        for item in assignment.labels:
            rows.append({
                'bearing_id': bearing_id,
                'seq_index': item.seq_index,
                'window_index': '' if item.window_index is None else item.window_index,
                'label': item.label,
                'method': assignment.method,
                'onset': '' if assignment.onset_seq_index is None else assignment.onset_seq_index,
            })
    columns = ['bearing_id', 'seq_index', 'window_index', 'label', 'method', 'onset']
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    write_json(path.with_name(path.name + '.json'), {b: a.params for b, a in assignments.items()})
    return path


def _optional_int(value) -> Optional[int]:
    return None if value == '' else int(value)


def load_labels(path) -> Dict[str, LabelAssignment]:
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    sidecar = path.with_name(path.name + '.json')
    params = read_json(sidecar) if sidecar.exists() else {}
    assignments: Dict[str, LabelAssignment] = {}
    for bearing_id, group in frame.groupby('bearing_id', sort=False):
        labels = tuple(
            SampleLabel(int(row.seq_index), _optional_int(row.window_index), row.label)
            for row in group.itertuples(index=False)
        )
        first = group.iloc[0]
        assignments[bearing_id] = LabelAssignment(
            bearing_id=bearing_id,
            labels=labels,
            method=first['method'],
            params=params.get(bearing_id, {}),
            onset_seq_index=_optional_int(first['onset']),
        )
    return assignments
