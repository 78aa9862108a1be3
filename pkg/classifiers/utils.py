import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from django.conf import settings

from core.exceptions import DatasetIOError, ModelError
from core.utils import dumps

from .models import ModelSpec, Standardizer, TrainedModel

logger = logging.getLogger('classifiers')

FORMAT = 'bearing-bench-model'


def encode_state(value: Any) -> Any:
    """Arrays become ``{"__ndarray__": [...], "dtype": ..., "shape": [...]}``."""
    if isinstance(value, np.ndarray):
        return {'__ndarray__': value.ravel().tolist(), 'dtype': value.dtype.str, 'shape': list(value.shape)}
    if isinstance(value, dict):
        return {key: encode_state(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode_state(item) for item in value]
    return value


def decode_state(value: Any) -> Any:
    if isinstance(value, dict):
        if '__ndarray__' in value:
            return np.array(value['__ndarray__'], dtype=np.dtype(value['dtype'])).reshape(value['shape'])
        return {key: decode_state(item) for key, item in value.items()}
    if isinstance(value, list):
        return [decode_state(item) for item in value]
    return value


def save_model(model: TrainedModel, path) -> Path:
    """Versioned JSON container; floats are written with repr so predictions reload bit-exactly."""
    path = Path(path)
    document = {
        'format': FORMAT,
        'format_version': settings.BENCHMARK_CONFIG['MODEL_FORMAT_VERSION'],
        'spec': model.spec.to_dict(),
        'classes': list(model.classes),
        'standardizer': encode_state({'mean': model.standardizer.mean, 'std': model.standardizer.std}),
        'class_weights': model.class_weights,
        'fit_info': model.fit_info,
        'state': encode_state(model.state),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(document, indent=None) + '\n', encoding='utf-8')
    logger.info(f"💾 Saved {model.spec.kind} model to {path}")
    return path


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise DatasetIOError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path} is not a model file: {exc}") from exc

    if document.get('format') != FORMAT:
        raise ModelError(f"{path} is not a model file")
    version = document.get('format_version')
    if version != settings.BENCHMARK_CONFIG['MODEL_FORMAT_VERSION']:
        raise ModelError(f"{path}: unsupported model format version {version}")

    spec = document['spec']
    standardizer = decode_state(document['standardizer'])
    return TrainedModel(
        spec=ModelSpec(
            kind=spec['kind'],
            hyperparams=spec['hyperparams'],
            class_weighting=spec['class_weighting'],
            seed=spec['seed'],
        ),
        classes=tuple(document['classes']),
        standardizer=Standardizer(standardizer['mean'], standardizer['std']),
        state=decode_state(document['state']),
        class_weights=document['class_weights'],
        fit_info=document['fit_info'],
    )


def design_matrix(samples: Sequence, assignments: Dict) -> Tuple[np.ndarray, List[str]]:
    """Feature rows and their window labels for samples of labeled bearings."""
    if not samples:
        return np.zeros((0, 0)), []
    X = np.vstack([s.values for s in samples])
    y = []
    for sample in samples:
        assignment = assignments.get(sample.bearing_id)
        if assignment is None:
            raise ModelError(f"no labels for bearing {sample.bearing_id}")
        y.append(assignment.label_for(sample.waveform_seq_index, sample.window_index))
    return X, y
