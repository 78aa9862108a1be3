from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from classifiers.models import ModelSpec
from core.utils import config_hash
from features.models import WindowSpec
from metrics.models import ConfusionMatrix, MetricSet

TASK_CHOICES = ('binary', 'multiclass')
FORMAT_CHOICES = ('markdown', 'md', 'csv', 'json')
COMPARISON_CHOICES = ('splits', 'labelers')

# Row labels as the result tables print them
MODEL_LABELS = {
    'dummy_stratified': 'DUMMY',
    'gaussian_nb': 'NB',
    'logistic_regression': 'LR',
    'svm_rbf': 'SVM',
    'random_forest': 'RF',
    'mlp': 'MLP',
}


@dataclass(frozen=True)
class DatasetSource:
    """Exactly one of ``manifest``, ``root`` (+ layout) or ``synth`` is set."""
    manifest: Optional[Path] = None
    root: Optional[Path] = None
    layout: Optional[str] = None
    sampling_rate_hz: Optional[float] = None
    synth: Optional[Dict[str, Any]] = None
    resample_hz: Optional[float] = None

    @property
    def kind(self) -> str:
        if self.synth is not None:
            return 'synth'
        return 'manifest' if self.manifest is not None else 'scan'

    def to_dict(self) -> dict:
        return {
            'manifest': str(self.manifest) if self.manifest else None,
            'root': str(self.root) if self.root else None,
            'layout': self.layout,
            'sampling_rate_hz': self.sampling_rate_hz,
            'synth': self.synth,
            'resample_hz': self.resample_hz,
        }


@dataclass(frozen=True)
class LabelingConfig:
    method: str
    threshold_g: Optional[float] = None
    clusters: Optional[int] = None
    components: Optional[int] = None
    enrichment_threshold: Optional[float] = None
    force_final_cluster: Optional[bool] = None
    family: str = 'RFFT'
    fault_types: Optional[str] = None

    @property
    def name(self) -> str:
        if self.method == 'threshold' and self.threshold_g is not None:
            return f'threshold({self.threshold_g:g}g)'
        return self.method

    def to_dict(self) -> dict:
        return {
            'method': self.method,
            'threshold_g': self.threshold_g,
            'clusters': self.clusters,
            'components': self.components,
            'enrichment_threshold': self.enrichment_threshold,
            'force_final_cluster': self.force_final_cluster,
            'family': self.family,
            'fault_types': self.fault_types,
        }


@dataclass(frozen=True)
class SplitConfig:
    """``table`` is a shipped table name, a file path or an inline table."""
    strategy: str
    table: Optional[Union[str, Dict[str, List[str]]]] = None
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    def to_dict(self) -> dict:
        return {'strategy': self.strategy, 'table': self.table, 'fractions': list(self.fractions)}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetSource
    labeling: LabelingConfig
    task: str
    window: WindowSpec
    families: Tuple[str, ...]
    split: SplitConfig
    models: Tuple[ModelSpec, ...]
    output_dir: Path
    seed: int = 0
    report_mode: str = 'positive'
    stft_sub_len: Optional[int] = None
    stft_sub_overlap: Optional[float] = None

    def to_dict(self) -> dict:
        """Everything that determines results; the output location is left out."""
        return {
            'name': self.name,
            'dataset': self.dataset.to_dict(),
            'labeling': self.labeling.to_dict(),
            'task': self.task,
            'window': {'length': self.window.length, 'overlap_fraction': self.window.overlap_fraction},
            'stft': {'sub_len': self.stft_sub_len, 'sub_overlap': self.stft_sub_overlap},
            'families': list(self.families),
            'split': self.split.to_dict(),
            'models': [spec.to_dict() for spec in self.models],
            'report_mode': self.report_mode,
            'seed': self.seed,
        }

    @property
    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def with_split(self, split: SplitConfig) -> 'ExperimentConfig':
        return replace(self, split=split)

    def with_labeling(self, labeling: LabelingConfig) -> 'ExperimentConfig':
        return replace(self, labeling=labeling)


@dataclass(frozen=True)
class CellResult:
    """One (model, feature family) cell; either ``metrics`` or ``error`` is set."""
    model: str
    family: str
    metrics: Optional[MetricSet] = None
    confusion: Optional[ConfusionMatrix] = None
    error: Optional[str] = None
    fit_info: Dict[str, Any] = field(default_factory=dict)
    n_train: int = 0
    n_test: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def label(self) -> str:
        return MODEL_LABELS.get(self.model, self.model)

    def to_dict(self) -> dict:
        return {
            'model': self.model,
            'family': self.family,
            'metrics': self.metrics.to_dict() if self.metrics else None,
            'confusion': self.confusion.to_dict() if self.confusion else None,
            'error': self.error,
            'fit_info': self.fit_info,
            'n_train': self.n_train,
            'n_test': self.n_test,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CellResult':
        return cls(
            model=data['model'],
            family=data['family'],
            metrics=MetricSet.from_dict(data['metrics']) if data.get('metrics') else None,
            confusion=ConfusionMatrix.from_dict(data['confusion']) if data.get('confusion') else None,
            error=data.get('error'),
            fit_info=data.get('fit_info') or {},
            n_train=data.get('n_train', 0),
            n_test=data.get('n_test', 0),
        )


@dataclass(frozen=True)
class EvaluationReport:
    """
    Results grid of one experiment: a cell per configured (model, family),
    in configuration order, plus the sample, label and leakage context the
    numbers came from.
    """
    name: str
    dataset_id: str
    task: str
    split_strategy: str
    labeling: str
    report_mode: str
    config_hash: str
    code_version: str
    seed: int
    models: Tuple[str, ...]
    families: Tuple[str, ...]
    cells: Tuple[CellResult, ...]
    sample_counts: Dict[str, Dict[str, int]] = field(default_factory=dict)
    label_summary: Dict[str, Any] = field(default_factory=dict)
    audit: Dict[str, Any] = field(default_factory=dict)
    provenance: Tuple[Dict[str, Any], ...] = ()
    warnings: Tuple[str, ...] = ()

    def cell(self, model: str, family: str) -> CellResult:
        for cell in self.cells:
            if cell.model == model and cell.family == family:
                return cell
        raise KeyError((model, family))

    @property
    def failed_cells(self) -> List[CellResult]:
        return [c for c in self.cells if not c.ok]

    def to_dict(self) -> dict:
        return {
            'type': 'evaluation',
            'name': self.name,
            'dataset_id': self.dataset_id,
            'task': self.task,
            'split_strategy': self.split_strategy,
            'labeling': self.labeling,
            'report_mode': self.report_mode,
            'config_hash': self.config_hash,
            'code_version': self.code_version,
            'seed': self.seed,
            'models': list(self.models),
            'families': list(self.families),
            'cells': [c.to_dict() for c in self.cells],
            'sample_counts': self.sample_counts,
            'label_summary': self.label_summary,
            'audit': self.audit,
            'provenance': list(self.provenance),
            'warnings': list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'EvaluationReport':
        return cls(
            name=data['name'],
            dataset_id=data['dataset_id'],
            task=data['task'],
            split_strategy=data['split_strategy'],
            labeling=data['labeling'],
            report_mode=data['report_mode'],
            config_hash=data['config_hash'],
            code_version=data['code_version'],
            seed=data['seed'],
            models=tuple(data['models']),
            families=tuple(data['families']),
            cells=tuple(CellResult.from_dict(c) for c in data['cells']),
            sample_counts=data.get('sample_counts', {}),
            label_summary=data.get('label_summary', {}),
            audit=data.get('audit', {}),
            provenance=tuple(data.get('provenance', ())),
            warnings=tuple(data.get('warnings', ())),
        )


@dataclass(frozen=True)
class PairedReport:
    """
    The same pipeline under two settings (split strategies or labelers).

    ``deltas`` holds one entry per cell: right F_mac minus left F_mac.
    """
    comparison: str
    left_name: str
    right_name: str
    left: EvaluationReport
    right: EvaluationReport
    deltas: Tuple[Dict[str, Any], ...] = ()
    notes: Tuple[str, ...] = ()
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed_cells(self) -> List[CellResult]:
        return self.left.failed_cells + self.right.failed_cells

    def to_dict(self) -> dict:
        return {
            'type': 'paired',
            'comparison': self.comparison,
            'left_name': self.left_name,
            'right_name': self.right_name,
            'left': self.left.to_dict(),
            'right': self.right.to_dict(),
            'deltas': list(self.deltas),
            'notes': list(self.notes),
            'details': self.details,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'PairedReport':
        return cls(
            comparison=data['comparison'],
            left_name=data['left_name'],
            right_name=data['right_name'],
            left=EvaluationReport.from_dict(data['left']),
            right=EvaluationReport.from_dict(data['right']),
            deltas=tuple(data.get('deltas', ())),
            notes=tuple(data.get('notes', ())),
            details=data.get('details', {}),
        )
