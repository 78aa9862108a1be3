import logging
import shutil
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

from django.conf import settings

from classifiers.engine import fit, predict
from classifiers.models import ModelSpec
from classifiers.utils import design_matrix, save_model
from core.exceptions import BenchmarkError, ConfigurationError, DatasetIOError, SplitError
from core.utils import Seeding, natural_key, thread_map, write_json
from features.engine import extract
from features.models import FeatureSample, WindowSpec
from features.utils import save_features
from ingest.engine import group_by_bearing, load_manifest, load_records, resample_dataset, save_manifest, scan_dataset
from ingest.models import DatasetManifest, WaveformRecord
from ingest.utils import MANIFEST_FILE
from labeling.engine import assign_fault_type, binarize, declared_labels, pca_kmeans_label, threshold_label
from labeling.models import FAILURE, NORMAL, LabelAssignment, label_counts
from labeling.utils import documented_fault_types, save_labels
from metrics.engine import confusion, score
from splits.engine import leakage_audit, split_by_bearing, split_random
from splits.models import PARTITIONS, STRATEGY_CHOICES, TEST, TRAIN, VAL, SplitAssignment
from splits.utils import load_bearing_table, save_split
from synthgen.engine import materialize, parse_dataset_spec
from synthgen.models import GroundTruth

from .models import CellResult, EvaluationReport, ExperimentConfig, LabelingConfig, PairedReport, SplitConfig
from .utils import ProvenanceLedger, save_report

logger = logging.getLogger('runner')


def _by_bearing(samples: Sequence[FeatureSample]) -> Dict[str, List[FeatureSample]]:
    grouped: Dict[str, List[FeatureSample]] = {}
    for sample in samples:
        grouped.setdefault(sample.bearing_id, []).append(sample)
    return grouped


def _sorted_counts(counts) -> Dict[str, int]:
    return {label: int(counts[label]) for label in sorted(counts, key=natural_key)}


class PreparedData:
    """
    Dataset, ground truth and per-family features shared by runs that only
    differ in labels, split or models.

    Features are extracted once per family and written under
    ``<root>/features``; an extraction failure is kept and re-raised for
    every cell of that family.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        root: Path,
        window: WindowSpec,
        stft_sub_len: Optional[int] = None,
        stft_sub_overlap: Optional[float] = None,
        truths: Optional[Dict[str, GroundTruth]] = None,
    ):
        self.manifest = manifest
        self.root = Path(root)
        self.window = window
        self.stft_sub_len = stft_sub_len
        self.stft_sub_overlap = stft_sub_overlap
        self.truths = truths or {}
        self._records: Optional[List[WaveformRecord]] = None
        self._features: Dict[str, List[FeatureSample]] = {}
        self._errors: Dict[str, BenchmarkError] = {}
        self._lock = threading.Lock()

    def records(self) -> List[WaveformRecord]:
        with self._lock:
            if self._records is None:
                self._records = load_records(self.manifest)
            return self._records

    def features_for(self, family: str) -> List[FeatureSample]:
        with self._lock:
            if family in self._errors:
                raise self._errors[family]
            if family not in self._features:
                try:
                    samples = extract(self.manifest, family, self.window,
                                      self.stft_sub_len, self.stft_sub_overlap)
                    save_features(samples, self.root / 'features' / f'{family}.csv', self.window,
                                  self.stft_sub_len, self.stft_sub_overlap)
                except BenchmarkError as exc:
                    logger.error(f"❌ {family} feature extraction failed: {exc}")
                    self._errors[family] = exc
                    raise
                self._features[family] = samples
            return self._features[family]


def prepare_data(cfg: ExperimentConfig, root=None) -> PreparedData:
    """Materialize, load or scan the configured dataset, resampling it when asked."""
    root = Path(root or cfg.output_dir)
    source = cfg.dataset
    truths: Dict[str, GroundTruth] = {}

    if source.kind == 'synth':
        spec = parse_dataset_spec(source.synth)
        dataset_root = root / 'dataset'
        if dataset_root.exists():
            shutil.rmtree(dataset_root)
        truths = materialize(spec, dataset_root)
        manifest = scan_dataset(dataset_root, 'femto_like', dataset_id=spec.dataset_id,
                                sampling_rate_hz=spec.bearings[0].config.sampling_rate_hz)
        save_manifest(manifest, dataset_root / MANIFEST_FILE)
    elif source.kind == 'manifest':
        manifest = load_manifest(source.manifest)
    else:
        manifest = scan_dataset(source.root, source.layout, sampling_rate_hz=source.sampling_rate_hz)

    if source.resample_hz:
        manifest = resample_dataset(manifest, source.resample_hz, root / 'resampled')
    if not manifest.records:
        raise DatasetIOError(f"dataset {manifest.dataset_id} has no recordings")
    return PreparedData(manifest, root, cfg.window, cfg.stft_sub_len, cfg.stft_sub_overlap, truths)


class ExperimentEngine:
    """
    Runs one experiment: label, split, then fit and score every
    (model, family) cell on the shared features.

    Every stage writes its artifact under the output directory. A failing
    cell is recorded as an error and never stops its siblings; a failure in a
    shared stage (labels, split) is recorded against every cell.
    """

    def __init__(self, config: ExperimentConfig, output_dir=None, prepared: Optional[PreparedData] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir)
        self.prepared = prepared
        self.ledger = ProvenanceLedger()
        self.warnings: List[str] = []
        self.bench = settings.BENCHMARK_CONFIG

    def execute(self) -> EvaluationReport:
        cfg = self.config
        logger.info(
            f"🎬 Starting experiment: {cfg.name} ({cfg.task}, {cfg.split.strategy} split, "
            f"{len(cfg.models)} models x {len(cfg.families)} families)"
        )
        started = time.perf_counter()
        if self.prepared is None:
            self.prepared = prepare_data(cfg, self.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        write_json(self.output_dir / 'config.json', {**cfg.to_dict(), 'config_hash': cfg.config_hash})

        if not cfg.models:
            self._warn("no model specs configured; the results grid is empty")

        families = list(cfg.families)
        if cfg.labeling.method == 'pca_kmeans' and cfg.labeling.family not in families:
            families.append(cfg.labeling.family)
        for family in families:
            try:
                self.prepared.features_for(family)
            except BenchmarkError:
                pass

        label_summary: Dict = {}
        sample_counts: Dict[str, Dict[str, int]] = {}
        audit: Dict = {}
        try:
            labels, label_summary = self._label()
            split, sample_counts, audit = self._split(labels)
        except ConfigurationError:
            raise
        except BenchmarkError as exc:
            logger.error(f"❌ Experiment {cfg.name}: shared stage failed: {exc}", exc_info=True)
            error = f"{type(exc).__name__}: {exc}"
            self._warn(f"labels or split could not be built, every cell failed: {error}")
            cells = [CellResult(model=spec.kind, family=family, error=error)
                     for spec in cfg.models for family in cfg.families]
        else:
            cells = self._run_cells(labels, split)

        for note in self.ledger.assert_no_test_contamination():
            self._warn(note)

        report = EvaluationReport(
            name=cfg.name,
            dataset_id=self.prepared.manifest.dataset_id,
            task=cfg.task,
            split_strategy=cfg.split.strategy,
            labeling=cfg.labeling.name,
            report_mode=cfg.report_mode,
            config_hash=cfg.config_hash,
            code_version=self.bench['CODE_VERSION'],
            seed=cfg.seed,
            models=tuple(spec.kind for spec in cfg.models),
            families=tuple(cfg.families),
            cells=tuple(cells),
            sample_counts=sample_counts,
            label_summary=label_summary,
            audit=audit,
            provenance=tuple(self.ledger.to_list()),
            warnings=tuple(self.warnings),
        )
        save_report(report, self.output_dir)
        failed = len(report.failed_cells)
        logger.info(
            f"✅ Experiment {cfg.name} completed in {time.perf_counter() - started:.2f}s: "
            f"{len(cells) - failed}/{len(cells)} cells succeeded"
        )
        return report

    def _warn(self, message: str):
        logger.warning(f"⚠️ {self.config.name}: {message}")
        self.warnings.append(message)

    def _reference_samples(self) -> List[FeatureSample]:
        """Samples of the first family that extracted; the split is built on them."""
        first_error = None
        for family in self.config.families:
            try:
                return self.prepared.features_for(family)
            except BenchmarkError as exc:
                first_error = first_error or exc
        raise first_error

    # ==================== Labels ====================

    def _raw_labels(self) -> Dict[str, LabelAssignment]:
        cfg = self.config
        labeling = cfg.labeling
        if labeling.method == 'declared':
            return declared_labels(self.prepared.manifest.records)
        if labeling.method == 'threshold':
            grouped = group_by_bearing(self.prepared.records())
            return {bearing: threshold_label(records, labeling.threshold_g) for bearing, records in grouped.items()}

        grouped = _by_bearing(self.prepared.features_for(labeling.family))
        seed = Seeding.child_seed(cfg.seed, Seeding.stage_key('labeling'))
        bearings = list(grouped)
        assignments = thread_map(
            lambda bearing: pca_kmeans_label(
                grouped[bearing], labeling.clusters, labeling.components, seed,
                labeling.enrichment_threshold, labeling.force_final_cluster,
            ),
            bearings,
        )
        return dict(zip(bearings, assignments))

    def _fault_labels(self) -> Dict[str, str]:
        """Documented fault class per run-to-failure bearing."""
        if self.config.labeling.fault_types:
            return documented_fault_types(self.config.labeling.fault_types)
        if self.prepared.truths:
            return {bearing: truth.fault_label for bearing, truth in self.prepared.truths.items()}
        return {e.bearing_id: e.fault_label for e in self.prepared.manifest.records if e.fault_label}

    def _label(self) -> Tuple[Dict[str, LabelAssignment], Dict]:
        cfg = self.config
        raw = self._raw_labels()
        binary = {bearing: binarize(a) for bearing, a in raw.items()}

        multiclass = None
        if cfg.labeling.method == 'declared':
            multiclass = raw
        elif cfg.task == 'multiclass':
            fault_labels = self._fault_labels()
            missing = [b for b in raw if b not in fault_labels]
            if missing:
                raise ConfigurationError(
                    f"no documented fault type for bearings {', '.join(missing)}; set labeling.fault_types"
                )
            multiclass = {b: assign_fault_type(a, fault_labels[b]) for b, a in raw.items()}

        labels = binary if cfg.task == 'binary' else multiclass
        save_labels(labels, self.output_dir / 'labels.csv')

        samples = self._reference_samples()
        binary_counts = label_counts(binary, samples)
        summary = {'method': cfg.labeling.name, 'binary_counts': _sorted_counts(binary_counts)}
        if multiclass is not None:
            multiclass_counts = label_counts(multiclass, samples)
            faulty = sum(n for label, n in multiclass_counts.items() if label != NORMAL)
            summary['multiclass_counts'] = _sorted_counts(multiclass_counts)
            summary['discrepancy'] = int(binary_counts[FAILURE] - faulty)
        if cfg.labeling.method != 'declared':
            summary['onsets'] = {
                bearing: raw[bearing].onset_seq_index for bearing in sorted(raw, key=natural_key)
            }
            missed = [b for b, onset in summary['onsets'].items() if onset is None]
            if missed:
                self._warn(f"{cfg.labeling.name} found no failure on bearings {', '.join(missed)}")

        classes = set(label_counts(labels, samples))
        if len(classes) < 2:
            self._warn(f"labels form a single class {sorted(classes)}")
        logger.info(f"🏷️ Labeled {len(labels)} bearings with {cfg.labeling.name}: {summary.get('binary_counts')}")
        return labels, summary

    # ==================== Split ====================

    def _split(self, labels: Dict[str, LabelAssignment]) -> Tuple[SplitAssignment, Dict, Dict]:
        cfg = self.config
        samples = self._reference_samples()
        if cfg.split.strategy == 'by_bearing':
            table = cfg.split.table
            if isinstance(table, dict):
                table = {k: v for k, v in table.items() if k != 'description'}
            else:
                table = load_bearing_table(table)
            split = split_by_bearing(samples, table)
        else:
            seed = Seeding.child_seed(cfg.seed, Seeding.stage_key('split'))
            split = split_random(samples, cfg.split.fractions, seed=seed)
        save_split(split, self.output_dir / 'split.csv')

        sample_counts = {}
        for partition in PARTITIONS:
            selected = split.select(samples, partition)
            if not selected:
                self._warn(f"{partition} partition is empty")
            sample_counts[partition] = _sorted_counts(label_counts(labels, selected))

        audit = leakage_audit(split, samples)
        if not audit.leak_free:
            self._warn(
                f"{len(audit.leaking_bearings)} of {audit.n_bearings} bearings span several partitions; "
                "scores may be inflated by bearing leakage"
            )
        if cfg.labeling.method == 'pca_kmeans':
            for bearing, bearing_samples in _by_bearing(samples).items():
                self.ledger.record(f'labeler:{bearing}', 'labeler', self._partitions(split, bearing_samples))
        return split, sample_counts, audit.to_dict()

    @staticmethod
    def _partitions(split: SplitAssignment, samples: Sequence[FeatureSample]) -> Set[str]:
        return {split.partition_of(s) for s in samples}

    # ==================== Cells ====================

    def _run_cells(self, labels: Dict[str, LabelAssignment], split: SplitAssignment) -> List[CellResult]:
        grid = [(spec, family) for spec in self.config.models for family in self.config.families]
        items = [(index, spec, family) for index, (spec, family) in enumerate(grid)]
        outcomes = thread_map(lambda item: self._run_cell(*item, labels, split), items)
        # ordered merge keeps the ledger independent of scheduling
        for _, provenance in outcomes:
            for statistic, kind, partitions in provenance:
                self.ledger.record(statistic, kind, partitions)
        return [result for result, _ in outcomes]

    def _run_cell(
        self,
        index: int,
        spec: ModelSpec,
        family: str,
        labels: Dict[str, LabelAssignment],
        split: SplitAssignment,
    ) -> Tuple[CellResult, List[tuple]]:
        name = f'{index:02d}_{spec.kind}_{family}'
        cell_dir = self.output_dir / 'cells' / name
        provenance: List[tuple] = []
        n_train = n_test = 0
        try:
            samples = self.prepared.features_for(family)
            train = split.select(samples, TRAIN)
            val = split.select(samples, VAL)
            test = split.select(samples, TEST)
            n_train, n_test = len(train), len(test)
            if not train:
                raise SplitError("train partition is empty")
            if not test:
                raise SplitError("test partition is empty")

            X, y = design_matrix(train, labels)
            X_test, y_test = design_matrix(test, labels)
            X_val = y_val = None
            if spec.kind == 'mlp' and val:
                X_val, y_val = design_matrix(val, labels)

            model = fit(spec, X, y, X_val, y_val)
            seen = self._partitions(split, train)
            provenance.append((f'{name}:standardizer', 'standardizer', seen))
            provenance.append((f'{name}:model', 'model', seen))
            if X_val is not None:
                provenance.append((f'{name}:early_stopping', 'early_stopping', seen | self._partitions(split, val)))

            predicted = predict(model, X_test)
            if self.config.task == 'binary':
                classes = sorted({FAILURE, NORMAL})
                mode = 'binary'
            else:
                classes = sorted(set(y) | set(y_test) | set(predicted), key=natural_key)
                mode = 'macro'
            cm = confusion(y_test, predicted, classes)
            metrics = score(cm, mode)
            save_model(model, cell_dir / 'model.json')
            result = CellResult(
                model=spec.kind, family=family, metrics=metrics, confusion=cm,
                fit_info=model.fit_info, n_train=n_train, n_test=n_test,
            )
            logger.info(f"🧪 {spec.kind}/{family}: acc {metrics.accuracy:.3f}, F_mac {metrics.f_macro:.3f}")
        except Exception as exc:
            logger.error(f"❌ Cell {spec.kind}/{family} failed: {exc}", exc_info=True)
            result = CellResult(
                model=spec.kind, family=family, error=f'{type(exc).__name__}: {exc}',
                n_train=n_train, n_test=n_test,
            )
        write_json(cell_dir / 'metrics.json', result.to_dict())
        return result, provenance


def run_experiment(cfg: ExperimentConfig) -> EvaluationReport:
    return ExperimentEngine(cfg).execute()


# ==================== Comparisons ====================

def _deltas(left: EvaluationReport, right: EvaluationReport, flag: bool) -> List[dict]:
    """Right minus left F_mac per cell; both sides share the configured cell order."""
    threshold = settings.BENCHMARK_CONFIG['LEAKAGE_FLAG_DELTA']
    deltas = []
    for a, b in zip(left.cells, right.cells):
        entry = {
            'model': a.model,
            'family': a.family,
            'left_f_mac': a.metrics.f_macro if a.ok else None,
            'right_f_mac': b.metrics.f_macro if b.ok else None,
            'delta': None,
            'flagged': False,
            'error': a.error or b.error,
        }
        if a.ok and b.ok:
            entry['delta'] = entry['right_f_mac'] - entry['left_f_mac']
            entry['flagged'] = flag and entry['delta'] > threshold
        deltas.append(entry)
    return deltas


def compare_splits(cfg: ExperimentConfig, strategies: Sequence[str] = ('by_bearing', 'random')) -> PairedReport:
    """
    The same pipeline under a bearing-wise and a random split, on the same
    features and seed. Cells where the random split scores higher are flagged.
    """
    if sorted(strategies) != sorted(STRATEGY_CHOICES):
        raise ConfigurationError(f"compare-splits needs both strategies {STRATEGY_CHOICES}, got {list(strategies)}")
    if not cfg.split.table:
        raise ConfigurationError("comparing splits needs a bearing table in the split config")

    logger.info(f"🎬 Comparing splits for {cfg.name}")
    prepared = prepare_data(cfg, cfg.output_dir)
    reports = []
    for strategy in STRATEGY_CHOICES:
        variant = cfg.with_split(SplitConfig(strategy, cfg.split.table, cfg.split.fractions))
        reports.append(ExperimentEngine(variant, cfg.output_dir / strategy, prepared).execute())
    bearing, random = reports

    deltas = _deltas(bearing, random, flag=True)
    flagged = sum(1 for d in deltas if d['flagged'])
    compared = sum(1 for d in deltas if d['delta'] is not None)
    notes = [f"{flagged} of {compared} cells score a higher F_mac under the random split"]
    paired = PairedReport(
        comparison='splits',
        left_name='by_bearing',
        right_name='random',
        left=bearing,
        right=random,
        deltas=tuple(deltas),
        notes=tuple(notes),
    )
    save_report(paired, cfg.output_dir)
    return paired


def _dir_name(labeling: LabelingConfig) -> str:
    return labeling.name.replace('(', '_').replace(')', '')


def compare_labelers(cfg: ExperimentConfig, methods: Optional[Sequence[LabelingConfig]] = None) -> PairedReport:
    """
    The same pipeline labeled by two run-to-failure labelers, by default the
    threshold labeler and PCA/k-means.

    Onsets per bearing are reported side by side (with the synthetic ground
    truth when known); bearings a labeler finds no failure on are noted.
    """
    base = cfg.labeling
    if methods is None:
        threshold_g = base.threshold_g if base.threshold_g is not None else settings.BENCHMARK_CONFIG['THRESHOLD_G']
        methods = (
            LabelingConfig('threshold', threshold_g=threshold_g, family=base.family, fault_types=base.fault_types),
            LabelingConfig(
                'pca_kmeans', clusters=base.clusters, components=base.components,
                enrichment_threshold=base.enrichment_threshold, force_final_cluster=base.force_final_cluster,
                family=base.family, fault_types=base.fault_types,
            ),
        )
    methods = tuple(methods)
    if len(methods) != 2 or any(m.method == 'declared' for m in methods):
        raise ConfigurationError("compare-labelers takes two run-to-failure labelers (threshold or pca_kmeans)")
    if methods[0].name == methods[1].name:
        raise ConfigurationError(f"both labelers are {methods[0].name}")

    logger.info(f"🎬 Comparing labelers {methods[0].name} and {methods[1].name} for {cfg.name}")
    prepared = prepare_data(cfg, cfg.output_dir)
    if prepared.manifest.declares_faults:
        raise ConfigurationError(
            f"{prepared.manifest.dataset_id} declares its fault labels; labelers apply to run-to-failure data"
        )

    reports = [
        ExperimentEngine(cfg.with_labeling(method), cfg.output_dir / _dir_name(method), prepared).execute()
        for method in methods
    ]
    left, right = reports

    onsets = {}
    for bearing in sorted(prepared.manifest.bearing_ids(), key=natural_key):
        row = {m.name: r.label_summary.get('onsets', {}).get(bearing) for m, r in zip(methods, reports)}
        if bearing in prepared.truths:
            row['truth'] = prepared.truths[bearing].onset_index
        onsets[bearing] = row

    notes = ["Labels differ between the methods, so the test sets differ and the scores are not comparable."]
    for method in methods:
        missed = [bearing for bearing, row in onsets.items() if row[method.name] is None]
        if missed:
            notes.append(
                f"{method.name} found no failure on {len(missed)} of {len(onsets)} bearings: {', '.join(missed)}"
            )

    paired = PairedReport(
        comparison='labelers',
        left_name=methods[0].name,
        right_name=methods[1].name,
        left=left,
        right=right,
        deltas=tuple(_deltas(left, right, flag=False)),
        notes=tuple(notes),
        details={'onsets': onsets},
    )
    save_report(paired, cfg.output_dir)
    return paired
