import dataclasses
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.exceptions import ConfigurationError, ContaminationError
from core.utils import read_json, write_json
from metrics.engine import confusion, score

from .engine import compare_labelers, compare_splits, run_experiment
from .models import CellResult, EvaluationReport
from .serializers import build_experiment_config, load_experiment_config
from .utils import ProvenanceLedger, load_report, render_report

EXPERIMENTS = Path(__file__).resolve().parent / 'experiments'

FAULTS = [('outer_race', 90.0), ('inner_race', 140.0), ('ball', 110.0)]

GRID = [
    'gaussian_nb',
    'logistic_regression',
    'svm_rbf',
    {'kind': 'random_forest', 'hyperparams': {'n_trees': 30}},
    {'kind': 'mlp', 'hyperparams': {'hidden': [64, 32], 'batch_size': 32, 'max_epochs': 60}},
]


def base_config(**overrides):
    params = dict(
        shaft_hz=25.0, sampling_rate_hz=25600.0, fault_type='outer_race', fault_char_freq_hz=90.0,
        impulse_snr_db=20.0, noise_sigma_g=0.25, n_waveforms=8, waveform_len=2048, seed=0,
    )
    params.update(overrides)
    return params


def separable_dataset():
    """Three fault classes with distinct resonances; groups 1/2/3 hold one bearing per class."""
    bearings = [
        {'bearing_id': f'{group}_{unit}', 'overrides': {'fault_type': fault, 'fault_char_freq_hz': rate}}
        for group in (1, 2, 3)
        for unit, (fault, rate) in enumerate(FAULTS, start=1)
    ]
    return {'dataset_id': 'synthetic-separable', 'kind': 'injected', 'base': base_config(), 'bearings': bearings}


def overlapping_dataset():
    """A healthy bearing and four fault types sharing one resonance and impulse rate."""
    faults = ['none', 'outer_race', 'inner_race', 'ball', 'cage']
    bearings = [
        {'bearing_id': f'1_{unit}', 'overrides': {'fault_type': fault}}
        for unit, fault in enumerate(faults, start=1)
    ]
    base = base_config(carrier_hz=2600.0, fault_char_freq_hz=100.0, impulse_snr_db=10.0)
    return {'dataset_id': 'synthetic-overlap', 'kind': 'injected', 'base': base, 'bearings': bearings}


def run_to_failure_dataset(end_amplitude_g, **overrides):
    base = base_config(
        noise_sigma_g=0.5, impulse_snr_db=28.0, n_waveforms=100, waveform_len=2560, seed=0,
        degradation={'onset_fraction': 0.8, 'end_amplitude_g': end_amplitude_g},
    )
    base.update(overrides)
    return {'dataset_id': 'synthetic-r2f', 'kind': 'run_to_failure', 'base': base,
            'bearings': [{'bearing_id': '1_1'}]}


def experiment(out, dataset, **overrides):
    document = {
        'schema_version': 1,
        'name': 'synthetic',
        'seed': 5,
        'dataset': {'synth': dataset},
        'labeling': {'method': 'declared'},
        'task': 'multiclass',
        'window': {'length': 512, 'overlap': 0.0},
        'families': ['RFFT'],
        'split': {'strategy': 'by_bearing', 'table': {'train': ['1_*'], 'val': ['2_*'], 'test': ['3_*']}},
        'models': ['gaussian_nb'],
        'output_dir': str(out),
    }
    document.update(overrides)
    return build_experiment_config(document)


class TempDirMixin:

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)


class RunExperimentTests(TempDirMixin, SimpleTestCase):

    def test_separable_classes_single_cell(self):
        out = self.root / 'nb'
        report = run_experiment(experiment(out, separable_dataset()))
        self.assertEqual(len(report.cells), 1)
        cell = report.cells[0]
        self.assertTrue(cell.ok, cell.error)
        self.assertGreaterEqual(cell.metrics.f_macro, 0.95)
        self.assertEqual(cell.confusion.classes, ('BALL', 'IR', 'OR'))
        self.assertTrue(report.audit['leak_free'])
        self.assertEqual(report.sample_counts['test'], {'BALL': 32, 'IR': 32, 'OR': 32})
        for artifact in ('labels.csv', 'split.csv', 'features/RFFT.csv', 'dataset/manifest.json',
                         'cells/00_gaussian_nb_RFFT/model.json', 'cells/00_gaussian_nb_RFFT/metrics.json',
                         'report.json', 'report.md', 'report.csv', 'config.json'):
            self.assertTrue((out / artifact).exists(), artifact)

    def test_every_model_recovers_separable_classes(self):
        report = run_experiment(experiment(self.root / 'grid', separable_dataset(), models=GRID))
        self.assertEqual(len(report.cells), 5)
        for cell in report.cells:
            self.assertTrue(cell.ok, cell.error)
            self.assertGreaterEqual(cell.metrics.f_macro, 0.95, cell.model)

    def test_zero_models_give_empty_grid_with_warning(self):
        with self.assertLogs('runner', level='WARNING'):
            report = run_experiment(experiment(self.root / 'empty', separable_dataset(), models=[]))
        self.assertEqual(report.cells, ())
        self.assertTrue(any('no model specs' in w for w in report.warnings))
        self.assertIn('No model cells were configured.', render_report(report, 'markdown'))

    def test_identical_configs_write_identical_reports(self):
        models = ['gaussian_nb', {'kind': 'random_forest', 'hyperparams': {'n_trees': 10}}]
        first = run_experiment(experiment(self.root / 'a', separable_dataset(), models=models))
        second = run_experiment(experiment(self.root / 'b', separable_dataset(), models=models))
        self.assertEqual(first.config_hash, second.config_hash)
        for name in ('report.json', 'report.md', 'report.csv'):
            self.assertEqual((self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes(), name)

    def test_provenance_of_fitted_statistics(self):
        mlp = {'kind': 'mlp', 'hyperparams': {'hidden': [16], 'batch_size': 32, 'max_epochs': 10}}
        report = run_experiment(experiment(self.root / 'mlp', separable_dataset(), models=['gaussian_nb', mlp]))
        provenance = {entry['statistic']: entry for entry in report.provenance}
        self.assertEqual(provenance['00_gaussian_nb_RFFT:standardizer']['partitions'], ['train'])
        self.assertEqual(provenance['00_gaussian_nb_RFFT:model']['partitions'], ['train'])
        self.assertNotIn('00_gaussian_nb_RFFT:early_stopping', provenance)
        self.assertEqual(provenance['01_mlp_RFFT:early_stopping']['partitions'], ['train', 'val'])

    def test_failed_cells_are_recorded_and_siblings_still_run(self):
        table = {'train': ['1_*'], 'val': ['2_*', '3_*']}
        with self.assertLogs('runner', level='ERROR'):
            report = run_experiment(experiment(
                self.root / 'no-test', separable_dataset(), models=['gaussian_nb', 'dummy_stratified'],
                split={'strategy': 'by_bearing', 'table': table},
            ))
        self.assertEqual(len(report.failed_cells), 2)
        self.assertTrue(all(c.error == 'SplitError: test partition is empty' for c in report.cells))
        self.assertIn('ERR(SplitError: test partition is empty)', (self.root / 'no-test' / 'report.md').read_text())

    def test_binary_is_easier_than_multiclass(self):
        kinds = ['gaussian_nb', 'logistic_regression', 'svm_rbf', 'random_forest', 'mlp']
        binary = {kind: [] for kind in kinds}
        multiclass = {kind: [] for kind in kinds}
        for seed in range(5):
            for task, scores in (('binary', binary), ('multiclass', multiclass)):
                report = run_experiment(experiment(
                    self.root / f'{task}-{seed}', overlapping_dataset(), seed=seed, task=task, models=GRID,
                    split={'strategy': 'random', 'fractions': [0.6, 0.2, 0.2]},
                ))
                for cell in report.cells:
                    self.assertTrue(cell.ok, cell.error)
                    scores[cell.model].append(cell.metrics.f)
        for kind in kinds:
            self.assertGreater(np.mean(binary[kind]), np.mean(multiclass[kind]), kind)


class CompareSplitsTests(TempDirMixin, SimpleTestCase):

    def test_bearing_fingerprints_inflate_random_split(self):
        cfg = load_experiment_config(EXPERIMENTS / 'synthetic_leakage.json')
        cfg = dataclasses.replace(cfg, output_dir=self.root / 'leakage')
        paired = compare_splits(cfg)
        self.assertEqual((paired.left_name, paired.right_name), ('by_bearing', 'random'))
        self.assertTrue(paired.left.audit['leak_free'])
        self.assertFalse(paired.right.audit['leak_free'])
        self.assertEqual(len(paired.deltas), 2)
        for delta in paired.deltas:
            self.assertGreaterEqual(delta['delta'], 0.10, delta['model'])
            self.assertTrue(delta['flagged'])
        self.assertTrue((self.root / 'leakage' / 'by_bearing' / 'report.json').exists())
        self.assertEqual(load_report(self.root / 'leakage' / 'report.json').comparison, 'splits')
        self.assertIn('inflated', (self.root / 'leakage' / 'report.md').read_text())

    def test_leakage_tones_belong_to_one_bearing(self):
        dataset = read_json(EXPERIMENTS / 'synthetic_leakage.json')['dataset']['synth']
        owners = {}
        for bearing in dataset['bearings']:
            params = {**dataset['base'], **bearing.get('overrides', {})}
            tones = {bearing['nuisance']['freq_hz']}
            if params['shaft_amplitude_g'] > 0:
                tones.add(params['shaft_hz'])
            for tone in tones:
                self.assertNotIn(tone, owners, f"{bearing['bearing_id']} shares {tone} Hz with {owners.get(tone)}")
                owners[tone] = bearing['bearing_id']

    def test_without_fingerprints_splits_agree(self):
        models = ['gaussian_nb', 'logistic_regression']
        paired = compare_splits(experiment(self.root / 'clean', separable_dataset(), models=models))
        self.assertTrue(paired.left.audit['leak_free'])
        self.assertEqual(len(paired.deltas), 2)
        for delta in paired.deltas:
            self.assertLessEqual(abs(delta['delta']), 0.05, delta['model'])

    def test_needs_bearing_table(self):
        cfg = experiment(self.root / 'x', separable_dataset(), split={'strategy': 'random'})
        with self.assertRaises(ConfigurationError):
            compare_splits(cfg)


class CompareLabelersTests(TempDirMixin, SimpleTestCase):

    def labelers(self, dataset, out):
        cfg = experiment(
            self.root / out, dataset, task='binary',
            labeling={'method': 'threshold', 'threshold_g': 10},
            window={'length': 2048, 'overlap': 0.25},
            split={'strategy': 'random'},
        )
        return compare_labelers(cfg)

    def test_onsets_agree_on_strong_failure(self):
        paired = self.labelers(run_to_failure_dataset(30.0), 'strong')
        onsets = paired.details['onsets']['1_1']
        self.assertEqual(onsets['truth'], 80)
        self.assertLessEqual(abs(onsets['threshold(10g)'] - 80), 5)
        self.assertLessEqual(abs(onsets['pca_kmeans'] - 80), 5)
        self.assertIn('not comparable', paired.notes[0])
        self.assertEqual(len(paired.notes), 1)
        markdown = render_report(paired, 'markdown')
        self.assertIn('## Onsets', markdown)
        self.assertIn('Ground truth', markdown)

    def test_threshold_miss_is_flagged(self):
        dataset = run_to_failure_dataset(8.0, noise_sigma_g=0.2, impulse_snr_db=20.0, shaft_amplitude_g=0.2)
        paired = self.labelers(dataset, 'weak')
        onsets = paired.details['onsets']['1_1']
        self.assertIsNone(onsets['threshold(10g)'])
        self.assertIsNotNone(onsets['pca_kmeans'])
        self.assertTrue(any(n.startswith('threshold(10g) found no failure') for n in paired.notes))

    def test_declared_datasets_are_rejected(self):
        cfg = experiment(self.root / 'declared', separable_dataset())
        with self.assertRaises(ConfigurationError):
            compare_labelers(cfg)


def scored_cell(model, family, y_true, y_pred):
    classes = sorted(set(y_true) | set(y_pred))
    cm = confusion(y_true, y_pred, classes)
    return CellResult(model=model, family=family, metrics=score(cm, 'macro'), confusion=cm,
                      n_train=10, n_test=len(y_true))


def grid_report(cells, task='multiclass'):
    return EvaluationReport(
        name='grid', dataset_id='synthetic', task=task, split_strategy='by_bearing', labeling='declared',
        report_mode='positive', config_hash='0' * 64, code_version='1.0.0', seed=0,
        models=tuple(dict.fromkeys(c.model for c in cells)), families=('TIME', 'RFFT', 'STFT'),
        cells=tuple(cells),
    )


class RenderReportTests(SimpleTestCase):

    def grid(self):
        kinds = ['dummy_stratified', 'gaussian_nb', 'logistic_regression', 'svm_rbf', 'random_forest']
        cells = []
        for i, kind in enumerate(kinds):
            for j, family in enumerate(('TIME', 'RFFT', 'STFT')):
                y_pred = ['a', 'b', 'a', 'b'] if (i + j) % 2 else ['a', 'b', 'b', 'b']
                cells.append(scored_cell(kind, family, ['a', 'b', 'a', 'b'], y_pred))
        return grid_report(cells)

    def data_rows(self, markdown):
        table = markdown.split('## Results')[1].split('## Samples')[0]
        return [line for line in table.splitlines()
                if line.startswith('| ') and not line.startswith('| Model') and not line.startswith('|---')]

    def test_five_models_three_families_give_fifteen_rows(self):
        rows = self.data_rows(render_report(self.grid(), 'markdown'))
        self.assertEqual(len(rows), 15)
        self.assertTrue(rows[0].startswith('| DUMMY | TIME |'))
        self.assertTrue(rows[1].startswith('|  | RFFT |'))
        self.assertIn('**1.000**', '\n'.join(rows))

    def test_failed_cell_renders_error(self):
        cells = [scored_cell('gaussian_nb', 'TIME', ['a', 'b'], ['a', 'b']),
                 CellResult(model='mlp', family='TIME', error='ModelError: boom')]
        markdown = render_report(grid_report(cells), 'markdown')
        self.assertIn('| MLP | TIME | ERR(ModelError: boom) |', markdown)
        csv = render_report(grid_report(cells), 'csv')
        self.assertEqual(csv.splitlines()[0],
                         'dataset,task,split,labeling,model,family,Acc,Prec,Rec,F,F_mac,n_test,error')
        self.assertTrue(csv.splitlines()[2].endswith('ModelError: boom'))

    def test_binary_positive_report_uses_f_column(self):
        cm = confusion(['failure', 'normal'], ['failure', 'normal'], ['failure', 'normal'])
        cell = CellResult(model='gaussian_nb', family='RFFT', metrics=score(cm, 'binary'), confusion=cm)
        markdown = render_report(grid_report([cell], task='binary'), 'markdown')
        self.assertIn('| Model | Features | Acc | F | Prec | Rec |', markdown)

    def test_unknown_format(self):
        with self.assertRaises(ConfigurationError):
            render_report(self.grid(), 'html')


class ProvenanceLedgerTests(SimpleTestCase):

    def test_test_partition_in_standardizer_is_rejected(self):
        ledger = ProvenanceLedger()
        ledger.record('nb:standardizer', 'standardizer', ['train'])
        ledger.record('nb:standardizer', 'standardizer', ['test'])
        with self.assertRaises(ContaminationError):
            ledger.assert_no_test_contamination()

    def test_early_stopping_may_see_val(self):
        ledger = ProvenanceLedger()
        ledger.record('mlp:early_stopping', 'early_stopping', ['train', 'val'])
        ledger.record('mlp:model', 'model', ['train'])
        self.assertEqual(ledger.assert_no_test_contamination(), [])

    def test_spanning_labeler_is_reported(self):
        ledger = ProvenanceLedger()
        ledger.record('labeler:1_1', 'labeler', ['train', 'test'])
        notes = ledger.assert_no_test_contamination()
        self.assertEqual(len(notes), 1)
        self.assertIn('labeler:1_1', notes[0])


class ExperimentConfigTests(TempDirMixin, SimpleTestCase):

    def document(self, **overrides):
        document = {
            'name': 'cfg', 'dataset': {'synth': separable_dataset()},
            'labeling': {'method': 'declared'}, 'task': 'multiclass', 'families': ['rfft', 'time'],
            'split': {'strategy': 'random'}, 'models': ['gaussian_nb', {'kind': 'mlp', 'seed': 9}],
            'output_dir': 'relative',
        }
        document.update(overrides)
        return document

    def test_defaults_and_seed_propagation(self):
        cfg = build_experiment_config(self.document(seed=4))
        self.assertEqual(cfg.families, ('RFFT', 'TIME'))
        self.assertEqual((cfg.window.length, cfg.window.overlap_fraction), (2048, 0.25))
        self.assertEqual(cfg.split.fractions, (0.8, 0.1, 0.1))
        self.assertEqual([m.seed for m in cfg.models], [4, 9])
        self.assertEqual(cfg.dataset.synth['seed'], 4)
        self.assertTrue(cfg.output_dir.is_absolute())

    def test_hash_ignores_output_dir(self):
        a = build_experiment_config(self.document(output_dir=str(self.root / 'a')))
        b = build_experiment_config(self.document(output_dir=str(self.root / 'b')))
        c = build_experiment_config(self.document(seed=1))
        self.assertEqual(a.config_hash, b.config_hash)
        self.assertNotEqual(a.config_hash, c.config_hash)

    def test_invalid_documents(self):
        invalid = [
            {'task': 'regression'},
            {'families': ['WAVELET']},
            {'families': ['RFFT', 'rfft']},
            {'split': {'strategy': 'by_bearing'}},
            {'split': {'strategy': 'random', 'fractions': [0.5, 0.5, 0.5]}},
            {'models': [{'kind': 'xgboost'}]},
            {'dataset': {}},
            {'dataset': {'root': str(self.root)}},
            {'dataset': {'manifest': str(self.root / 'missing.json')}},
            {'schema_version': 2},
            {'window': {'length': 512, 'overlap': 1.0}},
        ]
        for overrides in invalid:
            with self.subTest(overrides=overrides), self.assertRaises(ConfigurationError):
                build_experiment_config(self.document(**overrides))

    def test_yaml_paths_resolve_against_config_file(self):
        (self.root / 'tables').mkdir()
        write_json(self.root / 'tables' / 'mine.json', {'train': ['1_*'], 'val': ['2_*'], 'test': ['3_*']})
        path = self.root / 'exp.yaml'
        path.write_text(
            'name: yaml\n'
            'dataset:\n  root: .\n  layout: femto_like\n'
            'labeling:\n  method: threshold\n  threshold_g: 5\n'
            'task: binary\nfamilies: [TIME]\n'
            'split:\n  strategy: by_bearing\n  table: tables/mine.json\n'
            'output_dir: out\n'
        )
        cfg = load_experiment_config(path)
        self.assertEqual(cfg.dataset.root, self.root.resolve() / '.')
        self.assertEqual(cfg.split.table, str(self.root.resolve() / 'tables' / 'mine.json'))
        self.assertEqual(cfg.labeling.name, 'threshold(5g)')

    def test_shipped_synthetic_config_loads(self):
        cfg = load_experiment_config(EXPERIMENTS / 'synthetic_leakage.json')
        self.assertEqual(cfg.dataset.kind, 'synth')
        self.assertEqual([m.kind for m in cfg.models], ['gaussian_nb', 'mlp'])


class BenchCommandTests(TempDirMixin, SimpleTestCase):

    def write_config(self, **overrides):
        document = {
            'schema_version': 1, 'name': 'cmd', 'seed': 1,
            'dataset': {'synth': separable_dataset()},
            'labeling': {'method': 'declared'}, 'task': 'multiclass',
            'window': {'length': 512, 'overlap': 0.0}, 'families': ['RFFT'],
            'split': {'strategy': 'by_bearing', 'table': {'train': ['1_*'], 'val': ['2_*'], 'test': ['3_*']}},
            'models': ['gaussian_nb'], 'output_dir': str(self.root / 'out'),
        }
        document.update(overrides)
        return write_json(self.root / 'exp.json', document)

    def test_run_and_render(self):
        out = StringIO()
        call_command('bench', 'run', '--config', str(self.write_config()), stdout=out)
        self.assertIn('| NB | RFFT |', out.getvalue())
        self.assertEqual(read_json(self.root / 'out' / 'report.json')['type'], 'evaluation')

        csv = StringIO()
        call_command('bench', 'report', '--report', str(self.root / 'out' / 'report.json'),
                     '--format', 'csv', stdout=csv)
        self.assertTrue(csv.getvalue().startswith('dataset,task,split'))

    def test_config_error_exits_2(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('bench', 'run', '--config', str(self.write_config(task='ordinal')), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_partial_failure_exits_3_after_writing_report(self):
        path = self.write_config(split={'strategy': 'by_bearing', 'table': {'train': ['1_*'], 'val': ['2_*', '3_*']}})
        with self.assertRaises(CommandError) as ctx:
            call_command('bench', 'run', '--config', str(path), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertTrue((self.root / 'out' / 'report.md').exists())
