import re
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import LabelingError
from features.engine import extract
from features.models import FeatureSample, WindowSpec
from ingest.models import ManifestEntry, WaveformRecord
from synthgen.engine import generate_run_to_failure
from synthgen.models import Degradation, SynthConfig

from .engine import assign_fault_type, binarize, declared_labels, pca_kmeans_label, threshold_label
from .models import FAILURE, NORMAL, LabelAssignment, SampleLabel, label_counts
from .utils import documented_fault_types, load_labels, save_labels


def spiky_records(maxima, bearing='1_1'):
    records = []
    for seq, peak in enumerate(maxima):
        samples = np.zeros(64)
        samples[10] = -peak
        records.append(WaveformRecord(bearing, '1', seq, samples, 25600.0))
    return records


def cloud_samples(n_early=80, n_late=20, dim=5, seed=0, bearing='1_1'):
    rng = np.random.default_rng(seed)
    samples = []
    for seq in range(n_early + n_late):
        centre = 0.0 if seq < n_early else 12.0
        samples.append(FeatureSample(bearing, '1', seq, 0, 0.0, 'RFFT', centre + rng.normal(size=dim)))
    return samples


def r2f_config(seed, **overrides):
    params = dict(
        shaft_hz=25.0, sampling_rate_hz=25600.0, fault_type='outer_race', fault_char_freq_hz=90.0,
        impulse_snr_db=20.0, noise_sigma_g=0.5, n_waveforms=100, waveform_len=2560, seed=seed,
        degradation=Degradation(0.8, 'linear', 30.0),
    )
    params.update(overrides)
    return SynthConfig(**params)


class ThresholdLabelTests(SimpleTestCase):

    def test_first_exceedance(self):
        records = spiky_records([1, 2, 6, 3, 12])
        ten = threshold_label(records, 10)
        self.assertEqual(ten.onset_seq_index, 4)
        self.assertEqual([l.label for l in ten.labels], [NORMAL] * 4 + [FAILURE])
        five = threshold_label(records, 5)
        self.assertEqual(five.onset_seq_index, 2)
        self.assertEqual([l.label for l in five.labels], [NORMAL, NORMAL, FAILURE, FAILURE, FAILURE])

    def test_never_exceeded(self):
        assignment = threshold_label(spiky_records([1, 2, 3]), 10)
        self.assertIsNone(assignment.onset_seq_index)
        self.assertEqual(assignment.classes, [NORMAL])

    def test_empty_sequence(self):
        with self.assertRaises(LabelingError):
            threshold_label([], 10)

    def test_labels_are_monotone(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            assignment = threshold_label(spiky_records(rng.uniform(0, 12, size=30)), 6)
            pattern = ''.join('F' if l.label == FAILURE else 'N' for l in assignment.labels)
            self.assertRegex(pattern, r'^N*F*$')

    def test_constructed_exceedance_exact(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            crossing = int(rng.integers(1, 99))
            maxima = np.where(np.arange(100) < crossing, rng.uniform(0, 9.9, 100), rng.uniform(10.1, 30, 100))
            self.assertEqual(threshold_label(spiky_records(maxima), 10).onset_seq_index, crossing)

    def test_window_level_expansion(self):
        records = spiky_records([0.5, 20.0])
        samples = [FeatureSample('1_1', '1', seq, w, 0.0, 'TIME', np.zeros(12)) for seq in (0, 1) for w in (0, 1, 2)]
        labels = threshold_label(records, 10).expand(samples)
        self.assertEqual(labels, [NORMAL] * 3 + [FAILURE] * 3)


class PcaKmeansLabelTests(SimpleTestCase):

    def test_separated_clouds(self):
        samples = cloud_samples()
        assignment = pca_kmeans_label(samples, seed=3)
        late = [s.waveform_seq_index >= 80 for s in samples]
        self.assertEqual([l.label == FAILURE for l in assignment.labels], late)
        self.assertEqual(assignment.onset_seq_index, 80)

    def test_labels_do_not_depend_on_seed_for_clear_structure(self):
        samples = cloud_samples(seed=4)
        first = [l.label for l in pca_kmeans_label(samples, seed=1).labels]
        second = [l.label for l in pca_kmeans_label(samples, seed=99).labels]
        self.assertEqual(first, second)

    def test_deterministic_given_seed(self):
        samples = cloud_samples(n_early=50, n_late=50, seed=5)
        self.assertEqual(pca_kmeans_label(samples, seed=7), pca_kmeans_label(samples, seed=7))

    def test_stationary_sequence_final_cluster_forcing(self):
        rng = np.random.default_rng(6)
        samples = [FeatureSample('1_1', '1', seq, 0, 0.0, 'RFFT', rng.normal(size=6)) for seq in range(100)]
        forced = pca_kmeans_label(samples, seed=0)
        self.assertEqual(len(forced.params['failure_clusters']), 1)
        self.assertEqual(forced.labels[-1].label, FAILURE)

        free = pca_kmeans_label(samples, seed=0, force_final_cluster=False)
        self.assertEqual(free.params['failure_clusters'], [])
        self.assertIsNone(free.onset_seq_index)

    def test_too_few_samples(self):
        with self.assertRaises(LabelingError):
            pca_kmeans_label(cloud_samples(n_early=2, n_late=1), n_clusters=4)

    def test_zero_variance_columns_dropped(self):
        samples = [
            FeatureSample(s.bearing_id, s.condition_id, s.waveform_seq_index, 0, 0.0, 'RFFT',
                          np.concatenate([s.values, [1.0, 0.0]]))
            for s in cloud_samples()
        ]
        with self.assertLogs('labeling', level='WARNING'):
            assignment = pca_kmeans_label(samples, seed=0)
        self.assertEqual(assignment.params['dropped_columns'], 2)
        self.assertEqual(assignment.onset_seq_index, 80)

    def test_onset_recovery_on_synthetic_runs(self):
        spec = WindowSpec(2048, 0.25)
        within = 0
        for seed in range(20):
            records, truth = generate_run_to_failure(r2f_config(seed))
            self.assertEqual(truth.onset_index, 80)
            samples = extract(records, 'RFFT', spec)
            detected = pca_kmeans_label(samples, seed=seed).onset_seq_index
            if detected is not None and abs(detected - truth.onset_index) <= 5:
                within += 1
        self.assertGreaterEqual(within, 18)


class DeclaredLabelTests(SimpleTestCase):

    @staticmethod
    def entries(labels_by_bearing):
        return [
            ManifestEntry(Path(f'{b}.csv'), b, '0', 0, 12000.0, label)
            for b, label in labels_by_bearing.items()
        ]

    def test_cwru_classes(self):
        assignments = declared_labels(self.entries({
            '12k_Drive/OR/007': 'OR/0.007', '12k_Drive/IR/014': 'IR/0.014',
            '12k_Drive/B/021': 'BALL/0.021', 'Normal/0': 'Normal',
        }))
        classes = {l.label for a in assignments.values() for l in a.labels}
        self.assertEqual(classes, {'OR', 'IR', 'BALL', NORMAL})

    def test_xjtu_multiclass_set(self):
        documented = documented_fault_types('xjtu')
        entries = self.entries({**documented, '9_9': 'normal'})
        classes = {l.label for a in declared_labels(entries).values() for l in a.labels}
        self.assertEqual(classes, {'OR', 'IR', 'CAGE', 'IR and OR', 'COBI', NORMAL})

    def test_all_normal_warns(self):
        with self.assertLogs('labeling', level='WARNING'):
            declared_labels(self.entries({'Normal/0': 'Normal', 'Normal/1': 'Normal'}))

    def test_missing_label(self):
        with self.assertRaisesRegex(LabelingError, re.escape('12k_Fan/IR/007#0')):
            declared_labels(self.entries({'Normal/0': 'Normal', '12k_Fan/IR/007': None}))


class BinarizeTests(SimpleTestCase):

    def test_definition_and_idempotence(self):
        assignment = LabelAssignment('x', (
            SampleLabel(0, None, 'OR'), SampleLabel(1, None, 'IR'), SampleLabel(2, None, NORMAL),
        ), 'declared')
        once = binarize(assignment)
        self.assertEqual([l.label for l in once.labels], [FAILURE, FAILURE, NORMAL])
        self.assertEqual(binarize(once), once)

    def test_multiclass_counts_collapse(self):
        counts = {'OR': 4928, 'IR': 1152, 'CAGE': 3136, 'COBI': 32, 'IR and OR': 2832, NORMAL: 500}
        labels = []
        for label, count in counts.items():
            labels.extend([label] * count)
        assignment = LabelAssignment('x', tuple(SampleLabel(i, 0, l) for i, l in enumerate(labels)), 'pca_kmeans')
        binary = Counter(l.label for l in binarize(assignment).labels)
        self.assertEqual(binary[FAILURE], 12080)
        self.assertEqual(binary[NORMAL], 500)

    def test_assign_fault_type(self):
        assignment = threshold_label(spiky_records([1, 20, 20]), 10)
        typed = assign_fault_type(assignment, 'IR and OR')
        self.assertEqual([l.label for l in typed.labels], [NORMAL, 'IR and OR', 'IR and OR'])
        self.assertEqual(typed.params['fault_type'], 'IR and OR')


class LabelFileTests(SimpleTestCase):

    def test_round_trip(self):
        window_level = pca_kmeans_label(cloud_samples(), seed=2)
        waveform_level = threshold_label(spiky_records([1, 20], bearing='1_2'), 10)
        assignments = {'1_1': window_level, '1_2': waveform_level}
        with tempfile.TemporaryDirectory() as tmp:
            path = save_labels(assignments, Path(tmp) / 'labels.csv')
            loaded = load_labels(path)
        self.assertEqual(loaded['1_1'].labels, window_level.labels)
        self.assertEqual(loaded['1_2'].labels, waveform_level.labels)
        self.assertEqual(loaded['1_2'].onset_seq_index, 1)
        self.assertEqual(loaded['1_1'].params['failure_clusters'], window_level.params['failure_clusters'])

    def test_label_counts(self):
        samples = cloud_samples()
        counts = label_counts({'1_1': pca_kmeans_label(samples, seed=0)}, samples)
        self.assertEqual(counts, Counter({NORMAL: 80, FAILURE: 20}))
