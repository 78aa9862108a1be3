import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from core.exceptions import ConfigurationError, SplitError
from features.models import FeatureSample, WindowSpec
from features.utils import save_features

from .engine import leakage_audit, partition_quotas, resolve_bearing_table, split_by_bearing, split_random
from .models import PARTITIONS, TEST, TRAIN, VAL
from .utils import load_bearing_table, load_split, save_split

FEMTO_BEARINGS = ['1_1', '1_2', '1_3', '1_4', '1_5', '1_6', '1_7', '2_1', '2_2', '2_3',
                  '2_4', '2_5', '2_6', '2_7', '3_1', '3_2', '3_3']


def make_samples(bearings, per_bearing=3, windows=1):
    return [
        FeatureSample(b, b.split('_')[0], seq, w, 0.0, 'TIME', np.zeros(12))
        for b in bearings for seq in range(per_bearing) for w in range(windows)
    ]


class BearingSplitTests(SimpleTestCase):

    def test_femto_table(self):
        samples = make_samples(FEMTO_BEARINGS)
        assignment = split_by_bearing(samples, load_bearing_table('femto'))
        self.assertEqual(set(assignment.bearings_in(TEST)), {'1_6', '1_7', '3_3', '2_6', '2_7'})
        self.assertEqual(len(assignment.bearings_in(VAL)), 4)
        self.assertEqual(len(assignment.bearings_in(TRAIN)), 8)
        self.assertEqual(assignment.sizes(), {TRAIN: 24, VAL: 12, TEST: 15})

    def test_xjtu_table_covers_fifteen_bearings(self):
        bearings = [f'{c}_{u}' for c in (1, 2, 3) for u in range(1, 6)]
        assignment = split_by_bearing(make_samples(bearings), load_bearing_table('xjtu_like'))
        self.assertEqual(assignment.bearings_in(TEST), ['1_2', '2_3', '3_4'])

    def test_cwru_patterns(self):
        bearings = [
            '12k_Drive/IR/007', '48k_Drive/B/021', '12k_Fan/OR/007', '12k_Fan/B/014',
            '12k_Fan/IR/021', 'Normal/0', 'Normal/1', 'Normal/2', 'Normal/3',
        ]
        samples = [FeatureSample(b, '0', 0, 0, 0.0, 'RFFT', np.zeros(4)) for b in bearings]
        table = split_by_bearing(samples, load_bearing_table('cwru')).bearing_table
        self.assertEqual(table['12k_Drive/IR/007'], TRAIN)
        self.assertEqual(table['48k_Drive/B/021'], TRAIN)
        self.assertEqual(table['12k_Fan/OR/007'], VAL)
        self.assertEqual(table['12k_Fan/B/014'], VAL)
        self.assertEqual(table['12k_Fan/IR/021'], TEST)
        self.assertEqual([table[f'Normal/{i}'] for i in range(4)], [TRAIN, TRAIN, VAL, TEST])

    def test_unknown_bearing_named(self):
        samples = make_samples(FEMTO_BEARINGS + ['9_9'])
        with self.assertRaisesRegex(SplitError, '9_9'):
            split_by_bearing(samples, load_bearing_table('femto'))

    def test_all_train_warns(self):
        samples = make_samples(['1_1', '1_2'])
        with self.assertLogs('splits', level='WARNING'):
            assignment = split_by_bearing(samples, {'1_1': TRAIN, '1_2': TRAIN})
        self.assertEqual(assignment.sizes(), {TRAIN: 6, VAL: 0, TEST: 0})

    def test_ambiguous_patterns(self):
        with self.assertRaises(SplitError):
            resolve_bearing_table(['12k_Fan/IR/007'], {'train': ['12k_Fan/*'], 'test': ['*/IR/*']})
        resolved = resolve_bearing_table(['12k_Fan/IR/007'], {'train': ['12k_Fan/*'], 'test': ['12k_Fan/IR/007']})
        self.assertEqual(resolved, {'12k_Fan/IR/007': TEST})

    def test_always_leak_free(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            bearings = [f'{i}_{j}' for i in range(1, 4) for j in range(1, int(rng.integers(2, 6)))]
            table = {b: PARTITIONS[int(rng.integers(3))] for b in bearings}
            samples = make_samples(bearings, per_bearing=int(rng.integers(1, 5)), windows=2)
            assignment = split_by_bearing(samples, table)
            self.assertEqual(set(assignment.mapping), {s.key for s in samples})
            self.assertTrue(leakage_audit(assignment, samples).leak_free)


class RandomSplitTests(SimpleTestCase):

    def test_quota_sizes(self):
        assignment = split_random(make_samples(['1_1'], per_bearing=100), (0.8, 0.1, 0.1), seed=1)
        self.assertEqual(assignment.sizes(), {TRAIN: 80, VAL: 10, TEST: 10})

    def test_quotas_within_one_of_floor(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(3, 500))
            raw = rng.uniform(0.05, 1.0, size=3)
            fractions = raw / raw.sum()
            quotas = partition_quotas(n, fractions)
            self.assertEqual(sum(quotas), n)
            for q, f in zip(quotas, fractions):
                self.assertLessEqual(abs(q - np.floor(f * n)), 1)
                self.assertGreaterEqual(q, 1)

    def test_same_seed_same_mapping(self):
        samples = make_samples(['1_1', '1_2', '2_1'], per_bearing=10)
        self.assertEqual(split_random(samples, seed=7).mapping, split_random(samples, seed=7).mapping)
        self.assertNotEqual(split_random(samples, seed=7).mapping, split_random(samples, seed=8).mapping)

    def test_input_order_does_not_matter(self):
        samples = make_samples(['1_1', '1_2'], per_bearing=20)
        self.assertEqual(split_random(samples, seed=2).mapping, split_random(samples[::-1], seed=2).mapping)

    def test_invalid_fractions(self):
        samples = make_samples(['1_1'])
        for fractions in ((0.8, 0.1, 0.2), (1.0, 0.0, 0.0), (0.5, 0.5)):
            with self.assertRaises(SplitError):
                split_random(samples, fractions, seed=0)

    def test_single_bearing_leaks(self):
        samples = make_samples(['1_1'], per_bearing=10)
        audit = leakage_audit(split_random(samples, (0.6, 0.2, 0.2), seed=0), samples)
        self.assertFalse(audit.leak_free)
        self.assertEqual(audit.leaking_bearings, {'1_1': {TRAIN: 6, VAL: 2, TEST: 2}})

    def test_single_sample_bearings_never_leak(self):
        samples = make_samples([f'1_{i}' for i in range(1, 21)], per_bearing=1)
        self.assertTrue(leakage_audit(split_random(samples, seed=4)).leak_free)

    def test_partitions_disjoint_and_exhaustive(self):
        rng = np.random.default_rng(5)
        for seed in range(50):
            samples = make_samples(['1_1', '2_1', '3_1'], per_bearing=int(rng.integers(1, 30)), windows=2)
            assignment = split_random(samples, seed=seed)
            self.assertEqual(set(assignment.mapping), {s.key for s in samples})
            self.assertEqual(sum(assignment.sizes().values()), len(samples))

    def test_measure_preserving(self):
        samples = make_samples(['1_1', '1_2'], per_bearing=25)
        train_counts = np.zeros(len(samples))
        for seed in range(1000):
            mapping = split_random(samples, (0.8, 0.1, 0.1), seed=seed).mapping
            train_counts += [mapping[s.key] == TRAIN for s in samples]
        frequencies = train_counts / 1000
        self.assertTrue(np.all(np.abs(frequencies - 0.8) <= 0.05))


class SplitFileTests(SimpleTestCase):

    def test_round_trip(self):
        samples = make_samples(['1_1', '1_2'], per_bearing=4, windows=2)
        assignment = split_random(samples, seed=9)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_split(save_split(assignment, Path(tmp) / 'split.csv'))
        self.assertEqual(loaded, assignment)

    def test_table_file_keys_checked(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'table.yaml'
            path.write_text('train: ["1_*"]\nholdout: ["2_*"]\n')
            with self.assertRaises(ConfigurationError):
                load_bearing_table(path)

    def test_commands(self):
        samples = make_samples(FEMTO_BEARINGS, per_bearing=2)
        with tempfile.TemporaryDirectory() as tmp:
            features = save_features(samples, Path(tmp) / 'time.csv', WindowSpec(2048, 0.25))
            by_bearing = Path(tmp) / 'bearing.csv'
            leaky = Path(tmp) / 'random.csv'
            out = StringIO()
            call_command('split', 'bearing', '--features', str(features), '--table', 'femto',
                         '--out', str(by_bearing), stdout=out)
            call_command('split', 'random', '--features', str(features), '--fractions', '0.6,0.2,0.2',
                         '--seed', '3', '--out', str(leaky), stdout=out)
            call_command('split', 'audit', '--split', str(by_bearing), stdout=out)
            self.assertIn('Leak-free', out.getvalue())
            self.assertEqual(load_split(leaky).fractions, (0.6, 0.2, 0.2))
