import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .exceptions import (
    EXIT_CONFIG_ERROR, EXIT_FAILURE, EXIT_PARTIAL_FAILURE, ConfigurationError, DatasetIOError,
    PartialFailureError, SplitError, as_command_error,
)
from .utils import Seeding, config_hash, dumps, natural_key, parse_fractions, read_config, read_json, thread_map, write_json


class SeedingTests(SimpleTestCase):

    def test_streams_repeat_for_the_same_keys(self):
        a = Seeding.rng(7, 1, 2).standard_normal(5)
        b = Seeding.rng(7, 1, 2).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_and_seeds_separate_streams(self):
        base = Seeding.rng(7, 1).standard_normal(5)
        self.assertFalse(np.allclose(base, Seeding.rng(7, 2).standard_normal(5)))
        self.assertFalse(np.allclose(base, Seeding.rng(8, 1).standard_normal(5)))

    def test_child_seeds_and_stage_keys_are_stable(self):
        self.assertEqual(Seeding.child_seed(3, 4), Seeding.child_seed(3, 4))
        self.assertNotEqual(Seeding.child_seed(3, 4), Seeding.child_seed(3, 5))
        self.assertEqual(Seeding.stage_key('split'), Seeding.stage_key('split'))
        self.assertNotEqual(Seeding.stage_key('split'), Seeding.stage_key('labeling'))
        self.assertLess(Seeding.child_seed(2 ** 64 - 1), 2 ** 64)


class JsonFileTests(SimpleTestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)

    def test_numpy_values_and_paths_serialize(self):
        path = write_json(self.root / 'nested' / 'doc.json', {
            'n': np.int64(3), 'x': np.float32(0.5), 'ok': np.bool_(True),
            'v': np.arange(3), 'p': Path('a/b'), 's': {'b', 'a'},
        })
        self.assertEqual(read_json(path), {'n': 3, 'x': 0.5, 'ok': True, 'v': [0, 1, 2], 'p': 'a/b', 's': ['a', 'b']})

    def test_floats_round_trip_exactly(self):
        value = 0.1 + 0.2
        self.assertEqual(read_json(write_json(self.root / 'f.json', {'v': value}))['v'], value)

    def test_non_finite_values_are_rejected(self):
        with self.assertRaises(ValueError):
            dumps({'v': float('nan')})

    def test_missing_and_malformed_files(self):
        with self.assertRaises(DatasetIOError):
            read_json(self.root / 'absent.json')
        (self.root / 'bad.json').write_text('{not json')
        with self.assertRaises(ConfigurationError):
            read_json(self.root / 'bad.json')
        with self.assertRaises(ConfigurationError):
            read_config(self.root / 'absent.json')

    def test_yaml_and_json_configs(self):
        (self.root / 'a.yaml').write_text('name: demo\nfamilies: [RFFT, TIME]\n')
        write_json(self.root / 'a.json', {'name': 'demo', 'families': ['RFFT', 'TIME']})
        self.assertEqual(read_config(self.root / 'a.yaml'), read_config(self.root / 'a.json'))
        (self.root / 'list.yml').write_text('- 1\n- 2\n')
        with self.assertRaises(ConfigurationError):
            read_config(self.root / 'list.yml')
        (self.root / 'broken.yaml').write_text('name: [unclosed\n')
        with self.assertRaises(ConfigurationError):
            read_config(self.root / 'broken.yaml')

    def test_config_hash_ignores_key_order(self):
        self.assertEqual(config_hash({'a': 1, 'b': [1, 2]}), config_hash({'b': [1, 2], 'a': 1}))
        self.assertNotEqual(config_hash({'a': 1}), config_hash({'a': 2}))
        self.assertEqual(len(config_hash({})), 64)


class HelperTests(SimpleTestCase):

    def test_natural_order(self):
        names = ['acc_10.csv', 'acc_2.csv', 'acc_1.csv', 'Bearing1_10', 'Bearing1_9']
        self.assertEqual(sorted(names, key=natural_key),
                         ['Bearing1_9', 'Bearing1_10', 'acc_1.csv', 'acc_2.csv', 'acc_10.csv'])

    def test_thread_map_keeps_input_order(self):
        def work(i):
            return i * i

        self.assertEqual(thread_map(work, range(20), threads=4), [i * i for i in range(20)])
        self.assertEqual(thread_map(work, [], threads=4), [])
        self.assertEqual(thread_map(work, [3], threads=1), [9])

    def test_parse_fractions(self):
        self.assertEqual(parse_fractions('0.8,0.1,0.1'), (0.8, 0.1, 0.1))
        with self.assertRaises(ConfigurationError):
            parse_fractions('0.8,x,0.1')


class ExitCodeTests(SimpleTestCase):

    def test_errors_map_to_exit_codes(self):
        cases = [
            (ConfigurationError('bad', {'task': ['invalid']}), EXIT_CONFIG_ERROR),
            (PartialFailureError('2 cells failed'), EXIT_PARTIAL_FAILURE),
            (SplitError('empty'), EXIT_FAILURE),
        ]
        for exc, code in cases:
            with self.subTest(error=type(exc).__name__):
                self.assertEqual(as_command_error(exc).returncode, code)

    def test_configuration_error_carries_serializer_errors(self):
        exc = ConfigurationError('invalid experiment config', {'task': ['"x" is not a valid choice.']})
        self.assertIn('task', str(exc))
        self.assertEqual(exc.errors, {'task': ['"x" is not a valid choice.']})
