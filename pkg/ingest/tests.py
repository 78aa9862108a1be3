import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.test import SimpleTestCase

from core.exceptions import (
    ConfigurationError, DatasetIOError, ManifestError, UnsupportedRateError,
    WaveformLengthError, WaveformParseError,
)
from core.utils import read_json, write_json

from .engine import (
    anti_alias_taps, downsample, load_manifest, load_records, load_waveform,
    resample_dataset, save_manifest, scan_dataset,
)
from .models import WaveformRecord
from .utils import WaveformCSV


def write_femto_raw(path: Path, horizontal: np.ndarray):
    n = horizontal.size
    frame = pd.DataFrame({
        'h': np.full(n, 9), 'm': np.full(n, 39), 's': np.full(n, 39),
        'us': np.arange(n) * 39, 'horiz': horizontal, 'vert': -horizontal,
    })
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, header=False, index=False, float_format='%.17g')


class ScanDatasetTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_femto_tree_enumerates_in_acquisition_order(self):
        for bearing in ('1_1', '1_2'):
            for n in (1, 2, 3, 10, 11):
                WaveformCSV.write(self.root / f'Bearing{bearing}' / f'acc_{n:05d}.csv', np.ones(16) * n)
        WaveformCSV.write(self.root / 'Bearing1_1' / 'temp_00001.csv', np.ones(4))

        manifest = scan_dataset(self.root, 'femto_like')

        self.assertEqual(len(manifest), 10)
        self.assertEqual(manifest.bearing_ids(), ['1_1', '1_2'])
        for bearing in ('1_1', '1_2'):
            entries = manifest.entries_for(bearing)
            self.assertEqual([e.seq_index for e in entries], [0, 1, 2, 3, 4])
            self.assertEqual(entries[-1].path.name, 'acc_00011.csv')
            self.assertTrue(all(e.condition_id == '1' for e in entries))
            self.assertTrue(all(e.fault_label is None for e in entries))
        self.assertEqual(manifest.rejects, ())

    def test_unparseable_names_are_rejected_not_dropped(self):
        WaveformCSV.write(self.root / 'Bearing1_1' / 'acc_00001.csv', np.ones(16))
        WaveformCSV.write(self.root / 'Bearing1_1' / 'notes.csv', np.ones(16))
        WaveformCSV.write(self.root / 'bearing_one' / 'acc_00001.csv', np.ones(16))

        manifest = scan_dataset(self.root, 'femto_like')

        self.assertEqual(len(manifest), 1)
        rejected = sorted(r['path'] for r in manifest.rejects)
        self.assertEqual(rejected, ['Bearing1_1/notes.csv', 'bearing_one/acc_00001.csv'])

    def test_cwru_tree_carries_fault_labels(self):
        for group in ('12k_Drive', '48k_Drive'):
            for fault in ('B', 'IR', 'OR'):
                for diameter in ('007', '014', '021'):
                    for load in range(2):
                        WaveformCSV.write(self.root / group / fault / diameter / f'{load}.csv', np.ones(8))
        WaveformCSV.write(self.root / 'Normal' / '0.csv', np.ones(8))

        manifest = scan_dataset(self.root, 'cwru_like')

        labels = {e.fault_label for e in manifest.records}
        self.assertIn('IR/0.007', labels)
        self.assertIn('BALL/0.014', labels)
        self.assertIn('OR/0.021', labels)
        self.assertIn('Normal', labels)
        ir = manifest.entries_for('48k_Drive/IR/007')
        self.assertEqual([e.condition_id for e in ir], ['0', '1'])
        self.assertEqual(ir[0].sampling_rate_hz, 48000.0)
        self.assertEqual(manifest.entries_for('12k_Drive/B/021')[0].sampling_rate_hz, 12000.0)
        self.assertEqual(manifest.entries_for('Normal/0')[0].sampling_rate_hz, 48000.0)

    def test_xjtu_layout_uses_condition_directory(self):
        for n in (1, 2, 3):
            WaveformCSV.write(self.root / '35Hz12kN' / 'Bearing1_1' / f'{n}.csv', np.ones(8))
        manifest = scan_dataset(self.root, 'xjtu_like')
        self.assertEqual([e.condition_id for e in manifest.records], ['35Hz12kN'] * 3)
        self.assertEqual([e.sampling_rate_hz for e in manifest.records], [25600.0] * 3)

    def test_declared_bearing_labels_sidecar(self):
        WaveformCSV.write(self.root / 'Bearing1_1' / 'acc_1.csv', np.ones(8))
        WaveformCSV.write(self.root / 'Bearing1_2' / 'acc_1.csv', np.ones(8))
        write_json(self.root / 'bearing_labels.json', {'1_1': 'OR', '1_2': 'normal'})
        manifest = scan_dataset(self.root, 'femto_like')
        self.assertEqual([e.fault_label for e in manifest.records], ['OR', 'normal'])

    def test_empty_directory_warns(self):
        with self.assertLogs('ingest', level='WARNING'):
            manifest = scan_dataset(self.root, 'femto_like')
        self.assertEqual(len(manifest), 0)

    def test_missing_root_is_io_error(self):
        with self.assertRaises(DatasetIOError):
            scan_dataset(self.root / 'absent', 'femto_like')

    def test_unknown_layout(self):
        with self.assertRaises(ConfigurationError):
            scan_dataset(self.root, 'ims_like')

    def test_two_scans_are_identical(self):
        rng = np.random.default_rng(3)
        for bearing in ('2_1', '1_10', '1_2'):
            for n in range(4):
                WaveformCSV.write(self.root / f'Bearing{bearing}' / f'acc_{n}.csv', rng.normal(size=8))
        first = scan_dataset(self.root, 'femto_like').to_dict()
        second = scan_dataset(self.root, 'femto_like').to_dict()
        self.assertEqual(first, second)
        self.assertEqual([r['bearing_id'] for r in first['records']][::4], ['1_2', '1_10', '2_1'])


class ManifestFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        for n in range(3):
            WaveformCSV.write(self.root / 'Bearing1_1' / f'acc_{n}.csv', np.arange(8.0) + n)

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_then_load(self):
        manifest = scan_dataset(self.root, 'femto_like', dataset_id='tiny')
        save_manifest(manifest, self.root / 'manifest.json')
        loaded = load_manifest(self.root / 'manifest.json')
        self.assertEqual(loaded.to_dict(), manifest.to_dict())
        self.assertEqual(read_json(self.root / 'manifest.json')['schema_version'], 1)

    def test_load_checks_paths_exist(self):
        manifest = scan_dataset(self.root, 'femto_like')
        save_manifest(manifest, self.root / 'manifest.json')
        (self.root / 'Bearing1_1' / 'acc_2.csv').unlink()
        with self.assertRaises(ManifestError):
            load_manifest(self.root / 'manifest.json')

    def test_duplicate_keys_rejected(self):
        document = scan_dataset(self.root, 'femto_like').to_dict()
        document['records'][1]['seq_index'] = 0
        write_json(self.root / 'manifest.json', document)
        with self.assertRaises(ConfigurationError):
            load_manifest(self.root / 'manifest.json')

    def test_schema_version_checked(self):
        document = scan_dataset(self.root, 'femto_like').to_dict()
        document['schema_version'] = 99
        write_json(self.root / 'manifest.json', document)
        with self.assertRaises(ConfigurationError):
            load_manifest(self.root / 'manifest.json')

    def test_scan_command_writes_manifest(self):
        out = self.root / 'out' / 'manifest.json'
        call_command('ingest', 'scan', '--root', str(self.root), '--layout', 'femto', '--out', str(out))
        self.assertEqual(len(read_json(out)['records']), 3)


class LoadWaveformTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _single(self, layout='femto_like'):
        manifest = scan_dataset(self.root, layout)
        return manifest.records[0]

    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(11)
        written = {}
        for bearing in ('1_1', '1_2'):
            for n in range(5):
                samples = rng.normal(scale=7.0, size=257) * 10.0 ** rng.integers(-12, 12)
                written[(bearing, n)] = samples
                WaveformCSV.write(self.root / f'Bearing{bearing}' / f'acc_{n}.csv', samples)
        manifest = scan_dataset(self.root, 'femto_like')
        for record in load_records(manifest, threads=3):
            np.testing.assert_array_equal(record.samples, written[(record.bearing_id, record.seq_index)])

    def test_femto_raw_rows_keep_horizontal_column(self):
        horizontal = np.linspace(-1.0, 1.0, 2560)
        write_femto_raw(self.root / 'Bearing1_1' / 'acc_00001.csv', horizontal)
        record = load_waveform(self._single())
        self.assertEqual(record.samples.size, 2560)
        np.testing.assert_array_equal(record.samples, horizontal)
        self.assertEqual(record.axis, 'horizontal')

    def test_xjtu_headered_file(self):
        path = self.root / '35Hz12kN' / 'Bearing1_1' / '1.csv'
        path.parent.mkdir(parents=True)
        values = np.random.default_rng(0).normal(size=32768)
        pd.DataFrame({
            'Horizontal_vibration_signals': values,
            'Vertical_vibration_signals': values * 2,
        }).to_csv(path, index=False, float_format='%.17g')
        record = load_waveform(self._single('xjtu_like'))
        self.assertEqual(record.samples.size, 32768)
        np.testing.assert_array_equal(record.samples, values)

    def test_semicolon_delimiter(self):
        path = self.root / 'Bearing1_1' / 'acc_1.csv'
        path.parent.mkdir(parents=True)
        path.write_text('9;39;39;65664;0.552;-0.146\n9;39;39;65703;0.501;-0.48\n')
        record = load_waveform(self._single())
        np.testing.assert_array_equal(record.samples, [0.552, 0.501])

    def test_nan_token_names_row(self):
        path = self.root / 'Bearing1_1' / 'acc_1.csv'
        path.parent.mkdir(parents=True)
        path.write_text('horizontal\n0.5\n0.25\nNaN\n0.1\n')
        with self.assertRaises(WaveformParseError) as ctx:
            load_waveform(self._single())
        self.assertEqual(ctx.exception.row, 4)
        self.assertIn('acc_1.csv', str(ctx.exception))

    def test_malformed_field_names_row(self):
        path = self.root / 'Bearing1_1' / 'acc_1.csv'
        path.parent.mkdir(parents=True)
        path.write_text('0.5\n0.2x5\n0.1\n')
        with self.assertRaises(WaveformParseError) as ctx:
            load_waveform(self._single())
        self.assertEqual(ctx.exception.row, 2)

    def test_truncated_final_row(self):
        path = self.root / 'Bearing1_1' / 'acc_1.csv'
        write_femto_raw(path, np.ones(10))
        with open(path, 'a') as fh:
            fh.write('9,39,40\n')
        with self.assertRaises(WaveformLengthError):
            load_waveform(self._single())

    def test_short_file_against_expected_length(self):
        WaveformCSV.write(self.root / 'Bearing1_1' / 'acc_1.csv', np.ones(2000))
        with self.assertRaises(WaveformLengthError) as ctx:
            load_waveform(self._single(), expected_length=2560)
        self.assertEqual(ctx.exception.actual, 2000)

    def test_truncated_acquisition_within_bearing(self):
        for n in range(1, 4):
            write_femto_raw(self.root / 'Bearing1_1' / f'acc_{n}.csv', np.ones(2560))
        write_femto_raw(self.root / 'Bearing1_2' / 'acc_1.csv', np.ones(1280))
        write_femto_raw(self.root / 'Bearing1_1' / 'acc_4.csv', np.ones(2000))
        with self.assertRaises(WaveformLengthError) as ctx:
            load_records(scan_dataset(self.root, 'femto_like'))
        self.assertEqual((ctx.exception.expected, ctx.exception.actual), (2560, 2000))
        self.assertIn('acc_4.csv', str(ctx.exception))

    def test_cwru_loads_may_differ_in_length(self):
        for load, n in ((0, 1200), (1, 1100)):
            WaveformCSV.write(self.root / '12k_Drive' / 'IR' / '007' / f'{load}.csv', np.ones(n))
        records = load_records(scan_dataset(self.root, 'cwru_like'))
        self.assertEqual([r.samples.size for r in records], [1200, 1100])


class DownsampleTests(SimpleTestCase):

    def _tone(self, freq_hz, rate_hz=48000.0, seconds=1.0, amplitude=1.0):
        t = np.arange(int(rate_hz * seconds)) / rate_hz
        return WaveformRecord('1_1', '0', 0, amplitude * np.sin(2 * np.pi * freq_hz * t), rate_hz)

    @staticmethod
    def _bin_magnitude(x, rate_hz, freq_hz):
        spectrum = np.abs(np.fft.rfft(x))
        freqs = np.fft.rfftfreq(x.size, 1.0 / rate_hz)
        return spectrum[np.argmin(np.abs(freqs - freq_hz))]

    def test_factor_one_is_identity(self):
        record = self._tone(1000.0)
        self.assertIs(downsample(record, 48000.0), record)

    def test_output_rate_and_length(self):
        for n in (48000, 48001, 48003, 100):
            record = WaveformRecord('1_1', '0', 0, np.ones(n), 48000.0)
            out = downsample(record, 12000.0)
            self.assertEqual(out.sampling_rate_hz, 12000.0)
            self.assertEqual(out.samples.size, math.ceil(n / 4))

    def test_passband_tone_keeps_its_bin(self):
        out = downsample(self._tone(1000.0), 12000.0)
        spectrum = np.abs(np.fft.rfft(out.samples))
        freqs = np.fft.rfftfreq(out.samples.size, 1.0 / 12000.0)
        self.assertAlmostEqual(freqs[np.argmax(spectrum)], 1000.0, delta=1.0)

    def test_alias_suppressed_40db(self):
        record = self._tone(7000.0)
        filtered = downsample(record, 12000.0).samples[32:-32]
        naive = record.samples[::4][32:-32]
        # 7 kHz folds onto 5 kHz at 12 kHz
        ratio = self._bin_magnitude(naive, 12000.0, 5000.0) / self._bin_magnitude(filtered, 12000.0, 5000.0)
        self.assertGreaterEqual(20 * np.log10(ratio), 40.0)

    def test_commutes_with_scaling(self):
        rng = np.random.default_rng(5)
        base = WaveformRecord('1_1', '0', 0, rng.normal(size=4096), 48000.0)
        scaled = base.with_samples(base.samples * -3.5)
        np.testing.assert_allclose(
            downsample(scaled, 12000.0).samples,
            -3.5 * downsample(base, 12000.0).samples,
            rtol=1e-9, atol=1e-12,
        )

    def test_zero_padded_edges(self):
        record = WaveformRecord('1_1', '0', 0, np.ones(4000), 48000.0)
        out = downsample(record, 12000.0).samples
        taps = anti_alias_taps(48000.0, 12000.0)
        delay = (taps.size - 1) // 2
        self.assertAlmostEqual(out[0], taps[delay:].sum(), places=12)
        self.assertAlmostEqual(out[out.size // 2], taps.sum(), places=12)

    def test_non_integer_factor_rejected(self):
        with self.assertRaises(UnsupportedRateError):
            downsample(self._tone(100.0), 10000.0)
        with self.assertRaises(UnsupportedRateError):
            downsample(self._tone(100.0), 96000.0)

    def test_resample_dataset_writes_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp) / 'cwru'
            WaveformCSV.write(root / '48k_Drive' / 'IR' / '007' / '0.csv', np.ones(400))
            manifest = scan_dataset(root, 'cwru_like')
            resampled = resample_dataset(manifest, 12000.0, Path(tmp) / 'cwru12k')
            self.assertEqual(resampled.records[0].sampling_rate_hz, 12000.0)
            reloaded = load_manifest(Path(tmp) / 'cwru12k' / 'manifest.json')
            self.assertEqual(load_waveform(reloaded.records[0]).samples.size, 100)
