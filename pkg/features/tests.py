import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import ConfigurationError, FeatureError, NonFiniteFeatureError, WindowTooLongError
from ingest.engine import scan_dataset
from ingest.models import WaveformRecord
from ingest.utils import WaveformCSV

from .engine import (
    extract, rfft_features, segment, spectrum_energy, stft_features, time_features,
    time_features_with_flags, zero_crossings,
)
from .models import TIME_FEATURE_NAMES, WindowSpec
from .utils import load_features, save_features

IDX = {name: i for i, name in enumerate(TIME_FEATURE_NAMES)}


def record(samples, bearing='1_1', seq=0, rate=25600.0):
    return WaveformRecord(bearing, bearing.split('_')[0], seq, samples, rate)


class SegmentTests(SimpleTestCase):

    def test_documented_counts(self):
        spec = WindowSpec(2048, 0.25)
        self.assertEqual(spec.hop, 1536)
        self.assertEqual(segment(record(np.zeros(2560)), spec).shape, (1, 2048))
        self.assertEqual(segment(record(np.zeros(32768)), spec).shape, (21, 2048))

    def test_too_short_names_record(self):
        with self.assertRaises(WindowTooLongError) as ctx:
            segment(record(np.zeros(2047), bearing='3_2', seq=7), WindowSpec(2048, 0.25))
        self.assertIn('3_2#7', str(ctx.exception))

    def test_randomized_window_count(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            length = int(rng.integers(1, 300))
            overlap = float(rng.uniform(0.0, 0.95))
            try:
                spec = WindowSpec(length, overlap)
            except ConfigurationError:
                continue
            n = int(rng.integers(length, 2000))
            windows = segment(record(np.arange(n, dtype=float)), spec)
            self.assertEqual(windows.shape[0], (n - length) // spec.hop + 1)
            self.assertEqual(windows.shape[0], spec.count(n))
            starts = windows[:, 0].astype(int)
            np.testing.assert_array_equal(starts, np.arange(windows.shape[0]) * spec.hop)
            self.assertLess(n - (starts[-1] + length), spec.hop)

    def test_hop_rounds_half_up(self):
        self.assertEqual(WindowSpec(10, 0.25).hop, 8)  # 7.5
        self.assertEqual(WindowSpec(1024, 0.25).hop, 768)

    def test_invalid_specs(self):
        with self.assertRaises(ConfigurationError):
            WindowSpec(2048, 1.0)
        with self.assertRaises(ConfigurationError):
            WindowSpec(0, 0.0)


class TimeFeatureTests(SimpleTestCase):

    def test_unit_sine_integer_cycles(self):
        for cycles in (8, 7, 3):
            x = np.sin(2 * np.pi * cycles * np.arange(2048) / 2048)
            values = time_features(x)
            self.assertLess(abs(values[IDX['mean']]), 1e-9)
            self.assertAlmostEqual(values[IDX['rms']], 1 / np.sqrt(2), places=9)
            self.assertEqual(values[IDX['n_zero_crossings']], 2 * cycles)
        x = np.sin(2 * np.pi * 8 * np.arange(2048) / 2048)
        self.assertAlmostEqual(time_features(x)[IDX['crest_factor']], np.sqrt(2), places=9)
        self.assertEqual(time_features(x)[IDX['n_peaks']], 8)

    def test_cosine_crossings(self):
        x = np.cos(2 * np.pi * 5 * np.arange(1000) / 1000)
        self.assertEqual(zero_crossings(x), 10)

    def test_all_zero_window_is_guarded(self):
        values, flags = time_features_with_flags(np.zeros(2048))
        for name in ('mean', 'std', 'energy', 'rms', 'crest_factor', 'n_peaks', 'n_zero_crossings',
                     'skewness', 'kurtosis', 'kl_divergence'):
            self.assertEqual(values[IDX[name]], 0.0, name)
        self.assertEqual(values[IDX['shapiro_w']], 1.0)
        self.assertIn('crest_factor_guarded', flags)
        self.assertIn('constant_window', flags)

    def test_gaussian_noise_statistics(self):
        x = np.random.default_rng(2024).standard_normal(2048)
        values = time_features(x)
        self.assertTrue(-0.3 <= values[IDX['skewness']] <= 0.3)
        self.assertTrue(-0.5 <= values[IDX['kurtosis']] <= 0.5)
        self.assertGreaterEqual(values[IDX['shapiro_w']], 0.98)
        self.assertLess(values[IDX['kl_divergence']], 0.2)

    def test_amplitude_scaling(self):
        x = np.random.default_rng(1).standard_normal(2048) + 0.3
        c = 4.5
        base, scaled = time_features(x), time_features(c * x)
        for name in ('mean', 'std', 'rms'):
            self.assertAlmostEqual(scaled[IDX[name]], c * base[IDX[name]], places=9)
        self.assertAlmostEqual(scaled[IDX['energy']], c * c * base[IDX['energy']], delta=1e-9 * scaled[IDX['energy']])
        for name in ('skewness', 'kurtosis', 'shapiro_w', 'n_zero_crossings', 'crest_factor', 'n_peaks'):
            self.assertAlmostEqual(scaled[IDX[name]], base[IDX[name]], places=7, msg=name)

    def test_short_window_rejected(self):
        with self.assertRaises(FeatureError):
            time_features(np.ones(7))


class SpectralFeatureTests(SimpleTestCase):

    def test_cosine_lands_on_its_bin(self):
        length, k, amplitude = 2048, 37, 3.0
        x = amplitude * np.cos(2 * np.pi * k * np.arange(length) / length)
        m = rfft_features(x)
        self.assertEqual(m.size, length // 2 + 1)
        self.assertAlmostEqual(m[k], amplitude / 2, places=9)
        others = np.delete(m, k)
        self.assertLess(others.max(), 1e-9)

    def test_zeros(self):
        np.testing.assert_array_equal(rfft_features(np.zeros(64)), np.zeros(33))

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(7)
        length = 2048
        n = np.arange(length)
        k = np.arange(length // 2 + 1)
        basis = np.exp(-2j * np.pi * np.outer(n, k) / length)
        windows = rng.normal(size=(100, length))
        oracle = np.abs(windows @ basis) / length
        for window, expected in zip(windows, oracle):
            got = rfft_features(window)
            self.assertLessEqual(np.max(np.abs(got - expected)) / np.max(expected), 1e-6)

    def test_parseval(self):
        rng = np.random.default_rng(3)
        for length in (2048, 1023, 64):
            x = rng.normal(size=length)
            energy = float(np.dot(x, x))
            self.assertAlmostEqual(spectrum_energy(rfft_features(x), length) / energy, 1.0, places=6)

    def test_rfft_equivariance(self):
        x = np.random.default_rng(5).normal(size=512)
        np.testing.assert_allclose(rfft_features(2.5 * x), 2.5 * rfft_features(x), rtol=1e-12)

    def test_stft_stationary_tone(self):
        rate, length = 25600.0, 2048
        x = np.sin(2 * np.pi * 2000.0 * np.arange(length) / rate)
        grid = stft_features(x, 256, 0.5).reshape(-1, 129)
        self.assertEqual(grid.shape, (15, 129))
        peaks = grid.argmax(axis=1)
        self.assertTrue(np.all(peaks == peaks[0]))
        self.assertEqual(peaks[0], 20)  # 2000 Hz / (25600 / 256)

    def test_stft_chirp_moves_up(self):
        rate, length = 25600.0, 2048
        t = np.arange(length) / rate
        x = np.sin(2 * np.pi * (500.0 * t + 0.5 * 100000.0 * t ** 2))
        peaks = stft_features(x, 256, 0.5).reshape(-1, 129).argmax(axis=1)
        self.assertTrue(np.all(np.diff(peaks) >= 0))
        self.assertGreater(peaks[-1], peaks[0])

    def test_stft_degenerate_equals_tapered_rfft(self):
        from scipy.signal import get_window
        x = np.random.default_rng(9).normal(size=512)
        np.testing.assert_allclose(
            stft_features(x, 512, 0.0), rfft_features(x * get_window('hann', 512)), rtol=0, atol=1e-9,
        )

    def test_stft_sub_window_too_long(self):
        with self.assertRaises(FeatureError):
            stft_features(np.zeros(128), 256, 0.5)


class ExtractTests(SimpleTestCase):

    def test_xjtu_like_count_and_order(self):
        rng = np.random.default_rng(0)
        records = [record(rng.normal(size=32768), seq=s) for s in reversed(range(10))]
        samples = extract(records, 'rfft', WindowSpec(2048, 0.25), threads=4)
        self.assertEqual(len(samples), 210)
        keys = [s.key for s in samples]
        self.assertEqual(keys, sorted(keys))
        self.assertTrue(all(s.values.size == 1025 for s in samples))
        self.assertAlmostEqual(samples[1].window_start_time_s, 1536 / 25600.0)

    def test_time_family_vectors(self):
        records = [record(np.random.default_rng(s).normal(size=2560), seq=s) for s in range(4)]
        samples = extract(records, 'TIME', WindowSpec(2048, 0.25))
        self.assertEqual(len(samples), 4)
        self.assertTrue(all(s.values.size == 12 for s in samples))
        self.assertEqual(samples[0].feature_names, TIME_FEATURE_NAMES)

    def test_thread_count_does_not_change_output(self):
        rng = np.random.default_rng(4)
        records = [record(rng.normal(size=6000), bearing=b, seq=s) for b in ('1_2', '1_1') for s in range(3)]
        one = extract(records, 'STFT', WindowSpec(1024, 0.25), threads=1)
        many = extract(records, 'STFT', WindowSpec(1024, 0.25), threads=6)
        self.assertEqual([s.key for s in one], [s.key for s in many])
        for a, b in zip(one, many):
            np.testing.assert_array_equal(a.values, b.values)

    def test_non_finite_rejected(self):
        x = np.full(2048, 1e306)
        with self.assertRaises(NonFiniteFeatureError):
            extract([record(x)], 'RFFT', WindowSpec(2048, 0.25))

    def test_manifest_source_and_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp) / 'data'
            rng = np.random.default_rng(8)
            for s in range(3):
                WaveformCSV.write(root / 'Bearing2_1' / f'acc_{s}.csv', rng.normal(size=2560))
            samples = extract(scan_dataset(root, 'femto_like'), 'TIME', WindowSpec(2048, 0.25))
            self.assertEqual(len(samples), 3)

            out = Path(tmp) / 'feats.csv'
            save_features(samples, out, WindowSpec(2048, 0.25))
            loaded = load_features(out)
            self.assertEqual([s.key for s in loaded], [s.key for s in samples])
            for a, b in zip(loaded, samples):
                np.testing.assert_array_equal(a.values, b.values)
                self.assertEqual(a.condition_id, '2')
