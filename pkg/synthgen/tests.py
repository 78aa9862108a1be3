import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase
from scipy import signal, stats

from classifiers.engine import fit, predict
from classifiers.serializers import parse_model_spec
from core.exceptions import ConfigurationError
from core.utils import read_json
from features.engine import rfft_features, segment
from features.models import WindowSpec
from ingest.engine import load_records, scan_dataset

from .engine import (
    GROUND_TRUTH_FILE, add_bearing_nuisance, amplitude_schedule, generate_injected,
    generate_run_to_failure, materialize, parse_dataset_spec,
)
from .models import Degradation, SynthConfig


def config(**overrides):
    params = dict(
        shaft_hz=25.0, sampling_rate_hz=25600.0, fault_type='outer_race', fault_char_freq_hz=90.0,
        impulse_snr_db=20.0, noise_sigma_g=0.25, n_waveforms=100, waveform_len=2560, seed=11,
        degradation=Degradation(0.8, 'linear', 30.0),
    )
    params.update(overrides)
    return SynthConfig(**params)


def envelope_spectrum(x, rate_hz):
    envelope = np.abs(signal.hilbert(x))
    magnitudes = np.abs(np.fft.rfft(envelope - envelope.mean()))
    return np.fft.rfftfreq(x.size, 1.0 / rate_hz), magnitudes


class RunToFailureTests(SimpleTestCase):

    def test_onset_and_final_amplitude(self):
        records, truth = generate_run_to_failure(config())
        self.assertEqual(truth.onset_index, 80)
        self.assertEqual(len(records), 100)
        self.assertTrue(all(r.samples.size == 2560 for r in records))
        peak = float(np.max(np.abs(records[-1].samples)))
        self.assertGreaterEqual(peak, 24.0)
        self.assertLessEqual(peak, 36.0)
        for record in records[:80]:
            self.assertLess(float(np.max(np.abs(record.samples))), 3.0)

    def test_amplitude_schedule(self):
        cfg = config()
        amplitudes = amplitude_schedule(cfg)
        self.assertEqual(amplitudes[:80], [0.0] * 80)
        self.assertAlmostEqual(amplitudes[80], cfg.onset_amplitude_g)
        self.assertAlmostEqual(amplitudes[-1], 30.0)
        exponential = amplitude_schedule(config(degradation=Degradation(0.8, 'exponential', 30.0)))
        ratios = np.diff(np.log(exponential[80:]))
        self.assertTrue(np.allclose(ratios, ratios[0]))

    def test_same_seed_is_bit_identical(self):
        first, _ = generate_run_to_failure(config(seed=5))
        second, _ = generate_run_to_failure(config(seed=5))
        other, _ = generate_run_to_failure(config(seed=6))
        self.assertTrue(all(np.array_equal(a.samples, b.samples) for a, b in zip(first, second)))
        self.assertFalse(np.array_equal(first[0].samples, other[0].samples))

    def test_rms_grows_after_onset(self):
        records, truth = generate_run_to_failure(config(seed=2))
        tail = records[truth.onset_index:]
        rms = [float(np.sqrt(np.mean(r.samples ** 2))) for r in tail]
        rho, _ = stats.spearmanr(np.arange(len(rms)), rms)
        self.assertGreaterEqual(rho, 0.9)

    def test_healthy_bearing_has_no_onset(self):
        records, truth = generate_run_to_failure(config(fault_type='none'))
        self.assertIsNone(truth.onset_index)
        self.assertTrue(all(a == 0.0 for a in truth.amplitudes_g))
        self.assertLess(max(float(np.max(np.abs(r.samples))) for r in records), 3.0)

    def test_degradation_required(self):
        with self.assertRaises(ConfigurationError):
            generate_run_to_failure(config(degradation=None))


class InjectedTests(SimpleTestCase):

    def test_envelope_peaks_at_characteristic_frequency(self):
        cfg = config(degradation=None, waveform_len=25600, n_waveforms=2)
        records, truth = generate_injected(cfg)
        self.assertEqual(records[0].fault_label, 'OR')
        self.assertIsNone(truth.onset_index)
        freqs, magnitudes = envelope_spectrum(records[0].samples, cfg.sampling_rate_hz)
        band = (freqs >= 50.0) & (freqs <= 500.0)
        peak_hz = freqs[band][np.argmax(magnitudes[band])]
        self.assertLessEqual(abs(peak_hz - 90.0), 1.0)

    def test_healthy_envelope_has_no_fault_line(self):
        cfg = config(degradation=None, fault_type='none', waveform_len=25600, n_waveforms=1)
        records, _ = generate_injected(cfg)
        self.assertEqual(records[0].fault_label, 'normal')
        freqs, magnitudes = envelope_spectrum(records[0].samples, cfg.sampling_rate_hz)
        band = (freqs >= 50.0) & (freqs <= 500.0)
        at_90 = magnitudes[np.argmin(np.abs(freqs - 90.0))]
        self.assertLess(at_90, 5.0 * np.median(magnitudes[band]))

    def test_characteristic_frequencies_separate(self):
        rate = 25600.0
        waveforms = []
        for label, fc in (('a', 90.0), ('b', 140.0)):
            records, _ = generate_injected(config(degradation=None, fault_char_freq_hz=fc, n_waveforms=20, seed=3))
            waveforms.extend((label, r.samples) for r in records)
        correct = 0
        for label, x in waveforms:
            freqs, magnitudes = envelope_spectrum(x, rate)
            a = magnitudes[np.argmin(np.abs(freqs - 90.0))]
            b = magnitudes[np.argmin(np.abs(freqs - 140.0))]
            correct += ('a' if a > b else 'b') == label
        self.assertGreaterEqual(correct / len(waveforms), 0.99)

    def test_degradation_rejected(self):
        with self.assertRaises(ConfigurationError):
            generate_injected(config())

    def test_above_nyquist_rejected(self):
        with self.assertRaises(ConfigurationError):
            config(fault_char_freq_hz=13000.0)


class NuisanceTests(SimpleTestCase):

    def setUp(self):
        records_a, _ = generate_injected(config(degradation=None, n_waveforms=3, bearing_id='1_1'))
        records_b, _ = generate_injected(config(degradation=None, n_waveforms=3, bearing_id='1_2', seed=12))
        self.records = records_a + records_b

    def test_minus_infinity_is_identity(self):
        out = add_bearing_nuisance(self.records, '1_1', -math.inf, 313.0)
        self.assertTrue(all(a is b for a, b in zip(out, self.records)))

    def test_tone_added_only_to_target_bearing(self):
        out = add_bearing_nuisance(self.records, '1_1', 0.0, 313.0)
        t = np.arange(2560) / 25600.0
        tone = np.sin(2.0 * np.pi * 313.0 * t)
        for before, after in zip(self.records, out):
            if before.bearing_id == '1_1':
                np.testing.assert_allclose(after.samples - before.samples, tone, atol=1e-12)
            else:
                self.assertIs(after, before)

    def test_nuisance_frequency_checked(self):
        with self.assertRaises(ConfigurationError):
            add_bearing_nuisance(self.records, '1_1', 0.0, 20000.0)
        with self.assertRaises(ConfigurationError):
            add_bearing_nuisance(self.records, '1_1', 0.0, 0.0)


class BearingFingerprintTests(SimpleTestCase):
    """Bearings sharing one fault config, told apart only by their tone."""

    bearing_ids = ('1_1', '1_2', '1_3', '1_4')

    def bearing_accuracy(self, tones_hz):
        X, y = [], []
        for i, (bearing_id, tone_hz) in enumerate(zip(self.bearing_ids, tones_hz)):
            records, _ = generate_injected(config(
                degradation=None, n_waveforms=20, bearing_id=bearing_id, seed=21 + i,
            ))
            for record in add_bearing_nuisance(records, bearing_id, 0.0, tone_hz):
                for window in segment(record, WindowSpec(256, 0.0)):
                    X.append(rfft_features(window))
                    y.append(bearing_id)
        X, y = np.array(X), np.array(y)
        order = np.random.default_rng(0).permutation(len(y))
        train, test = order[:len(y) // 2], order[len(y) // 2:]
        model = fit(parse_model_spec('gaussian_nb'), X[train], list(y[train]))
        return float(np.mean(np.array(predict(model, X[test])) == y[test]))

    def test_distinct_tones_identify_the_bearing(self):
        self.assertGreaterEqual(self.bearing_accuracy((1000.0, 2000.0, 3000.0, 4000.0)), 0.99)

    def test_shared_tone_leaves_bearing_at_chance(self):
        accuracy = self.bearing_accuracy((1000.0,) * 4)
        self.assertLessEqual(accuracy, 1.0 / len(self.bearing_ids) + 0.1)


class DatasetDocumentTests(SimpleTestCase):

    document = {
        'dataset_id': 'leak-small',
        'kind': 'injected',
        'seed': 4,
        'base': {
            'shaft_hz': 25.0, 'sampling_rate_hz': 25600.0, 'fault_type': 'outer_race',
            'fault_char_freq_hz': 90.0, 'impulse_snr_db': 20.0, 'noise_sigma_g': 0.25,
            'n_waveforms': 3, 'waveform_len': 2560, 'seed': 0,
        },
        'bearings': [
            {'bearing_id': '1_1', 'nuisance': {'gain_db': 0.0, 'freq_hz': 313.0}},
            {'bearing_id': '1_2', 'overrides': {'fault_type': 'inner_race', 'fault_char_freq_hz': 140.0}},
        ],
    }

    def test_child_seeds_and_conditions(self):
        spec = parse_dataset_spec(self.document)
        first, second = spec.bearings
        self.assertEqual(first.config.condition_id, '1')
        self.assertNotEqual(first.config.seed, second.config.seed)
        self.assertEqual(second.config.fault_label, 'IR')
        self.assertEqual(first.nuisance.freq_hz, 313.0)
        self.assertEqual(parse_dataset_spec(self.document), spec)

    def test_bare_config_is_wrapped(self):
        bare = dict(self.document['base'], degradation={'onset_fraction': 0.5, 'end_amplitude_g': 20.0})
        spec = parse_dataset_spec(bare)
        self.assertEqual(spec.kind, 'run_to_failure')
        self.assertEqual(len(spec.bearings), 1)
        with self.assertRaises(ConfigurationError):
            parse_dataset_spec(bare, kind='injected')

    def test_invalid_documents(self):
        with self.assertRaises(ConfigurationError):
            parse_dataset_spec(dict(self.document, bearings=[]))
        with self.assertRaises(ConfigurationError):
            parse_dataset_spec(dict(self.document['base'], bearing_id='Bearing1'))
        with self.assertRaises(ConfigurationError):
            parse_dataset_spec(dict(self.document, kind='run_to_failure'))

    def test_materialize_scans_as_labelled_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp) / 'synthetic'
            truths = materialize(parse_dataset_spec(self.document), root)
            manifest = scan_dataset(root, 'femto_like')
            records = load_records(manifest)
            stored = read_json(root / GROUND_TRUTH_FILE)
        self.assertEqual(set(truths), {'1_1', '1_2'})
        self.assertEqual(stored['1_2']['fault_label'], 'IR')
        self.assertEqual(len(records), 6)
        self.assertEqual({r.fault_label for r in records}, {'OR', 'IR'})
        self.assertEqual([r.seq_index for r in records if r.bearing_id == '1_1'], [0, 1, 2])

    def test_synth_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.json'
            path.write_text(
                '{"shaft_hz": 25, "sampling_rate_hz": 25600, "fault_type": "ball", '
                '"fault_char_freq_hz": 110, "impulse_snr_db": 20, "noise_sigma_g": 0.3, '
                '"n_waveforms": 4, "waveform_len": 2560, "seed": 1, '
                '"degradation": {"onset_fraction": 0.5, "end_amplitude_g": 15}}'
            )
            call_command('synth', 'r2f', '--config', str(path), '--out', str(Path(tmp) / 'out'), stdout=StringIO())
            manifest = scan_dataset(Path(tmp) / 'out', 'femto_like')
            self.assertEqual(len(manifest), 4)
            truth = read_json(Path(tmp) / 'out' / GROUND_TRUTH_FILE)
        self.assertEqual(truth['1_1']['onset_index'], 2)
