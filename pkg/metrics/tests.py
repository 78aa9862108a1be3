import numpy as np
from django.test import SimpleTestCase

from core.exceptions import MetricError, UnknownLabelError

from .engine import confusion, evaluate, expected_dummy_accuracy, score
from .models import ConfusionMatrix


def brute_force(counts):
    """Metrics straight from the definitions, one sample at a time."""
    k = counts.shape[0]
    pairs = [(t, p) for t in range(k) for p in range(k) for _ in range(int(counts[t, p]))]
    out = {'accuracy': sum(t == p for t, p in pairs) / len(pairs), 'f': []}
    for c in range(k):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out['f'].append(f)
    out['f_macro'] = sum(out['f']) / k
    return out


class ConfusionTests(SimpleTestCase):

    def test_direct_tally(self):
        cm = confusion([1, 1, 1, 0], [1, 0, 1, 0], [0, 1])
        self.assertEqual(cm.counts.tolist(), [[1, 0], [1, 2]])
        self.assertEqual(cm.total, 4)

    def test_perfect_prediction_is_diagonal(self):
        labels = ['a', 'b', 'c', 'a', 'c']
        cm = confusion(labels, labels, ['a', 'b', 'c'])
        self.assertEqual(cm.counts.tolist(), [[2, 0, 0], [0, 1, 0], [0, 0, 2]])
        metrics = score(cm)
        self.assertEqual((metrics.accuracy, metrics.f_macro), (1.0, 1.0))

    def test_empty_inputs(self):
        cm = confusion([], [], ['normal', 'failure'])
        self.assertEqual(cm.total, 0)
        with self.assertRaises(MetricError):
            score(cm)

    def test_unknown_label_named(self):
        with self.assertRaisesRegex(UnknownLabelError, 'CAGE'):
            confusion(['OR'], ['CAGE'], ['OR', 'IR'])

    def test_length_mismatch(self):
        with self.assertRaises(MetricError):
            confusion(['OR', 'IR'], ['OR'], ['OR', 'IR'])

    def test_dict_round_trip(self):
        cm = confusion(['a', 'b'], ['b', 'b'], ['a', 'b'])
        self.assertEqual(ConfusionMatrix.from_dict(cm.to_dict()), cm)


class ScoreTests(SimpleTestCase):

    def test_binary_example(self):
        # classes (failure, normal): TP=9, FN=3, FP=1, TN=7
        cm = ConfusionMatrix(('failure', 'normal'), [[9, 3], [1, 7]])
        metrics = score(cm, 'binary')
        self.assertAlmostEqual(metrics.positive_precision, 0.9)
        self.assertAlmostEqual(metrics.positive_recall, 0.75)
        self.assertAlmostEqual(metrics.f, 2 * 0.9 * 0.75 / 1.65)
        self.assertAlmostEqual(metrics.accuracy, 0.8)
        row = metrics.report_values('positive')
        self.assertEqual(round(row['F'], 3), 0.818)
        self.assertEqual(row['F_mac'], metrics.f_macro)
        self.assertEqual(metrics.report_values('macro')['Prec'], metrics.macro_precision)

    def test_binary_needs_positive_class(self):
        with self.assertRaises(MetricError):
            score(ConfusionMatrix(('OR', 'IR'), [[1, 0], [0, 1]]), 'binary')
        with self.assertRaises(MetricError):
            score(ConfusionMatrix(('a', 'b', 'failure'), np.eye(3)), 'binary')

    def test_never_predicted_class_scores_zero(self):
        cm = ConfusionMatrix(('a', 'b', 'c'), [[5, 0, 0], [0, 5, 0], [2, 3, 0]])
        metrics = score(cm)
        c = metrics.per_class['c']
        self.assertEqual((c.precision, c.recall, c.f), (0.0, 0.0, 0.0))
        two_class_mean = (metrics.per_class['a'].f + metrics.per_class['b'].f) / 2
        self.assertLess(metrics.f_macro, two_class_mean)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(2, 5))
            counts = rng.integers(0, 6, size=(k, k))
            if counts.sum() == 0:
                counts[0, 0] = 1
            classes = tuple(f'c{i}' for i in range(k))
            metrics = score(ConfusionMatrix(classes, counts))
            oracle = brute_force(counts)
            self.assertAlmostEqual(metrics.accuracy, oracle['accuracy'], delta=1e-12)
            self.assertAlmostEqual(metrics.f_macro, oracle['f_macro'], delta=1e-12)
            for name, f in zip(classes, oracle['f']):
                self.assertAlmostEqual(metrics.per_class[name].f, f, delta=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            counts = rng.integers(0, 20, size=(4, 4)) + np.eye(4, dtype=int)
            classes = ('a', 'b', 'c', 'd')
            perm = rng.permutation(4)
            original = score(ConfusionMatrix(classes, counts))
            permuted = score(ConfusionMatrix(tuple(classes[i] for i in perm), counts[np.ix_(perm, perm)]))
            self.assertAlmostEqual(original.accuracy, permuted.accuracy, delta=1e-12)
            self.assertAlmostEqual(original.f_macro, permuted.f_macro, delta=1e-12)
            for c in classes:
                self.assertAlmostEqual(original.per_class[c].f, permuted.per_class[c].f, delta=1e-12)

    def test_accuracy_is_support_weighted_recall(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            counts = rng.integers(0, 10, size=(3, 3)) + 1
            metrics = score(ConfusionMatrix(('a', 'b', 'c'), counts))
            weighted = sum(m.recall * m.support for m in metrics.per_class.values()) / counts.sum()
            self.assertAlmostEqual(metrics.accuracy, weighted, delta=1e-12)

    def test_symmetric_binary_f_equals_macro(self):
        cm = ConfusionMatrix(('failure', 'normal'), [[8, 2], [2, 8]])
        metrics = score(cm, 'binary')
        self.assertAlmostEqual(metrics.f, metrics.f_macro, delta=1e-12)

    def test_values_in_unit_interval(self):
        metrics = evaluate(['a', 'b', 'b'], ['b', 'b', 'a'], ['a', 'b'])
        for value in metrics.report_values('macro').values():
            self.assertTrue(0.0 <= value <= 1.0)


class DummyExpectationTests(SimpleTestCase):

    def test_examples(self):
        self.assertAlmostEqual(expected_dummy_accuracy((0.9, 0.1)), 0.82)
        self.assertAlmostEqual(expected_dummy_accuracy([0.25] * 4), 0.25)
        self.assertEqual(expected_dummy_accuracy([1.0]), 1.0)
        self.assertAlmostEqual(expected_dummy_accuracy({'normal': 0.5, 'failure': 0.5}), 0.5)

    def test_invalid_distribution(self):
        for probs in ((0.5, 0.6), (1.2, -0.2), ()):
            with self.assertRaises(MetricError):
                expected_dummy_accuracy(probs)
