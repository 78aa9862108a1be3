import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import minimize

from core.exceptions import ConfigurationError, DimensionMismatchError, ModelError
from core.utils import write_json
from features.models import FeatureSample, WindowSpec
from features.utils import save_features
from labeling.models import LabelAssignment, SampleLabel
from labeling.utils import save_labels
from metrics.engine import expected_dummy_accuracy
from splits.engine import split_by_bearing
from splits.utils import save_split

from .engine import compute_class_weights, fit, predict, predict_scores
from .learners import BatchNormMLP, KernelRows, SvmRbf, rbf_kernel
from .models import ModelSpec
from .serializers import parse_model_spec
from .utils import load_model, save_model

FAST = {
    'dummy_stratified': {},
    'gaussian_nb': {},
    'logistic_regression': {},
    'svm_rbf': {},
    'random_forest': {'n_trees': 20},
    'mlp': {'hidden': [16, 8], 'batch_size': 32, 'max_epochs': 30},
}


def blobs(n_per_class, offset=3.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([
        rng.normal(size=(n_per_class, 2)) + [offset, 0.0],
        rng.normal(size=(n_per_class, 2)) - [offset, 0.0],
    ])
    y = ['a'] * n_per_class + ['b'] * n_per_class
    return X, y


def xor(n_per_cluster, seed=0):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for sx in (-1, 1):
        for sy in (-1, 1):
            X.append(rng.normal(scale=0.5, size=(n_per_cluster, 2)) + [2.0 * sx, 2.0 * sy])
            y += ['same' if sx == sy else 'diff'] * n_per_cluster
    return np.vstack(X), y


def accuracy(model, X, y):
    return float(np.mean(np.array(predict(model, X)) == np.array(y)))


class ClassWeightTests(SimpleTestCase):

    def test_balanced_weights(self):
        weights = compute_class_weights(['normal'] * 90 + ['failure'] * 10, 'balanced')
        self.assertAlmostEqual(weights['normal'], 100 / 180)
        self.assertAlmostEqual(weights['failure'], 5.0)

    def test_uniform_classes_weigh_one(self):
        for labels in (['a', 'b'] * 20, ['a', 'b', 'c']):
            self.assertEqual(set(compute_class_weights(labels, 'balanced').values()), {1.0})

    def test_none_mode(self):
        self.assertEqual(compute_class_weights(['a'] * 9 + ['b'], 'none'), {'a': 1.0, 'b': 1.0})

    def test_errors(self):
        with self.assertRaises(ModelError):
            compute_class_weights([], 'balanced')
        with self.assertRaises(ModelError):
            compute_class_weights(['a', 'a'], 'balanced', classes=['a', 'b'])
        with self.assertRaises(ConfigurationError):
            compute_class_weights(['a'], 'inverse')


class ModelSpecTests(SimpleTestCase):

    def test_defaults_merged(self):
        spec = ModelSpec('svm_rbf')
        self.assertEqual(spec.hyperparams['C'], 1.0)
        self.assertEqual(spec.hyperparams['gamma'], 'scale')
        self.assertEqual(spec.class_weighting, 'balanced')
        self.assertEqual(ModelSpec('gaussian_nb').class_weighting, 'none')

    def test_invalid_hyperparams(self):
        for kind, params in (
            ('svm_rbf', {'C': 0}),
            ('random_forest', {'n_trees': 0}),
            ('mlp', {'hidden': [64, 0]}),
            ('gaussian_nb', {'priors': [0.5, 0.5]}),
            ('logistic_regression', {'max_iter': 1.5}),
        ):
            with self.assertRaises(ConfigurationError, msg=kind):
                ModelSpec(kind, params)
        with self.assertRaises(ConfigurationError):
            ModelSpec('knn')

    def test_spec_documents(self):
        spec = parse_model_spec({'kind': 'random_forest', 'hyperparams': {'n_trees': 7}}, default_seed=5)
        self.assertEqual((spec.hyperparams['n_trees'], spec.seed), (7, 5))
        self.assertEqual(parse_model_spec('mlp').kind, 'mlp')
        with self.assertRaises(ConfigurationError):
            parse_model_spec({'kind': 'svm_rbf', 'class_weighting': 'inverse'})


class FitContractTests(SimpleTestCase):

    def test_single_class_rejected(self):
        X = np.zeros((5, 2))
        with self.assertRaises(ModelError):
            fit(ModelSpec('gaussian_nb'), X, ['a'] * 5)
        model = fit(ModelSpec('dummy_stratified'), X, ['a'] * 5)
        self.assertEqual(predict(model, X), ['a'] * 5)

    def test_non_finite_features_rejected(self):
        X, y = blobs(10)
        X[3, 1] = np.nan
        with self.assertRaises(ModelError):
            fit(ModelSpec('gaussian_nb'), X, y)

    def test_row_count_mismatch(self):
        X, y = blobs(10)
        with self.assertRaises(ModelError):
            fit(ModelSpec('gaussian_nb'), X, y[:-1])

    def test_dimension_mismatch(self):
        X, y = blobs(10)
        model = fit(ModelSpec('gaussian_nb'), X, y)
        with self.assertRaises(DimensionMismatchError):
            predict(model, np.zeros((4, 3)))

    def test_standardizer_uses_training_data_only(self):
        X, y = blobs(50)
        model = fit(ModelSpec('mlp', FAST['mlp']), X, y, X_val=X[:10] + 100.0, y_val=y[:10])
        assert_allclose(model.standardizer.mean, X.mean(axis=0))
        assert_allclose(model.standardizer.std, X.std(axis=0))

    def test_constant_column_kept(self):
        X, y = blobs(20)
        X = np.column_stack([X, np.full(40, 7.0)])
        model = fit(ModelSpec('logistic_regression'), X, y)
        self.assertEqual(model.standardizer.std[2], 1.0)
        self.assertGreater(accuracy(model, X, y), 0.95)

    def test_scores_normalized_and_consistent(self):
        X, y = blobs(60, offset=1.0)
        X_test, _ = blobs(40, offset=1.0, seed=1)
        for kind, params in FAST.items():
            model = fit(ModelSpec(kind, params, seed=3), X, y)
            scores = predict_scores(model, X_test)
            self.assertEqual(scores.shape, (80, 2))
            if model.spec.probabilistic:
                self.assertTrue(np.all(scores >= 0), kind)
                assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9, err_msg=kind)
            expected = [model.classes[i] for i in np.argmax(scores, axis=1)]
            self.assertEqual(predict(model, X_test), expected, kind)

    def test_fit_is_deterministic(self):
        X, y = xor(30)
        for kind, params in FAST.items():
            first = predict_scores(fit(ModelSpec(kind, params, seed=9), X, y), X)
            second = predict_scores(fit(ModelSpec(kind, params, seed=9), X, y), X)
            assert_array_equal(first, second, err_msg=kind)

    def test_serialization_round_trip(self):
        X, y = xor(20)
        X_new = np.random.default_rng(4).normal(scale=2.0, size=(50, 2))
        with tempfile.TemporaryDirectory() as tmp:
            for kind, params in FAST.items():
                model = fit(ModelSpec(kind, params, seed=2), X, y)
                path = save_model(model, Path(tmp) / f'{kind}.json')
                reloaded = load_model(path)
                self.assertEqual(reloaded.classes, model.classes)
                self.assertEqual(reloaded.spec, model.spec)
                assert_array_equal(predict_scores(reloaded, X_new), predict_scores(model, X_new), err_msg=kind)

    def test_load_rejects_other_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_json(Path(tmp) / 'other.json', {'format': 'something-else'})
            with self.assertRaises(ModelError):
                load_model(path)


class NaiveBayesTests(SimpleTestCase):

    def test_separated_blobs(self):
        X, y = blobs(500)
        X_test, y_test = blobs(500, seed=1)
        model = fit(ModelSpec('gaussian_nb'), X, y)
        self.assertGreaterEqual(accuracy(model, X_test, y_test), 0.995)
        self.assertEqual(predict(model, np.array([[3.0, 0.0], [-3.0, 0.0]])), ['a', 'b'])

    def test_tie_goes_to_lower_class(self):
        X = np.array([[-2.0], [0.0], [0.0], [2.0]])
        model = fit(ModelSpec('gaussian_nb'), X, ['a', 'a', 'b', 'b'])
        scores = predict_scores(model, np.array([[0.0]]))
        self.assertEqual(scores[0, 0], scores[0, 1])
        self.assertEqual(predict(model, np.array([[0.0]])), ['a'])

    def test_variance_floor(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 5.0], [2.0, 6.0]])
        model = fit(ModelSpec('gaussian_nb'), X, ['a', 'a', 'b', 'b'])
        self.assertTrue(np.all(model.state['variances'] > 0))
        self.assertGreater(model.fit_info['variance_floor'], 0)


class DummyTests(SimpleTestCase):

    def test_frequencies_follow_training_distribution(self):
        y = ['normal'] * 900 + ['failure'] * 100
        model = fit(ModelSpec('dummy_stratified', seed=1), np.zeros((1000, 3)), y)
        predicted = np.array(predict(model, np.zeros((100_000, 3))))
        self.assertAlmostEqual(float(np.mean(predicted == 'normal')), 0.9, delta=0.02)

    def test_accuracy_matches_expectation(self):
        rng = np.random.default_rng(0)
        y = list(rng.permutation(['normal'] * 90_000 + ['failure'] * 10_000))
        model = fit(ModelSpec('dummy_stratified', seed=2), np.zeros((1000, 1)), y[:1000])
        acc = float(np.mean(np.array(predict(model, np.zeros((len(y), 1)))) == np.array(y)))
        priors = model.state['priors']
        self.assertAlmostEqual(acc, expected_dummy_accuracy((0.9, 0.1)), delta=0.02)
        self.assertAlmostEqual(float(priors.sum()), 1.0)


class LogisticRegressionTests(SimpleTestCase):

    def test_cannot_solve_xor(self):
        X, y = xor(100)
        X_test, y_test = xor(100, seed=1)
        model = fit(ModelSpec('logistic_regression'), X, y)
        self.assertLessEqual(accuracy(model, X_test, y_test), 0.6)

    def test_symmetric_boundary_scores_half(self):
        rng = np.random.default_rng(5)
        half = rng.normal(size=(50, 2)) + [0.5, 0.5]
        X = np.vstack([half, -half])
        model = fit(ModelSpec('logistic_regression'), X, ['a'] * 50 + ['b'] * 50)
        assert_allclose(predict_scores(model, np.zeros((1, 2)))[0], [0.5, 0.5], atol=1e-6)

    def test_loss_never_above_zero_weights(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(60, 4))
            y = list(rng.choice(['a', 'b', 'c'], size=60))
            info = fit(ModelSpec('logistic_regression', seed=seed), X, y).fit_info
            self.assertLessEqual(info['loss'], info['initial_loss'])

    def test_converges_on_separated_data(self):
        X, y = blobs(100, offset=1.0)
        info = fit(ModelSpec('logistic_regression'), X, y).fit_info
        self.assertTrue(info['converged'])
        self.assertLessEqual(info['gradient_norm'], 1e-5)


class SvmTests(SimpleTestCase):

    def instance(self, n, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
        C = np.where(y > 0, 1.0, 2.0)
        return X, y, C

    def test_kkt_conditions(self):
        for seed in range(5):
            X, y, C = self.instance(64, seed)
            result = SvmRbf.solve(KernelRows(X, 0.5, 100), y, C, tol=1e-4, max_iter=100_000)
            self.assertTrue(result.converged)
            alpha = result.alpha
            self.assertTrue(np.all(alpha >= 0) and np.all(alpha <= C + 1e-12))
            self.assertAlmostEqual(float(alpha @ y), 0.0, delta=1e-9)
            margin = y * (rbf_kernel(X, X, 0.5) @ (alpha * y) - result.rho)
            at_zero = alpha <= 1e-12
            at_bound = alpha >= C - 1e-12
            free = ~at_zero & ~at_bound
            self.assertTrue(np.all(margin[at_zero] >= 1 - 1e-3))
            self.assertTrue(np.all(margin[at_bound] <= 1 + 1e-3))
            self.assertTrue(np.all(np.abs(margin[free] - 1) <= 1e-3))

    def test_dual_matches_quadratic_program(self):
        for seed in range(5):
            X, y, C = self.instance(16, seed + 10)
            K = rbf_kernel(X, X, 0.5)
            Q = np.outer(y, y) * K
            oracle = minimize(
                lambda a: 0.5 * a @ Q @ a - a.sum(),
                np.zeros(16),
                jac=lambda a: Q @ a - 1.0,
                bounds=list(zip(np.zeros(16), C)),
                constraints=[{'type': 'eq', 'fun': lambda a: a @ y, 'jac': lambda a: y}],
                method='SLSQP',
                options={'ftol': 1e-12, 'maxiter': 1000},
            )
            result = SvmRbf.solve(KernelRows(X, 0.5, 100), y, C, tol=1e-5, max_iter=100_000)
            self.assertAlmostEqual(SvmRbf.dual_objective(K, y, result.alpha), oracle.fun, delta=1e-3)

    def test_row_cache_gives_same_solution(self):
        X, y, C = self.instance(40, 3)
        full = SvmRbf.solve(KernelRows(X, 0.5, 100), y, C, tol=1e-4, max_iter=100_000)
        cached = SvmRbf.solve(KernelRows(X, 0.5, 8), y, C, tol=1e-4, max_iter=100_000)
        assert_allclose(cached.alpha, full.alpha, atol=1e-12)

    def test_solves_xor(self):
        X, y = xor(100)
        X_test, y_test = xor(100, seed=1)
        model = fit(ModelSpec('svm_rbf'), X, y)
        self.assertGreaterEqual(accuracy(model, X_test, y_test), 0.95)

    def test_one_vs_rest_multiclass(self):
        rng = np.random.default_rng(0)
        centres = {'BALL': [0, 4], 'IR': [4, 0], 'OR': [-4, 0]}
        X = np.vstack([rng.normal(size=(40, 2)) + c for c in centres.values()])
        y = [label for label in centres for _ in range(40)]
        model = fit(ModelSpec('svm_rbf'), X, y)
        self.assertEqual(predict_scores(model, X).shape, (120, 3))
        self.assertGreaterEqual(accuracy(model, X, y), 0.95)

    def test_training_cap_reported(self):
        X, y = blobs(100, offset=1.0)
        with self.assertLogs('classifiers', 'WARNING'):
            model = fit(ModelSpec('svm_rbf', {'max_train': 50}), X, y)
        info = model.fit_info
        self.assertEqual((info['train_cap'], info['n_used'], info['subsampled']), (50, 50, True))


class RandomForestTests(SimpleTestCase):

    def test_determinism_given_seed(self):
        X, y = blobs(80, offset=1.0)
        X_new = np.random.default_rng(7).normal(size=(200, 2))
        first = fit(ModelSpec('random_forest', {'n_trees': 15}, seed=4), X, y)
        second = fit(ModelSpec('random_forest', {'n_trees': 15}, seed=4), X, y)
        other = fit(ModelSpec('random_forest', {'n_trees': 15}, seed=5), X, y)
        for a, b in zip(first.state['trees'], second.state['trees']):
            assert_array_equal(a['threshold'], b['threshold'])
        assert_array_equal(predict_scores(first, X_new), predict_scores(second, X_new))
        self.assertFalse(np.array_equal(predict_scores(first, X_new), predict_scores(other, X_new)))

    def test_out_of_bag_error_tracks_held_out(self):
        X, y = blobs(300, offset=1.0)
        X_test, y_test = blobs(1000, offset=1.0, seed=1)
        model = fit(ModelSpec('random_forest', {'n_trees': 50}, seed=0), X, y)
        held_out = 1.0 - accuracy(model, X_test, y_test)
        self.assertAlmostEqual(model.fit_info['oob_error'], held_out, delta=0.05)

    def test_pure_leaves_fit_training_data(self):
        X, y = xor(25)
        model = fit(ModelSpec('random_forest', {'n_trees': 10}), X, y)
        self.assertGreaterEqual(accuracy(model, X, y), 0.99)

    def test_depth_limit(self):
        X, y = xor(25)
        model = fit(ModelSpec('random_forest', {'n_trees': 5, 'max_depth': 1}), X, y)
        for tree in model.state['trees']:
            self.assertLessEqual(tree['feature'].size, 3)


class MlpTests(SimpleTestCase):

    def test_gradient_check(self):
        rng = np.random.default_rng(0)
        params = BatchNormMLP.init_params(2, [8, 8], 2, seed=0)
        for key in params:
            if key.startswith(('gamma', 'beta', 'b_out')):
                params[key] = params[key] + rng.normal(scale=0.1, size=params[key].shape)
        X = rng.normal(size=(16, 2))
        y = np.array([0, 1] * 8)
        weights = rng.uniform(0.5, 2.0, size=16)
        _, grads, _ = BatchNormMLP.loss_and_gradients(params, X, y, weights, 1e-5)

        h = 1e-5
        for key, value in params.items():
            for index in np.ndindex(value.shape):
                shifted = {k: v.copy() for k, v in params.items()}
                shifted[key][index] = value[index] + h
                up = BatchNormMLP.loss_and_gradients(shifted, X, y, weights, 1e-5)[0]
                shifted[key][index] = value[index] - h
                down = BatchNormMLP.loss_and_gradients(shifted, X, y, weights, 1e-5)[0]
                numeric = (up - down) / (2 * h)
                analytic = grads[key][index]
                scale = max(abs(numeric), abs(analytic), 1e-5)
                self.assertLessEqual(abs(numeric - analytic) / scale, 1e-4, f'{key}{index}')

    def test_solves_xor(self):
        X, y = xor(100)
        X_val, y_val = xor(25, seed=2)
        X_test, y_test = xor(100, seed=1)
        spec = ModelSpec('mlp', {'hidden': [32, 16], 'batch_size': 32, 'max_epochs': 100, 'patience': 20})
        model = fit(spec, X, y, X_val, y_val)
        self.assertGreaterEqual(accuracy(model, X_test, y_test), 0.95)
        self.assertEqual(model.fit_info['monitor'], 'val_f_macro')
        self.assertLessEqual(model.fit_info['best_epoch'], model.fit_info['epochs_run'])

    def test_without_validation_monitors_training_loss(self):
        X, y = blobs(60)
        spec = ModelSpec('mlp', {'hidden': [8], 'batch_size': 32, 'max_epochs': 40, 'patience': 3})
        model = fit(spec, X, y)
        self.assertEqual(model.fit_info['monitor'], 'train_loss')
        self.assertLessEqual(model.fit_info['best_epoch'], model.fit_info['epochs_run'])
        self.assertGreaterEqual(accuracy(model, X, y), 0.95)

    def test_hidden_layers_have_no_bias(self):
        params = BatchNormMLP.init_params(5, [4, 3], 2, seed=0)
        self.assertEqual(sorted(params), ['W0', 'W1', 'W_out', 'b_out', 'beta0', 'beta1', 'gamma0', 'gamma1'])

    def test_trailing_single_row_batch_merged(self):
        batches = BatchNormMLP._batches(np.arange(65), 32)
        self.assertEqual([b.size for b in batches], [32, 33])


class TrainCommandTests(SimpleTestCase):

    def test_train_writes_model(self):
        rng = np.random.default_rng(0)
        samples, assignments = [], {}
        for b, (bearing, label) in enumerate([('1_1', 'OR'), ('1_2', 'IR'), ('2_1', 'OR'), ('2_2', 'IR')]):
            centre = 3.0 if label == 'OR' else -3.0
            for seq in range(10):
                samples.append(FeatureSample(bearing, '1', seq, 0, 0.0, 'RFFT', rng.normal(size=4) + centre))
            assignments[bearing] = LabelAssignment(
                bearing, tuple(SampleLabel(seq, None, label) for seq in range(10)), 'declared',
            )
        split = split_by_bearing(samples, {'train': ['1_1', '1_2'], 'val': [], 'test': ['2_1', '2_2']})
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            save_features(samples, tmp / 'feats.csv', WindowSpec(2048, 0.25))
            save_labels(assignments, tmp / 'labels.csv')
            save_split(split, tmp / 'split.csv')
            write_json(tmp / 'spec.json', {'kind': 'gaussian_nb'})
            out = StringIO()
            call_command(
                'train', '--spec', str(tmp / 'spec.json'), '--features', str(tmp / 'feats.csv'),
                '--labels', str(tmp / 'labels.csv'), '--split', str(tmp / 'split.csv'),
                '--out', str(tmp / 'model.json'), stdout=out,
            )
            model = load_model(tmp / 'model.json')
        self.assertEqual(model.classes, ('IR', 'OR'))
        self.assertEqual(model.fit_info['n_train'], 20)
        self.assertIn('Wrote gaussian_nb model', out.getvalue())
