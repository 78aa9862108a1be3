"""
The classifier families.

Every learner sees standardized features and integer class indices
0..K-1 and exposes two static methods:

* ``fit(X, y, n_classes, sample_weight, params, seed, **extra) -> (state, fit_info)``
* ``scores(state, X, params, seed) -> (n, K) matrix``

Predictions are the row-wise argmax of the scores, so ties go to the lower
class index.
"""
import copy
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from core.utils import Seeding, thread_map
from metrics.engine import evaluate

logger = logging.getLogger('classifiers')


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


# ==================== Dummy ====================

class DummyStratified:
    """Guesses labels at random with the training class frequencies; ignores X."""

    @staticmethod
    def fit(X, y, n_classes, sample_weight, params, seed, **extra):
        priors = np.bincount(y, minlength=n_classes) / y.size
        return {'priors': priors}, {}

    @staticmethod
    def scores(state, X, params, seed):
        # a fixed stream per call keeps the fitted model free of mutable state
        rng = Seeding.rng(seed, Seeding.stage_key('dummy_predict'))
        draws = rng.choice(state['priors'].size, size=X.shape[0], p=state['priors'])
        return one_hot(draws, state['priors'].size)


# ==================== Gaussian naive Bayes ====================

class GaussianNB:

    @staticmethod
    def fit(X, y, n_classes, sample_weight, params, seed, **extra):
        max_var = float(np.max(X.var(axis=0))) if X.size else 0.0
        epsilon = params['var_smoothing'] * (max_var if max_var > 0 else 1.0)
        means = np.zeros((n_classes, X.shape[1]))
        variances = np.zeros((n_classes, X.shape[1]))
        mass = np.zeros(n_classes)
        for c in range(n_classes):
            rows = y == c
            means[c] = X[rows].mean(axis=0)
            variances[c] = X[rows].var(axis=0) + epsilon
            mass[c] = sample_weight[rows].sum()
        return {
            'log_prior': np.log(mass / mass.sum()),
            'means': means,
            'variances': variances,
        }, {'variance_floor': epsilon}

    @staticmethod
    def joint_log_likelihood(state, X):
        variances = state['variances']
        jll = np.empty((X.shape[0], variances.shape[0]))
        for c in range(variances.shape[0]):
            norm = -0.5 * np.sum(np.log(2.0 * np.pi * variances[c]))
            jll[:, c] = state['log_prior'][c] + norm - 0.5 * np.sum((X - state['means'][c]) ** 2 / variances[c], axis=1)
        return jll

    @staticmethod
    def scores(state, X, params, seed):
        return softmax(GaussianNB.joint_log_likelihood(state, X), axis=1)


# ==================== Logistic regression ====================

class LogisticRegression:
    """
    Multinomial logistic regression, L2 strength 1/C on the weights (not the
    intercepts), fitted by full-batch gradient descent with Armijo
    backtracking until the gradient norm drops below ``tol``.
    """

    @staticmethod
    def objective(theta, X, Y, w, C):
        d, k = X.shape[1], Y.shape[1]
        W = theta[:d * k].reshape(d, k)
        b = theta[d * k:]
        total = w.sum()
        Z = X @ W + b
        lse = logsumexp(Z, axis=1)
        loss = (np.sum(w * (lse - np.sum(Z * Y, axis=1))) + 0.5 * np.sum(W ** 2) / C) / total
        G = (np.exp(Z - lse[:, None]) - Y) * w[:, None]
        grad_W = (X.T @ G + W / C) / total
        grad_b = G.sum(axis=0) / total
        return loss, np.concatenate([grad_W.ravel(), grad_b])

    @staticmethod
    def fit(X, y, n_classes, sample_weight, params, seed, **extra):
        Y = one_hot(y, n_classes)
        C = params['C']
        theta = np.zeros(X.shape[1] * n_classes + n_classes)
        loss, grad = LogisticRegression.objective(theta, X, Y, sample_weight, C)
        initial_loss = loss
        step = 1.0
        converged = False
        iterations = 0
        for iterations in range(1, params['max_iter'] + 1):
            grad_sq = float(grad @ grad)
            if math.sqrt(grad_sq) <= params['tol']:
                converged = True
                break
            while True:
                candidate = theta - step * grad
                new_loss, new_grad = LogisticRegression.objective(candidate, X, Y, sample_weight, C)
                if new_loss <= loss - 0.5 * step * grad_sq or step < 1e-12:
                    break
                step *= 0.5
            if new_loss > loss:
                break
            theta, loss, grad = candidate, new_loss, new_grad
            step *= 2.0
        if not converged:
            converged = bool(np.linalg.norm(grad) <= params['tol'])
        if not converged:
            logger.warning(f"⚠️ Logistic regression stopped after {iterations} iterations, "
                           f"gradient norm {np.linalg.norm(grad):.2e}")
        d = X.shape[1]
        state = {'W': theta[:d * n_classes].reshape(d, n_classes), 'b': theta[d * n_classes:]}
        return state, {
            'iterations': iterations, 'converged': converged,
            'initial_loss': float(initial_loss), 'loss': float(loss),
            'gradient_norm': float(np.linalg.norm(grad)),
        }

    @staticmethod
    def scores(state, X, params, seed):
        return softmax(X @ state['W'] + state['b'], axis=1)


# ==================== RBF support vector machine ====================

def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(A, B, 'sqeuclidean'))


class KernelRows:
    """RBF kernel rows on demand: the full matrix when it fits, else an LRU row cache."""

    def __init__(self, X: np.ndarray, gamma: float, cache_rows: int):
        self.X = X
        self.gamma = gamma
        self.capacity = cache_rows
        self.full = rbf_kernel(X, X, gamma) if X.shape[0] <= cache_rows else None
        self._rows: 'OrderedDict[int, np.ndarray]' = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            return cached
        row = rbf_kernel(self.X[i:i + 1], self.X, self.gamma)[0]
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


@dataclass
class SMOResult:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool


class SvmRbf:
    """
    Soft-margin SVM dual solved by sequential minimal optimization with
    second-order working-set selection. Sample i has box constraint
    0 <= alpha_i <= C * w(y_i). K > 2 classes use one-vs-rest; scores are
    signed margins, not probabilities.
    """

    TAU = 1e-12

    @staticmethod
    def solve(kernel: KernelRows, y: np.ndarray, C: np.ndarray, tol: float, max_iter: int) -> SMOResult:
        n = y.size
        alpha = np.zeros(n)
        G = -np.ones(n)
        converged = False
        iterations = 0
        for iterations in range(1, max_iter + 1):
            up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
            low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
            v = -y * G
            if not up.any() or not low.any():
                converged = True
                break
            i = int(np.argmax(np.where(up, v, -np.inf)))
            g_max = v[i]
            g_min = float(np.min(np.where(low, v, np.inf)))
            if g_max - g_min < tol:
                converged = True
                break

            K_i = kernel.row(i)
            quad = 2.0 - 2.0 * K_i
            quad[quad <= 0] = SvmRbf.TAU
            grad_diff = g_max - v
            candidates = low & (grad_diff > 0)
            j = int(np.argmin(np.where(candidates, -(grad_diff ** 2) / quad, np.inf)))
            K_j = kernel.row(j)

            old_i, old_j = alpha[i], alpha[j]
            C_i, C_j = C[i], C[j]
            Q_ij = y[i] * y[j] * K_i[j]
            if y[i] != y[j]:
                q = max(2.0 + 2.0 * Q_ij, SvmRbf.TAU)
                delta = (-G[i] - G[j]) / q
                diff = alpha[i] - alpha[j]
                alpha[i] += delta
                alpha[j] += delta
                if diff > 0:
                    if alpha[j] < 0:
                        alpha[j], alpha[i] = 0.0, diff
                elif alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, -diff
                if diff > C_i - C_j:
                    if alpha[i] > C_i:
                        alpha[i], alpha[j] = C_i, C_i - diff
                elif alpha[j] > C_j:
                    alpha[j], alpha[i] = C_j, C_j + diff
            else:
                q = max(2.0 - 2.0 * Q_ij, SvmRbf.TAU)
                delta = (G[i] - G[j]) / q
                total = alpha[i] + alpha[j]
                alpha[i] -= delta
                alpha[j] += delta
                if total > C_i:
                    if alpha[i] > C_i:
                        alpha[i], alpha[j] = C_i, total - C_i
                elif alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if total > C_j:
                    if alpha[j] > C_j:
                        alpha[j], alpha[i] = C_j, total - C_j
                elif alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total

            d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
            G += y * (y[i] * K_i * d_i + y[j] * K_j * d_j)

        return SMOResult(alpha, SvmRbf._rho(y, alpha, G, C), iterations, converged)

    @staticmethod
    def _rho(y, alpha, G, C) -> float:
        yG = y * G
        free = (alpha > 0) & (alpha < C)
        if free.any():
            return float(yG[free].mean())
        at_upper = alpha >= C
        ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (~at_upper & (y < 0))
        ub = float(yG[ub_mask].min()) if ub_mask.any() else np.inf
        lb = float(yG[lb_mask].max()) if lb_mask.any() else -np.inf
        return (ub + lb) / 2.0

    @staticmethod
    def dual_objective(kernel_matrix: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
        Q = np.outer(y, y) * kernel_matrix
        return float(0.5 * alpha @ Q @ alpha - alpha.sum())

    @staticmethod
    def _capped_rows(y: np.ndarray, cap: int, seed: int) -> np.ndarray:
        """Class-stratified, seeded subsample of ``cap`` rows (at least one per class)."""
        n = y.size
        classes, counts = np.unique(y, return_counts=True)
        raw = counts * cap / n
        quotas = np.maximum(np.floor(raw).astype(int), 1)
        order = np.argsort(-(raw - np.floor(raw)), kind='stable')
        for index in order[:max(cap - int(quotas.sum()), 0)]:
            quotas[index] += 1
        quotas = np.minimum(quotas, counts)
        rng = Seeding.rng(seed, Seeding.stage_key('svm_cap'))
        chosen = [rng.choice(np.flatnonzero(y == c), size=int(q), replace=False) for c, q in zip(classes, quotas)]
        return np.sort(np.concatenate(chosen))

    @staticmethod
    def fit(X, y, n_classes, sample_weight, params, seed, **extra):
        n_train = X.shape[0]
        subsampled = n_train > params['max_train']
        if subsampled:
            rows = SvmRbf._capped_rows(y, params['max_train'], seed)
            X, y, sample_weight = X[rows], y[rows], sample_weight[rows]
            logger.warning(f"⚠️ SVM training capped at {X.shape[0]} of {n_train} samples")

        if params['gamma'] == 'scale':
            variance = float(X.var())
            gamma = 1.0 / (X.shape[1] * variance) if variance > 0 else 1.0
        else:
            gamma = float(params['gamma'])
        kernel = KernelRows(X, gamma, params['cache_rows'])
        box = params['C'] * sample_weight
        problems = [1] if n_classes == 2 else list(range(n_classes))

        def _one(positive: int) -> SMOResult:
            targets = np.where(y == positive, 1.0, -1.0)
            return SvmRbf.solve(kernel, targets, box, params['tol'], params['max_iter'])

        # a shared row cache is not thread safe
        results = thread_map(_one, problems, threads=1 if kernel.full is None else None)
        if not all(r.converged for r in results):
            logger.warning(f"⚠️ SMO hit the iteration cap ({params['max_iter']}) before converging")

        support = np.flatnonzero(np.any([r.alpha > 0 for r in results], axis=0))
        coef = np.array([
            (r.alpha * np.where(y == positive, 1.0, -1.0))[support]
            for r, positive in zip(results, problems)
        ]).reshape(len(problems), support.size)
        state = {
            'support_vectors': X[support],
            'dual_coef': coef,
            'rho': np.array([r.rho for r in results]),
            'gamma': gamma,
        }
        return state, {
            'train_cap': params['max_train'],
            'n_train': n_train,
            'n_used': int(X.shape[0]),
            'subsampled': subsampled,
            'n_support': int(support.size),
            'iterations': [r.iterations for r in results],
            'converged': [r.converged for r in results],
        }

    @staticmethod
    def decision_function(state, X):
        if state['support_vectors'].shape[0] == 0:
            return -np.tile(state['rho'], (X.shape[0], 1))
        kernel = rbf_kernel(X, state['support_vectors'], state['gamma'])
        return kernel @ state['dual_coef'].T - state['rho']

    @staticmethod
    def scores(state, X, params, seed):
        margins = SvmRbf.decision_function(state, X)
        if margins.shape[1] == 1:
            return np.column_stack([-margins[:, 0], margins[:, 0]])
        return margins


# ==================== Random forest ====================

class DecisionTree:
    """
    CART tree on Gini impurity stored as flat arrays; ``feature`` is -1 on
    leaves, samples with x[feature] <= threshold go left.
    """

    @staticmethod
    def _best_split(X, rows, weighted, features, n_try, min_leaf):
        totals = weighted[rows].sum(axis=0)
        total = totals.sum()
        parent = total - float(np.sum(totals ** 2)) / total
        best = None
        tried = 0
        for feature in features:
            if tried >= n_try and best is not None:
                break
            tried += 1
            values = X[rows, feature]
            order = np.argsort(values, kind='stable')
            sorted_values = values[order]
            cum = np.cumsum(weighted[rows][order], axis=0)[:-1]
            n = rows.size
            position = np.arange(1, n)
            valid = (sorted_values[:-1] < sorted_values[1:]) & (position >= min_leaf) & (n - position >= min_leaf)
            if not valid.any():
                continue
            left = cum.sum(axis=1)
            right = total - left
            with np.errstate(divide='ignore', invalid='ignore'):
                impurity = (left - np.sum(cum ** 2, axis=1) / left) + \
                           (right - np.sum((totals - cum) ** 2, axis=1) / right)
            impurity = np.where(valid & (left > 0) & (right > 0), impurity, np.inf)
            k = int(np.argmin(impurity))
            if not np.isfinite(impurity[k]) or parent - impurity[k] <= 1e-12:
                continue
            if best is None or impurity[k] < best[0]:
                lo, hi = sorted_values[k], sorted_values[k + 1]
                threshold = lo + (hi - lo) / 2.0
                if threshold >= hi:
                    threshold = lo
                best = (impurity[k], int(feature), float(threshold))
        return best

    @staticmethod
    def grow(X, y, sample_weight, n_classes, n_try, max_depth, min_leaf, rng) -> Dict[str, np.ndarray]:
        weighted = one_hot(y, n_classes) * sample_weight[:, None]
        feature: List[int] = []
        threshold: List[float] = []
        left: List[int] = []
        right: List[int] = []
        value: List[np.ndarray] = []

        def _new_node(rows):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            mass = weighted[rows].sum(axis=0)
            value.append(mass / mass.sum())
            return len(feature) - 1

        stack = [(_new_node(np.arange(y.size)), np.arange(y.size), 0)]
        while stack:
            node, rows, depth = stack.pop()
            if np.count_nonzero(value[node]) <= 1 or rows.size < 2 * min_leaf:
                continue
            if max_depth is not None and depth >= max_depth:
                continue
            split = DecisionTree._best_split(X, rows, weighted, rng.permutation(X.shape[1]), n_try, min_leaf)
            if split is None:
                continue
            _, f, t = split
            go_left = X[rows, f] <= t
            feature[node], threshold[node] = f, t
            left_rows, right_rows = rows[go_left], rows[~go_left]
            left[node] = _new_node(left_rows)
            right[node] = _new_node(right_rows)
            stack.append((right[node], right_rows, depth + 1))
            stack.append((left[node], left_rows, depth + 1))

        return {
            'feature': np.array(feature, dtype=np.int64),
            'threshold': np.array(threshold),
            'left': np.array(left, dtype=np.int64),
            'right': np.array(right, dtype=np.int64),
            'value': np.array(value),
        }

    @staticmethod
    def predict(tree, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = tree['feature'][node]
            inner = np.flatnonzero(f >= 0)
            if inner.size == 0:
                break
            at = node[inner]
            go_left = X[inner, f[inner]] <= tree['threshold'][at]
            node[inner] = np.where(go_left, tree['left'][at], tree['right'][at])
        return np.argmax(tree['value'][node], axis=1)


class RandomForest:
    """Bootstrap-bagged Gini trees; scores are the trees' vote shares."""

    @staticmethod
    def n_try(max_features, n_features: int) -> int:
        if max_features == 'sqrt':
            return max(1, int(math.sqrt(n_features)))
        if max_features == 'all':
            return n_features
        if isinstance(max_features, float):
            return max(1, int(max_features * n_features))
        return min(int(max_features), n_features)

    @staticmethod
    def fit(X, y, n_classes, sample_weight, params, seed, **extra):
        n = y.size
        n_try = RandomForest.n_try(params['max_features'], X.shape[1])

        def _tree(index: int):
            rng = Seeding.rng(seed, index)
            rows = rng.integers(0, n, size=n)
            tree = DecisionTree.grow(
                X[rows], y[rows], sample_weight[rows], n_classes,
                n_try, params['max_depth'], params['min_leaf'], rng,
            )
            out_of_bag = np.setdiff1d(np.arange(n), rows)
            return tree, out_of_bag

        grown = thread_map(_tree, range(params['n_trees']))
        votes = np.zeros((n, n_classes))
        for tree, out_of_bag in grown:
            if out_of_bag.size:
                votes[out_of_bag, DecisionTree.predict(tree, X[out_of_bag])] += 1
        scored = votes.sum(axis=1) > 0
        oob_error = float(np.mean(np.argmax(votes[scored], axis=1) != y[scored])) if scored.any() else None
        trees = [tree for tree, _ in grown]
        return {'trees': trees, 'n_classes': n_classes}, {
            'oob_error': oob_error,
            'n_nodes': int(sum(t['feature'].size for t in trees)),
            'max_features': n_try,
        }

    @staticmethod
    def scores(state, X, params, seed):
        votes = np.zeros((X.shape[0], state['n_classes']))
        rows = np.arange(X.shape[0])
        for tree in state['trees']:
            votes[rows, DecisionTree.predict(tree, X)] += 1
        return votes / len(state['trees'])


# ==================== MLP ====================

class BatchNormMLP:
    """
    input -> [linear -> batch norm -> ReLU] per hidden width -> linear -> softmax.

    Hidden linear layers carry no bias (the batch-norm shift replaces it).
    Trained with Adam on weighted softmax cross-entropy; inference uses the
    running batch-norm statistics. Early stopping keeps the epoch with the
    best validation F-macro, or the lowest training loss when no validation
    set is given.
    """

    @staticmethod
    def init_params(n_features: int, hidden, n_classes: int, seed: int) -> Dict[str, np.ndarray]:
        rng = Seeding.rng(seed, Seeding.stage_key('mlp_init'))
        params = {}
        fan_in = n_features
        for layer, width in enumerate(hidden):
            params[f'W{layer}'] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, width))
            params[f'gamma{layer}'] = np.ones(width)
            params[f'beta{layer}'] = np.zeros(width)
            fan_in = width
        params['W_out'] = rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(fan_in, n_classes))
        params['b_out'] = np.zeros(n_classes)
        return params

    @staticmethod
    def n_hidden(params) -> int:
        return sum(1 for key in params if key.startswith('gamma'))

    @staticmethod
    def forward(params, X, eps, running: Optional[Dict[str, np.ndarray]] = None):
        """Logits plus the per-layer cache; batch statistics unless ``running`` is given."""
        h = X
        caches = []
        for layer in range(BatchNormMLP.n_hidden(params)):
            a = h @ params[f'W{layer}']
            if running is None:
                mean, var = a.mean(axis=0), a.var(axis=0)
            else:
                mean, var = running[f'mean{layer}'], running[f'var{layer}']
            inv_std = 1.0 / np.sqrt(var + eps)
            x_hat = (a - mean) * inv_std
            z = params[f'gamma{layer}'] * x_hat + params[f'beta{layer}']
            caches.append((h, x_hat, inv_std, z, mean, var))
            h = np.maximum(z, 0.0)
        return h @ params['W_out'] + params['b_out'], h, caches

    @staticmethod
    def loss_and_gradients(params, X, y, weights, eps) -> Tuple[float, Dict[str, np.ndarray], list]:
        logits, h, caches = BatchNormMLP.forward(params, X, eps)
        Y = one_hot(y, logits.shape[1])
        total = weights.sum()
        lse = logsumexp(logits, axis=1)
        loss = float(np.sum(weights * (lse - np.sum(logits * Y, axis=1))) / total)

        grads = {}
        d_logits = (np.exp(logits - lse[:, None]) - Y) * weights[:, None] / total
        grads['W_out'] = h.T @ d_logits
        grads['b_out'] = d_logits.sum(axis=0)
        d_h = d_logits @ params['W_out'].T
        n = X.shape[0]
        for layer in reversed(range(len(caches))):
            h_prev, x_hat, inv_std, z, _, _ = caches[layer]
            d_z = d_h * (z > 0)
            grads[f'gamma{layer}'] = np.sum(d_z * x_hat, axis=0)
            grads[f'beta{layer}'] = d_z.sum(axis=0)
            d_xhat = d_z * params[f'gamma{layer}']
            d_a = inv_std / n * (n * d_xhat - d_xhat.sum(axis=0) - x_hat * np.sum(d_xhat * x_hat, axis=0))
            grads[f'W{layer}'] = h_prev.T @ d_a
            d_h = d_a @ params[f'W{layer}'].T
        batch_stats = [(mean, var) for _, _, _, _, mean, var in caches]
        return loss, grads, batch_stats

    @staticmethod
    def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
        batches = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
        # batch norm needs two rows
        if len(batches) > 1 and batches[-1].size < 2:
            batches[-2] = np.concatenate([batches[-2], batches.pop()])
        return batches

    @staticmethod
    def _f_macro(state, X, y, n_classes) -> float:
        predicted = np.argmax(BatchNormMLP.scores(state, X, None, None), axis=1)
        return evaluate(y.tolist(), predicted.tolist(), list(range(n_classes))).f_macro

    @staticmethod
    def fit(X, y, n_classes, sample_weight, params, seed, X_val=None, y_val=None, **extra):
        eps = params['bn_eps']
        momentum = params['bn_momentum']
        lr = params['learning_rate']
        beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
        weights = BatchNormMLP.init_params(X.shape[1], params['hidden'], n_classes, seed)
        running = {}
        for layer, width in enumerate(params['hidden']):
            running[f'mean{layer}'] = np.zeros(width)
            running[f'var{layer}'] = np.ones(width)
        first = {k: np.zeros_like(v) for k, v in weights.items()}
        second = {k: np.zeros_like(v) for k, v in weights.items()}
        use_val = X_val is not None and y_val is not None and len(y_val) > 0

        best_score, best_state, best_epoch = -np.inf, None, 0
        wait = 0
        step = 0
        epoch = 0
        for epoch in range(1, params['max_epochs'] + 1):
            rng = Seeding.rng(seed, Seeding.stage_key('mlp_epoch'), epoch)
            epoch_loss = 0.0
            batches = BatchNormMLP._batches(rng.permutation(y.size), params['batch_size'])
            for rows in batches:
                loss, grads, stats = BatchNormMLP.loss_and_gradients(weights, X[rows], y[rows], sample_weight[rows], eps)
                epoch_loss += loss * rows.size
                step += 1
                for key, grad in grads.items():
                    first[key] = beta1 * first[key] + (1.0 - beta1) * grad
                    second[key] = beta2 * second[key] + (1.0 - beta2) * grad ** 2
                    m_hat = first[key] / (1.0 - beta1 ** step)
                    v_hat = second[key] / (1.0 - beta2 ** step)
                    weights[key] = weights[key] - lr * m_hat / (np.sqrt(v_hat) + adam_eps)
                for layer, (mean, var) in enumerate(stats):
                    unbiased = var * rows.size / (rows.size - 1)
                    running[f'mean{layer}'] = momentum * running[f'mean{layer}'] + (1.0 - momentum) * mean
                    running[f'var{layer}'] = momentum * running[f'var{layer}'] + (1.0 - momentum) * unbiased

            state = {'params': weights, 'running': running, 'bn_eps': eps}
            if use_val:
                monitored = BatchNormMLP._f_macro(state, X_val, y_val, n_classes)
            else:
                monitored = -epoch_loss / y.size
            if monitored > best_score + 1e-12:
                best_score, best_state, best_epoch = monitored, copy.deepcopy(state), epoch
                wait = 0
            else:
                wait += 1
                if wait >= params['patience']:
                    break

        logger.debug(f"MLP stopped after {epoch} epochs, best epoch {best_epoch}")
        return best_state, {
            'epochs_run': epoch,
            'best_epoch': best_epoch,
            'monitor': 'val_f_macro' if use_val else 'train_loss',
            'best_val_f_macro': float(best_score) if use_val else None,
            'stopped_early': epoch < params['max_epochs'],
        }

    @staticmethod
    def scores(state, X, params, seed):
        logits, _, _ = BatchNormMLP.forward(state['params'], X, state['bn_eps'], running=state['running'])
        return softmax(logits, axis=1)


LEARNERS = {
    'dummy_stratified': DummyStratified,
    'gaussian_nb': GaussianNB,
    'logistic_regression': LogisticRegression,
    'svm_rbf': SvmRbf,
    'random_forest': RandomForest,
    'mlp': BatchNormMLP,
}
