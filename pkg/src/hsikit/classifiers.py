"""Downstream evaluation heads and the random-feature prior test.

Brute-force k-nearest-neighbors and a Gini random forest are implemented
directly so that tie-breaking (smallest class id) and seeded determinism are
exact contract properties. The MLP probe trains a small dense classifier on
top of a frozen feature extractor, verifying via checksum that the extractor
was never touched. ``chance_f1_oracle`` estimates the macro-F1 a uniformly
random classifier would reach on a given test histogram.
"""

from __future__ import annotations

from dataclasses import dataclass
import hashlib

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .nets import DivergenceError, Gelu, Linear, Param, SGDMomentum
from . import metrics as _metrics


@dataclass
class LabeledSet:
    """Feature matrix with labels in 1..c and a split tag."""

    features: np.ndarray
    labels: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (N, D) with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels.size and self.labels.min() < 1:
            raise ValueError("labels must be >= 1")

    def __len__(self) -> int:
        return self.labels.size


# -- k nearest neighbors ---------------------------------------------------------


class NearestNeighborClassifier(BaseEstimator, ClassifierMixin):
    """Brute-force Euclidean KNN; majority vote, ties to the smallest class id.

    Equidistant training points are ranked by training index (stable sort),
    so predictions are fully deterministic.
    """

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("training set must be a non-empty (N, D) matrix")
        if self.k > X.shape[0]:
            raise ValueError(f"k={self.k} exceeds the {X.shape[0]} training points")
        self.X_ = X
        self.y_ = y
        self.classes_ = np.unique(y)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "X_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        train_sq = (self.X_ ** 2).sum(axis=1)
        out = np.empty(X.shape[0], dtype=np.int64)
        class_index = {c: i for i, c in enumerate(self.classes_)}
        y_idx = np.array([class_index[c] for c in self.y_])
        chunk = max(1, int(2e7 // max(self.X_.shape[0], 1)))
        for start in range(0, X.shape[0], chunk):
            q = X[start : start + chunk]
            d2 = (q ** 2).sum(axis=1)[:, None] - 2.0 * q @ self.X_.T + train_sq[None, :]
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            votes = np.zeros((q.shape[0], self.classes_.size), dtype=np.int64)
            np.add.at(votes, (np.arange(q.shape[0])[:, None], y_idx[order]), 1)
            out[start : start + chunk] = self.classes_[np.argmax(votes, axis=1)]
        return out


def knn_fit_predict(train: LabeledSet, query_features: np.ndarray, k: int = 5) -> np.ndarray:
    return NearestNeighborClassifier(k=k).fit(train.features, train.labels).predict(query_features)


# -- random forest ---------------------------------------------------------------


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    histogram: np.ndarray  # (n_nodes, n_classes), filled for leaves


def _best_split(X, y_idx, sample_idx, feat_idx, n_classes, min_leaf):
    """Vectorized Gini search over candidate features; returns
    (score, feature, threshold) or None when no valid split exists."""
    F = X[np.ix_(sample_idx, feat_idx)]
    n = F.shape[0]
    order = np.argsort(F, axis=0, kind="stable")
    Fs = np.take_along_axis(F, order, axis=0)
    ys = y_idx[sample_idx][order]
    onehot = np.zeros((n, len(feat_idx), n_classes))
    np.put_along_axis(onehot, ys[:, :, None], 1.0, axis=2)
    left = np.cumsum(onehot, axis=0)[:-1]  # counts left of each boundary
    total = left[-1] + onehot[-1]
    right = total[None, :, :] - left
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    gini_left = 1.0 - ((left / n_left[:, :, None]) ** 2).sum(axis=2)
    gini_right = 1.0 - ((right / n_right[:, :, None]) ** 2).sum(axis=2)
    score = (n_left * gini_left + n_right * gini_right) / n
    valid = (Fs[1:] > Fs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score))
    pos, col = np.unravel_index(flat, score.shape)
    threshold = 0.5 * (Fs[pos, col] + Fs[pos + 1, col])
    return float(score[pos, col]), int(feat_idx[col]), float(threshold)


class RandomForest(BaseEstimator, ClassifierMixin):
    """Bagged Gini trees grown to purity (min 2 samples per leaf).

    sqrt(D) features are drawn per split; each tree votes its leaf majority
    and the forest takes the majority of votes, ties to the smallest class
    id. Retraining with the same seed is bit-identical.
    """

    def __init__(self, n_trees: int = 100, min_leaf: int = 2, seed: int = 0,
                 bootstrap: bool = True):
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.seed = seed
        self.bootstrap = bootstrap

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise ValueError("training set must contain at least 2 classes")
        class_index = {c: i for i, c in enumerate(self.classes_)}
        y_idx = np.array([class_index[c] for c in y])
        n, d = X.shape
        k = max(1, int(np.sqrt(d)))
        self.trees_ = []
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            if self.bootstrap:
                sample = rng.integers(0, n, size=n)
            else:
                sample = np.arange(n)
            self.trees_.append(
                self._grow_tree(X, y_idx, sample, k, rng)
            )
        return self

    def _grow_tree(self, X, y_idx, sample, k, rng) -> _Tree:
        c = self.classes_.size
        feature, threshold, left, right, leaf_class, hist = [], [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            leaf_class.append(-1)
            hist.append(np.zeros(c, dtype=np.int64))
            return len(feature) - 1

        stack = [(new_node(), sample)]
        while stack:
            node, idx = stack.pop()
            counts = np.bincount(y_idx[idx], minlength=c)
            hist[node] = counts
            pure = counts.max() == idx.size
            split = None
            if not pure and idx.size >= 2 * self.min_leaf:
                feats = rng.permutation(X.shape[1])[:k]
                split = _best_split(X, y_idx, idx, np.sort(feats), c, self.min_leaf)
            if split is None:
                leaf_class[node] = int(np.argmax(counts))
                continue
            _, f, thr = split
            feature[node] = f
            threshold[node] = thr
            mask = X[idx, f] < thr
            left_id, right_id = new_node(), new_node()
            left[node] = left_id
            right[node] = right_id
            stack.append((right_id, idx[~mask]))
            stack.append((left_id, idx[mask]))
        return _Tree(
            feature=np.array(feature),
            threshold=np.array(threshold),
            left=np.array(left),
            right=np.array(right),
            leaf_class=np.array(leaf_class),
            histogram=np.stack(hist),
        )

    def _tree_predict(self, tree: _Tree, X) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if tree.leaf_class[node] >= 0:
                out[idx] = tree.leaf_class[node]
                continue
            mask = X[idx, tree.feature[node]] < tree.threshold[node]
            stack.append((tree.left[node], idx[mask]))
            stack.append((tree.right[node], idx[~mask]))
        return out

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros((X.shape[0], self.classes_.size), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees_:
            votes[rows, self._tree_predict(tree, X)] += 1
        return self.classes_[np.argmax(votes, axis=1)]


def rf_fit(train: LabeledSet, n_trees: int = 100, seed: int = 0) -> RandomForest:
    return RandomForest(n_trees=n_trees, seed=seed).fit(train.features, train.labels)


def rf_predict(model: RandomForest, features: np.ndarray) -> np.ndarray:
    return model.predict(features)


# -- frozen random extractors ------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


class RandomExtractor:
    """Randomly initialized, frozen feature extractor.

    kind 'dense': two dense layers with ReLU.
    kind 'spectral-conv': two 1-D convolutions (kernel 7, stride 2) with ReLU
    followed by global average pooling over band positions.
    """

    def __init__(self, kind: str, n_bands: int, output_dim: int = 32,
                 hidden: int = 64, seed: int = 0):
        if kind not in ("dense", "spectral-conv"):
            raise ValueError("kind must be 'dense' or 'spectral-conv'")
        self.kind = kind
        self.n_bands = n_bands
        self.seed = seed
        rng = np.random.default_rng(seed)
        if kind == "dense":
            self.output_dim = output_dim
            self._w1 = rng.normal(0.0, np.sqrt(2.0 / n_bands), size=(n_bands, hidden))
            self._b1 = rng.normal(0.0, 0.1, size=hidden)
            self._w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, output_dim))
            self._b2 = rng.normal(0.0, 0.1, size=output_dim)
            self._weights = (self._w1, self._b1, self._w2, self._b2)
        else:
            c1, c2, kernel = 8, output_dim, 7
            self.output_dim = c2
            self._k1 = rng.normal(0.0, np.sqrt(2.0 / kernel), size=(c1, 1, kernel))
            self._k2 = rng.normal(0.0, np.sqrt(2.0 / (kernel * c1)), size=(c2, c1, kernel))
            self._weights = (self._k1, self._k2)

    def _conv1d(self, x, kernels, stride=2):
        # x: (N, C_in, L); kernels: (C_out, C_in, K)
        n, c_in, length = x.shape
        c_out, _, kk = kernels.shape
        n_pos = (length - kk) // stride + 1
        starts = np.arange(n_pos) * stride
        windows = np.stack([x[:, :, s : s + kk] for s in starts], axis=2)
        return np.einsum("ncpk,ock->nop", windows, kernels)

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "dense":
            return _relu(_relu(X @ self._w1 + self._b1) @ self._w2 + self._b2)
        x = X[:, None, :]
        x = _relu(self._conv1d(x, self._k1))
        x = _relu(self._conv1d(x, self._k2))
        return x.mean(axis=2)

    def weight_checksum(self) -> str:
        h = hashlib.sha256()
        for w in self._weights:
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        return h.hexdigest()


class IdentityExtractor:
    """Pass-through extractor, handy as a probe baseline."""

    def transform(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=np.float64))

    def weight_checksum(self) -> str:
        return "identity"


# -- MLP probe ---------------------------------------------------------------------


class MLPProbe(BaseEstimator, ClassifierMixin):
    """One-hidden-layer softmax classifier trained with SGD + momentum."""

    def __init__(self, hidden: int = 64, epochs: int = 80, learning_rate: float = 0.05,
                 batch_size: int = 64, seed: int = 0):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.classes_ = np.unique(y)
        class_index = {c: i for i, c in enumerate(self.classes_)}
        y_idx = np.array([class_index[c] for c in y])
        rng = np.random.default_rng(self.seed)
        self._lin1 = Linear(rng, X.shape[1], self.hidden, "probe.lin1")
        self._act = Gelu()
        self._lin2 = Linear(rng, self.hidden, self.classes_.size, "probe.lin2")
        params = self._lin1.params() + self._lin2.params()
        opt = SGDMomentum(params, lr=self.learning_rate)
        n = X.shape[0]
        for epoch in range(self.epochs):
            epoch_rng = np.random.default_rng([self.seed, 31337, epoch])
            order = epoch_rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                logits = self._lin2.forward(self._act.forward(self._lin1.forward(X[idx])))
                logits = logits - logits.max(axis=1, keepdims=True)
                expo = np.exp(logits)
                prob = expo / expo.sum(axis=1, keepdims=True)
                if not np.all(np.isfinite(prob)):
                    raise DivergenceError(f"non-finite activations at epoch {epoch}")
                grad = prob.copy()
                grad[np.arange(idx.size), y_idx[idx]] -= 1.0
                grad /= idx.size
                opt.zero_grad()
                self._lin1.backward(self._act.backward(self._lin2.backward(grad)))
                opt.step()
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        logits = self._lin2.forward(self._act.forward(self._lin1.forward(X)))
        return self.classes_[np.argmax(logits, axis=1)]


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    macro_f1: float
    checksum_before: str
    checksum_after: str

    @property
    def extractor_untouched(self) -> bool:
        return self.checksum_before == self.checksum_after


def mlp_probe(train: LabeledSet, val: LabeledSet, extractor, hidden: int = 64,
              epochs: int = 80, learning_rate: float = 0.05, seed: int = 0) -> ProbeResult:
    """Train a dense classifier on frozen extractor outputs, score on val."""
    before = extractor.weight_checksum()
    probe = MLPProbe(hidden=hidden, epochs=epochs, learning_rate=learning_rate, seed=seed)
    probe.fit(extractor.transform(train.features), train.labels)
    predicted = probe.predict(extractor.transform(val.features))
    after = extractor.weight_checksum()
    n_classes = int(max(val.labels.max(), predicted.max()))
    cm = _metrics.confusion_matrix(val.labels, predicted, n_classes)
    return ProbeResult(
        accuracy=_metrics.overall_accuracy(cm),
        macro_f1=_metrics.macro_f1(cm),
        checksum_before=before,
        checksum_after=after,
    )


# -- chance-level oracle -------------------------------------------------------------


@dataclass(frozen=True)
class ChanceEstimate:
    macro_f1: float
    standard_error: float
    n_trials: int


def chance_f1_oracle(histogram, n_classes: int, n_trials: int = 10000,
                     seed: int = 0) -> ChanceEstimate:
    """Monte-Carlo macro-F1 of a classifier drawing labels uniformly from 1..c.

    The histogram gives the per-class test counts; classes with zero support
    are excluded from the macro average (matching :func:`metrics.macro_f1`).
    """
    counts = np.zeros(n_classes, dtype=np.int64)
    histogram = np.asarray(histogram, dtype=np.int64)
    counts[: histogram.size] = histogram
    if counts.sum() == 0:
        raise ValueError("histogram must be non-empty")
    supported = np.where(counts > 0)[0]
    rng = np.random.default_rng(seed)
    p_uniform = np.full(n_classes, 1.0 / n_classes)
    trial_scores = np.empty(n_trials, dtype=np.float64)
    chunk = 20000
    done = 0
    while done < n_trials:
        b = min(chunk, n_trials - done)
        pred_counts = np.zeros((b, n_classes), dtype=np.int64)
        tp = np.empty((b, supported.size), dtype=np.int64)
        for j, k in enumerate(supported):
            draws = rng.multinomial(counts[k], p_uniform, size=b)
            tp[:, j] = draws[:, k]
            pred_counts += draws
        denom = counts[supported][None, :] + pred_counts[:, supported]
        f1 = 2.0 * tp / denom
        trial_scores[done : done + b] = f1.mean(axis=1)
        done += b
    mean = float(trial_scores.mean())
    se = float(trial_scores.std(ddof=1) / np.sqrt(n_trials)) if n_trials > 1 else 0.0
    return ChanceEstimate(macro_f1=mean, standard_error=se, n_trials=n_trials)
