"""Downstream evaluation: stratified splits, classifiers, top-k, mAP and micro-F1."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compression import LabeledVectors
from .errors import DegenerateCentroidError, ParameterError, TrainingError
from .store import normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    min_per_class: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError("train_fraction must lie in (0, 1)")
        if self.min_per_class < 2:
            raise ParameterError("min_per_class must be >= 2 so both splits are non-empty")


@dataclass
class Split:
    train: LabeledVectors
    test: LabeledVectors
    dropped_classes: list[int] = field(default_factory=list)


def split_train_test(data: LabeledVectors, spec: SplitSpec) -> Split:
    """Per-class stratified split; classes below ``min_per_class`` are dropped."""
    rng = np.random.default_rng(spec.seed)
    train_idx, test_idx, dropped = [], [], []
    for c in np.unique(data.class_labels):
        members = np.flatnonzero(data.class_labels == c)
        if len(members) < spec.min_per_class:
            dropped.append(int(c))
            continue
        members = rng.permutation(members)
        n_train = min(max(int(round(spec.train_fraction * len(members))), 1), len(members) - 1)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    if len(train_idx) < 2:
        raise ParameterError(f"only {len(train_idx)} classes have >= {spec.min_per_class} samples")
    if dropped:
        logger.info("dropped %d classes below %d samples", len(dropped), spec.min_per_class)
    return Split(data.take(np.sort(np.concatenate(train_idx))), data.take(np.sort(np.concatenate(test_idx))), dropped)


def _log_softmax(S):
    S = S - S.max(axis=1, keepdims=True)
    return S - np.log(np.exp(S).sum(axis=1, keepdims=True))


@dataclass
class LinearClassifier:
    weight: np.ndarray  # (C, T)
    bias: np.ndarray  # (C,)
    classes: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def scores(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weight.T + self.bias


def _fit_gd(loss_grad, W, b, learning_rate, epochs):
    """Full-batch gradient descent; the step halves whenever the loss would rise."""
    loss, gW, gb = loss_grad(W, b)
    history = [loss]
    step = learning_rate
    for _ in range(epochs):
        while True:
            W_new, b_new = W - step * gW, b - step * gb
            new_loss, new_gW, new_gb = loss_grad(W_new, b_new)
            if not np.isfinite(new_loss):
                raise TrainingError("classifier loss became non-finite")
            if new_loss <= loss + 1e-12 or step < 1e-12:
                break
            step *= 0.5
        W, b, loss, gW, gb = W_new, b_new, new_loss, new_gW, new_gb
        history.append(loss)
    return W, b, history


def train_linear(train: LabeledVectors, learning_rate: float = 1.0, epochs: int = 300,
                 seed: int = 0, l2: float = 0.0) -> LinearClassifier:
    """Multinomial logistic regression fit by full-batch gradient descent."""
    classes, y = np.unique(train.class_labels, return_inverse=True)
    if len(classes) < 2:
        raise ParameterError("need at least 2 classes")
    X = train.vectors
    n = len(X)
    onehot = np.eye(len(classes))[y.reshape(-1)]
    rng = np.random.default_rng(seed)
    W0 = 0.01 * rng.normal(size=(len(classes), X.shape[1]))

    def loss_grad(W, b):
        logp = _log_softmax(X @ W.T + b)
        loss = -np.mean(np.sum(onehot * logp, axis=1)) + 0.5 * l2 * np.sum(W * W)
        G = (np.exp(logp) - onehot) / n
        return loss, G.T @ X + l2 * W, G.sum(axis=0)

    W, b, history = _fit_gd(loss_grad, W0, np.zeros(len(classes)), learning_rate, epochs)
    return LinearClassifier(W, b, classes, history)


def train_one_vs_rest(train: LabeledVectors, learning_rate: float = 1.0, epochs: int = 300,
                      seed: int = 0, l2: float = 0.0) -> LinearClassifier:
    """Independent logistic scores per label; samples with no labels are ignored."""
    keep = np.array([len(s) > 0 for s in train.multi_labels], dtype=bool)
    sets = [s for s, k in zip(train.multi_labels, keep) if k]
    classes = np.array(sorted(set().union(*sets)) if sets else [], dtype=np.int64)
    if len(classes) < 1:
        raise ParameterError("no multi-label annotations to train on")
    X = train.vectors[keep]
    Y = label_matrix(sets, classes)
    n = len(X)
    rng = np.random.default_rng(seed)
    W0 = 0.01 * rng.normal(size=(len(classes), X.shape[1]))

    def loss_grad(W, b):
        S = X @ W.T + b
        # log(1 + e^s) - y s, stable
        loss = np.mean(np.sum(np.logaddexp(0.0, S) - Y * S, axis=1)) + 0.5 * l2 * np.sum(W * W)
        G = (sigmoid(S) - Y) / n
        return loss, G.T @ X + l2 * W, G.sum(axis=0)

    W, b, history = _fit_gd(loss_grad, W0, np.zeros(len(classes)), learning_rate, epochs)
    return LinearClassifier(W, b, classes, history)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def label_matrix(label_sets: Sequence[frozenset[int]], classes) -> np.ndarray:
    col = {int(c): j for j, c in enumerate(classes)}
    Y = np.zeros((len(label_sets), len(classes)))
    for i, s in enumerate(label_sets):
        for c in s:
            if c in col:
                Y[i, col[c]] = 1.0
    return Y


def rank_classes(scores: np.ndarray) -> np.ndarray:
    """Column indices by descending score; ties go to the lower index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), axis=1, kind="stable")


def topk_from_scores(scores, true_labels, classes, k: int) -> float:
    if k < 1:
        raise ParameterError("k must be >= 1")
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if len(true_labels) == 0:
        raise ParameterError("empty test set")
    top = np.asarray(classes)[rank_classes(scores)[:, :k]]
    return float(np.mean(np.any(top == np.asarray(true_labels)[:, None], axis=1)))


def topk_accuracy(classifier, test: LabeledVectors, k: int) -> float:
    if len(test) == 0:
        raise ParameterError("empty test set")
    return topk_from_scores(classifier.scores(test.vectors), test.class_labels, classifier.classes, k)


@dataclass
class NearestCentroidClassifier:
    centroids: np.ndarray  # (C, T), unit rows
    classes: np.ndarray

    @classmethod
    def fit(cls, train: LabeledVectors) -> "NearestCentroidClassifier":
        classes = np.unique(train.class_labels)
        means = np.stack([train.vectors[train.class_labels == c].mean(axis=0) for c in classes])
        return cls(normalize_rows(means, what="class centroid", ids=classes.tolist(), exc=DegenerateCentroidError), classes)

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return (X / np.where(norms == 0, 1.0, norms)) @ self.centroids.T


def nearest_centroid_classify(train: LabeledVectors, test: LabeledVectors, k: int = 1) -> float:
    return topk_accuracy(NearestCentroidClassifier.fit(train), test, k)


def average_precision(scores, relevance) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=bool)
    if not relevance.any():
        raise ParameterError("average precision needs at least one relevant sample")
    order = np.argsort(-scores, kind="stable")
    hits = relevance[order]
    positions = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(positions) + 1) / positions
    return float(precision.mean())


def mean_average_precision(score_matrix, relevance_matrix) -> tuple[float, list[int]]:
    """Unweighted mean of per-column AP; returns (mAP, skipped column indices)."""
    S = np.asarray(score_matrix, dtype=np.float64)
    R = np.asarray(relevance_matrix, dtype=bool)
    aps, skipped = [], []
    for j in range(S.shape[1]):
        if R[:, j].any():
            aps.append(average_precision(S[:, j], R[:, j]))
        else:
            skipped.append(j)
    if not aps:
        raise ParameterError("no class has a positive sample")
    return float(np.mean(aps)), skipped


def threshold_label_sets(probabilities, classes, threshold: float = 0.5) -> list[frozenset[int]]:
    P = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    classes = np.asarray(classes)
    return [frozenset(int(c) for c in classes[row >= threshold]) for row in P]


def micro_f1(predicted: Sequence[frozenset[int]], truth: Sequence[frozenset[int]]) -> float:
    """2TP / (2TP + FP + FN) pooled over all (sample, label) pairs; 0 if undefined."""
    if len(predicted) != len(truth):
        raise ParameterError("predictions and truth must align")
    tp = fp = fn = 0
    for p, t in zip(predicted, truth):
        p, t = set(p), set(t)
        tp += len(p & t)
        fp += len(p - t)
        fn += len(t - p)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def evaluate_multilabel(classifier: LinearClassifier, test: LabeledVectors, threshold: float = 0.5):
    """Return (mAP, micro-F1) on the labelled part of ``test``."""
    keep = [i for i, s in enumerate(test.multi_labels) if s]
    if not keep:
        raise ParameterError("test split has no multi-label annotations")
    test = test.take(keep)
    probs = sigmoid(classifier.scores(test.vectors))
    Y = label_matrix(test.multi_labels, classifier.classes)
    mAP, _ = mean_average_precision(probs, Y)
    f1 = micro_f1(threshold_label_sets(probs, classifier.classes, threshold), test.multi_labels)
    return mAP, f1
