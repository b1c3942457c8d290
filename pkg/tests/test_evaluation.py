import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapcomp.compression import LabeledVectors
from gapcomp.errors import DegenerateCentroidError, ParameterError
from gapcomp.evaluation import (
    NearestCentroidClassifier,
    SplitSpec,
    average_precision,
    evaluate_multilabel,
    mean_average_precision,
    micro_f1,
    nearest_centroid_classify,
    split_train_test,
    threshold_label_sets,
    topk_accuracy,
    topk_from_scores,
    train_linear,
    train_one_vs_rest,
)

from oracles import average_precision_by_hand, topk_by_enumeration


def labeled(vectors, labels, multi=None):
    vectors = np.asarray(vectors, dtype=float)
    labels = np.asarray(labels)
    multi = multi if multi is not None else [frozenset()] * len(labels)
    return LabeledVectors(np.arange(len(labels)), labels, tuple(multi), vectors)


# splits

def test_split_drops_small_classes(rng):
    data = labeled(rng.normal(size=(24, 2)), [0] * 10 + [1] * 10 + [2] * 4)
    split = split_train_test(data, SplitSpec())
    assert split.dropped_classes == [2]
    assert 2 not in split.train.class_labels and 2 not in split.test.class_labels


def test_split_arithmetic(rng):
    data = labeled(rng.normal(size=(30, 2)), np.repeat([0, 1, 2], 10))
    split = split_train_test(data, SplitSpec(0.8, 5, 3))
    assert np.bincount(split.train.class_labels).tolist() == [8, 8, 8]
    assert np.bincount(split.test.class_labels).tolist() == [2, 2, 2]
    assert not set(split.train.ids) & set(split.test.ids)


def test_split_deterministic(rng):
    data = labeled(rng.normal(size=(30, 2)), np.repeat([0, 1, 2], 10))
    a, b = split_train_test(data, SplitSpec(seed=4)), split_train_test(data, SplitSpec(seed=4))
    np.testing.assert_array_equal(a.train.ids, b.train.ids)


def test_split_needs_two_classes(rng):
    with pytest.raises(ParameterError):
        split_train_test(labeled(rng.normal(size=(14, 2)), [0] * 10 + [1] * 4), SplitSpec())


# linear classifier

def separable(rng, n=40):
    X = np.vstack([rng.normal([3, 0], 0.5, size=(n, 2)), rng.normal([-3, 0], 0.5, size=(n, 2))])
    return labeled(X, np.repeat([0, 1], n))


def test_separable_classes(rng):
    split = split_train_test(separable(rng), SplitSpec(seed=1))
    clf = train_linear(split.train, epochs=200)
    assert topk_accuracy(clf, split.test, 1) == 1.0


def test_loss_non_increasing(rng):
    X = rng.normal(size=(60, 5))
    clf = train_linear(labeled(X, rng.integers(0, 4, 60)), learning_rate=50.0, epochs=100)
    assert np.all(np.diff(clf.loss_history) <= 1e-9)


def test_zero_epochs(rng):
    clf = train_linear(separable(rng), epochs=0)
    assert len(clf.loss_history) == 1
    assert 0.0 <= topk_accuracy(clf, separable(rng), 1) <= 1.0


def test_chance_level_with_shuffled_labels():
    r = np.random.default_rng(5)
    C, n_per = 20, 50
    X = r.normal(size=(C * n_per, 16))
    labels = r.permutation(np.repeat(np.arange(C), n_per))
    split = split_train_test(labeled(X, labels), SplitSpec(seed=2))
    acc = topk_accuracy(train_linear(split.train, epochs=100), split.test, 1)
    n = len(split.test)
    sigma = math.sqrt((1 / C) * (1 - 1 / C) / n)
    assert abs(acc - 1 / C) <= 3 * sigma


def test_linear_deterministic(rng):
    data = separable(rng)
    a, b = train_linear(data, seed=3, epochs=20), train_linear(data, seed=3, epochs=20)
    assert a.weight.tobytes() == b.weight.tobytes()


def test_linear_one_class(rng):
    with pytest.raises(ParameterError):
        train_linear(labeled(rng.normal(size=(5, 2)), [1] * 5))


# top-k

def test_topk_hand_case():
    scores = np.array([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0], [0.3, 0.3, 0.4]])
    truth = [1, 1, 0]
    classes = np.arange(3)
    assert topk_from_scores(scores, truth, classes, 1) == pytest.approx(1 / 3)
    assert topk_from_scores(scores, truth, classes, 2) == 1.0
    for k in (1, 2, 3):
        assert topk_from_scores(scores, truth, classes, k) == topk_by_enumeration(scores.tolist(), truth, k)


def test_topk_random_against_enumeration():
    r = np.random.default_rng(0)
    for _ in range(100):
        C = int(r.integers(2, 8))
        scores = r.integers(0, 4, size=(10, C)).astype(float)  # small ints force ties
        truth = r.integers(0, C, size=10)
        k = int(r.integers(1, C + 1))
        assert topk_from_scores(scores, truth, np.arange(C), k) == topk_by_enumeration(scores.tolist(), truth.tolist(), k)


def test_topk_k_at_least_classes(rng):
    scores = rng.normal(size=(7, 4))
    assert topk_from_scores(scores, rng.integers(0, 4, 7), np.arange(4), 4) == 1.0
    assert topk_from_scores(scores, rng.integers(0, 4, 7), np.arange(4), 9) == 1.0


def test_topk_maps_class_labels():
    # columns correspond to labels 10 and 20
    assert topk_from_scores([[0.0, 1.0]], [20], np.array([10, 20]), 1) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_topk_monotone_in_k(seed):
    r = np.random.default_rng(seed)
    scores, truth = r.normal(size=(12, 6)), r.integers(0, 6, 12)
    accs = [topk_from_scores(scores, truth, np.arange(6), k) for k in range(1, 7)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))


def test_topk_errors():
    with pytest.raises(ParameterError):
        topk_from_scores([[1.0, 0.0]], [0], np.arange(2), 0)
    with pytest.raises(ParameterError):
        topk_from_scores(np.zeros((0, 2)), [], np.arange(2), 1)


# nearest centroid

def test_nearest_centroid_exact_point():
    train = labeled([[1, 0], [0, 1], [-1, 0]], [0, 1, 2])
    assert nearest_centroid_classify(train, labeled([[0, 1]], [1]), 1) == 1.0


def test_nearest_centroid_tie_goes_low():
    train = labeled([[1, 0], [1, 0]], [3, 7])
    clf = NearestCentroidClassifier.fit(train)
    assert topk_accuracy(clf, labeled([[1, 0]], [3]), 1) == 1.0
    assert topk_accuracy(clf, labeled([[1, 0]], [7]), 1) == 0.0


def test_nearest_centroid_four_points():
    train = labeled([[1, 0.2], [1, -0.2], [-0.2, 1], [0.2, 1]], [0, 0, 1, 1])
    test = labeled([[0.9, 0.5], [0.4, 0.6], [-1, 2]], [0, 1, 1])
    c0 = np.array([1.0, 0.0])
    c1 = np.array([0.0, 1.0])
    cos = lambda a, b: float(np.dot(a, b) / np.linalg.norm(a) / np.linalg.norm(b))  # noqa: E731
    expected = [0 if cos(x, c0) >= cos(x, c1) else 1 for x in test.vectors]
    assert expected == [0, 1, 1]
    assert nearest_centroid_classify(train, test, 1) == 1.0


def test_nearest_centroid_degenerate():
    with pytest.raises(DegenerateCentroidError):
        NearestCentroidClassifier.fit(labeled([[1, 0], [-1, 0], [0, 1]], [0, 0, 1]))


# average precision and F1

def test_ap_hand_example():
    assert average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == (1 / 1 + 2 / 3) / 2


def test_ap_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0


@pytest.mark.parametrize("r", [1, 2, 5, 10])
def test_ap_single_relevant(r):
    scores = -np.arange(10.0)
    relevance = np.zeros(10, dtype=bool)
    relevance[r - 1] = True
    assert average_precision(scores, relevance) == pytest.approx(1 / r)


def test_ap_ties_by_index():
    assert average_precision([0.5, 0.5, 0.5], [0, 0, 1]) == 1 / 3
    assert average_precision([0.5, 0.5, 0.5], [1, 0, 0]) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ap_against_hand_and_monotone_transform(seed):
    r = np.random.default_rng(seed)
    scores = r.integers(0, 5, size=12).astype(float)
    relevance = r.random(12) < 0.4
    relevance[int(r.integers(12))] = True
    ap = average_precision(scores, relevance)
    assert ap == pytest.approx(average_precision_by_hand(scores.tolist(), relevance.tolist()), abs=1e-15)
    assert average_precision(np.exp(scores) * 3 + 1, relevance) == pytest.approx(ap, abs=1e-15)


def test_ap_no_relevant():
    with pytest.raises(ParameterError):
        average_precision([0.1, 0.2], [0, 0])


def test_map_skips_empty_columns():
    mAP, skipped = mean_average_precision([[0.9, 0.1, 0.3], [0.1, 0.8, 0.2]], [[1, 0, 0], [0, 1, 0]])
    assert (mAP, skipped) == (1.0, [2])


def test_map_constant_scorer_near_prior():
    r = np.random.default_rng(0)
    relevance = r.random((10_000, 3)) < np.array([0.1, 0.3, 0.5])
    mAP, _ = mean_average_precision(np.zeros((10_000, 3)), relevance)
    assert abs(mAP - 0.3) <= 0.05


def test_micro_f1_hand_example():
    f1 = micro_f1([frozenset({0}), frozenset({1, 2})], [frozenset({0, 1}), frozenset({2})])
    assert f1 == 4 / 6


def test_micro_f1_edges():
    truth = [frozenset({0, 1}), frozenset({2})]
    assert micro_f1(truth, truth) == 1.0
    assert micro_f1([frozenset(), frozenset()], truth) == 0.0
    assert micro_f1([frozenset()], [frozenset()]) == 0.0
    with pytest.raises(ParameterError):
        micro_f1([frozenset()], truth)


def test_threshold_label_sets():
    assert threshold_label_sets([[0.2, 0.5, 0.9]], np.array([4, 5, 6])) == [frozenset({5, 6})]


def test_multilabel_pipeline_recovers_labels(rng):
    # label j present when coordinate j is positive
    X = rng.normal(size=(200, 3))
    multi = [frozenset(int(j) for j in np.flatnonzero(x > 0)) for x in X]
    data = labeled(X, np.zeros(200, dtype=int), multi)
    ovr = train_one_vs_rest(data.take(np.arange(150)), epochs=300)
    mAP, f1 = evaluate_multilabel(ovr, data.take(np.arange(150, 200)))
    assert mAP > 0.95 and f1 > 0.9
