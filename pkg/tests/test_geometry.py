import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from gapcomp.errors import ParameterError
from gapcomp.geometry import (
    all_modality_gaps,
    explained_variance_spectrum,
    fisher_from_arrays,
    fisher_ratio,
    modality_centroid,
    modality_gap,
    scatter_traces,
)
from gapcomp.store import EmbeddingStore

from conftest import make_store
from oracles import scatter_matrices_loops


def store_from(vectors_by_modality, labels=None):
    """Paired store where row i of every modality array belongs to concept i."""
    M = len(vectors_by_modality)
    N, D = np.asarray(vectors_by_modality[0]).shape
    vectors = np.stack([np.asarray(v, dtype=float) for v in vectors_by_modality], axis=1).reshape(N * M, D)
    labels = np.arange(N) if labels is None else np.asarray(labels)
    return EmbeddingStore(D, [f"m{m}" for m in range(M)], np.repeat(np.arange(N), M), np.tile(np.arange(M), N),
                          np.repeat(labels, M), [frozenset()] * (N * M), vectors)


# centroid and gap

def test_centroid_of_constant_modality():
    v = [0.6, 0.8]
    assert np.allclose(modality_centroid(store_from([[v, v, v], [[1, 0]] * 3]), 0), v)


def test_centroid_cancels():
    np.testing.assert_array_equal(modality_centroid(store_from([[[1, 0], [-1, 0]], [[0, 1], [0, 1]]]), 0), [0, 0])


def test_centroid_naive_sum(rng):
    X = rng.normal(size=(3, 4))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    expected = [sum(X[i][j] for i in range(3)) / 3 for j in range(4)]
    np.testing.assert_allclose(modality_centroid(store_from([X, X[::-1]]), 0), expected, atol=1e-15)


def test_gap_antipodal():
    assert modality_gap(store_from([[[1, 0]] * 4, [[-1, 0]] * 4]), 0, 1).gap == 2.0


def test_gap_self_zero(store):
    assert modality_gap(store, 1, 1).gap == 0.0


def test_missing_modality():
    with pytest.raises(ParameterError):
        modality_centroid(store_from([[[1, 0]], [[0, 1]]]), 5)


def test_all_gaps_lists_pairs(rng):
    assert [g.modality_pair for g in all_modality_gaps(make_store(rng, M=3))] == [(0, 1), (0, 2), (1, 2)]
    assert all_modality_gaps(make_store(rng, M=1)) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gap_symmetric_and_triangle(seed):
    s = make_store(np.random.default_rng(seed), n_concepts=5, M=3, D=4)
    g = {(a, b): modality_gap(s, a, b).gap for a in range(3) for b in range(3)}
    assert g[0, 1] == g[1, 0]
    assert g[0, 2] <= g[0, 1] + g[1, 2] + 1e-12


# Fisher ratio

def test_fisher_infinite_for_zero_within():
    s = store_from([[[1, 0], [0, 1]], [[1, 0], [0, 1]]])
    assert fisher_ratio(s).fisher == float("inf")


def test_fisher_zero_for_coincident_means():
    X = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    assert fisher_from_arrays(X, [0, 0, 1, 1]).fisher == 0.0


def test_fisher_zero_over_zero():
    assert fisher_from_arrays(np.ones((4, 2)), [0, 0, 1, 1]).fisher == 0.0


def test_fisher_two_cluster_oracle():
    X = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    labels = [0, 0, 1, 1]
    SB, SW = scatter_matrices_loops(X, labels)
    report = fisher_from_arrays(X, labels)
    assert report.trace_between == pytest.approx(np.trace(SB), abs=1e-12)
    assert report.trace_within == pytest.approx(np.trace(SW), abs=1e-12)
    assert (np.trace(SB), np.trace(SW)) == pytest.approx((2.0, 2.0))
    assert report.fisher == pytest.approx(1.0)


def test_fisher_random_against_loops(rng):
    X = rng.normal(size=(30, 5))
    labels = rng.integers(0, 4, size=30)
    SB, SW = scatter_matrices_loops(X, labels)
    report = fisher_from_arrays(X, labels)
    assert report.fisher == pytest.approx(np.trace(SB) / np.trace(SW), rel=1e-12)


def test_fisher_by_modality(store):
    report = fisher_ratio(store, "modality")
    assert report.num_clusters == 2
    assert report.fisher == fisher_from_arrays(store.vectors, store.modality_ids).fisher


def test_fisher_single_cluster_rejected(rng):
    with pytest.raises(ParameterError):
        fisher_ratio(make_store(rng, n_classes=1))


def test_fisher_assignment_length_checked(store):
    with pytest.raises(ParameterError):
        fisher_ratio(store, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_total_scatter_identity(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(int(r.integers(4, 40)), int(r.integers(1, 9))))
    labels = r.integers(0, 3, size=len(X))
    between, within, _ = scatter_traces(X, labels)
    assert abs(between + within - np.sum((X - X.mean(axis=0)) ** 2)) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fisher_rotation_invariant(seed):
    s = make_store(np.random.default_rng(seed), n_concepts=8, D=6)
    Q = ortho_group.rvs(6, random_state=seed)
    rotated = fisher_from_arrays(s.vectors @ Q, s.class_labels).fisher
    assert abs(rotated - fisher_ratio(s).fisher) <= 1e-8


# spectrum

def test_spectrum_rank_one(rng):
    X = np.outer(rng.normal(size=10), rng.normal(size=4))
    assert abs(explained_variance_spectrum(X).cumulative_fraction[0] - 1.0) <= 1e-9


def test_spectrum_isotropic():
    spec = explained_variance_spectrum(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float))
    assert spec.eigenvalues[0] == pytest.approx(spec.eigenvalues[1])
    np.testing.assert_allclose(spec.cumulative_fraction, [0.5, 1.0], atol=1e-12)
    assert spec.components_for(0.5) == 1 and spec.components_for(0.9) == 2


def test_spectrum_matches_eigvalsh(rng):
    s = make_store(rng, n_concepts=10, M=2, D=8)
    oracle = np.sort(np.linalg.eigvalsh(np.cov(s.vectors, rowvar=False)))[::-1]
    np.testing.assert_allclose(explained_variance_spectrum(s).eigenvalues, oracle, atol=1e-8)


def test_spectrum_more_dims_than_records(rng):
    spec = explained_variance_spectrum(rng.normal(size=(3, 6)))
    assert spec.eigenvalues.shape == (6,)
    assert np.all(spec.eigenvalues[2:] < 1e-12)


def test_spectrum_needs_two_records():
    with pytest.raises(ParameterError):
        explained_variance_spectrum(np.ones((1, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cumulative_monotone_ends_at_one(seed):
    r = np.random.default_rng(seed)
    spec = explained_variance_spectrum(r.normal(size=(int(r.integers(2, 20)), int(r.integers(1, 10)))))
    assert np.all(np.diff(spec.cumulative_fraction) >= 0)
    assert abs(spec.cumulative_fraction[-1] - 1.0) <= 1e-9
    assert np.all(np.diff(spec.eigenvalues) <= 1e-12)
