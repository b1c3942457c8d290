"""Latent-space geometry: modality gap, Fisher ratio, explained-variance spectrum."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .store import EmbeddingStore


@dataclass(frozen=True)
class GapReport:
    modality_pair: tuple[int, int]
    gap: float


@dataclass(frozen=True)
class FisherReport:
    fisher: float
    trace_between: float
    trace_within: float
    num_clusters: int


@dataclass(frozen=True)
class VarianceSpectrum:
    eigenvalues: np.ndarray
    cumulative_fraction: np.ndarray

    def components_for(self, fraction: float) -> int:
        """Smallest number of leading components explaining ``fraction`` of the variance."""
        return int(np.searchsorted(self.cumulative_fraction, fraction - 1e-12) + 1)


def modality_centroid(store: EmbeddingStore, m: int) -> np.ndarray:
    # Mean rather than sum: the gap is a distance between centroids.
    vectors = store.vectors[store.modality_ids == m]
    if len(vectors) == 0:
        raise ParameterError(f"modality {m} has no records")
    return vectors.mean(axis=0)


def modality_gap(store: EmbeddingStore, m: int, n: int) -> GapReport:
    gap = np.linalg.norm(modality_centroid(store, m) - modality_centroid(store, n))
    return GapReport((m, n), float(gap))


def all_modality_gaps(store: EmbeddingStore) -> list[GapReport]:
    present = sorted(set(store.modality_ids.tolist()))
    return [modality_gap(store, m, n) for m, n in itertools.combinations(present, 2)]


def scatter_traces(vectors: np.ndarray, clusters) -> tuple[float, float, int]:
    """Traces of the between- and within-cluster scatter matrices.

    Computed from squared norms; the D x D matrices are never formed.
    """
    X = np.asarray(vectors, dtype=np.float64)
    _, inverse, counts = np.unique(np.asarray(clusters), return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    C = len(counts)
    sums = np.zeros((C, X.shape[1]))
    np.add.at(sums, inverse, X)
    means = sums / counts[:, None]
    mu = X.mean(axis=0)
    between = float(np.sum(counts * np.sum((means - mu) ** 2, axis=1)))
    within = float(np.sum((X - means[inverse]) ** 2))
    return between, within, C


def fisher_ratio(store: EmbeddingStore, cluster_assignment=None) -> FisherReport:
    """Fisher ratio of the pooled embeddings.

    ``cluster_assignment`` is None (class labels), ``"modality"``, or an array
    giving one cluster id per record.
    """
    if cluster_assignment is None:
        clusters = store.class_labels
    elif isinstance(cluster_assignment, str) and cluster_assignment == "modality":
        clusters = store.modality_ids
    else:
        clusters = np.asarray(cluster_assignment)
        if len(clusters) != len(store):
            raise ParameterError("cluster_assignment must give one id per record")
    return fisher_from_arrays(store.vectors, clusters)


def fisher_from_arrays(vectors, clusters) -> FisherReport:
    if len(np.unique(np.asarray(clusters))) < 2:
        raise ParameterError("Fisher ratio needs at least 2 clusters")
    between, within, C = scatter_traces(vectors, clusters)
    if within > 0:
        fisher = between / within
    elif between > 0:
        fisher = math.inf
    else:
        fisher = 0.0
    return FisherReport(fisher, between, within, C)


def explained_variance_spectrum(store_or_vectors) -> VarianceSpectrum:
    """Sample-covariance eigenvalues (descending) and their cumulative fractions.

    Uses the singular values of the centered data, so the covariance matrix
    itself is never formed.
    """
    X = store_or_vectors.vectors if isinstance(store_or_vectors, EmbeddingStore) else np.asarray(store_or_vectors, dtype=np.float64)
    if len(X) < 2:
        raise ParameterError("explained variance needs at least 2 records")
    centered = X - X.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    eig = np.zeros(X.shape[1])
    eig[: len(s)] = s**2 / (len(X) - 1)
    total = eig.sum()
    if total > 0:
        cumulative = np.cumsum(eig) / total
        cumulative[-1] = 1.0
    else:
        cumulative = np.ones_like(eig)
    return VarianceSpectrum(eig, np.maximum.accumulate(cumulative))
