import numpy as np
import pytest

from gapcomp.store import EmbeddingStore


def make_store(rng, n_concepts=6, M=2, D=5, n_classes=3, normalized=True, multi=True):
    """Fully paired random store; class of concept i is i % n_classes."""
    concept_ids = np.repeat(np.arange(n_concepts), M)
    modality_ids = np.tile(np.arange(M), n_concepts)
    labels = concept_ids % n_classes
    vectors = rng.normal(size=(n_concepts * M, D))
    if normalized:
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    multi_labels = [frozenset({int(c) % 4, (int(c) + 1) % 4}) if multi else frozenset() for c in concept_ids]
    return EmbeddingStore(D, [f"m{m}" for m in range(M)], concept_ids, modality_ids, labels,
                          multi_labels, vectors, normalized=normalized)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def store(rng):
    return make_store(rng)
