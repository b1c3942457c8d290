"""Multimodal centroids, random feature selection and the concatenation baseline."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateCentroidError, FormatError, IntegrityError, ParameterError
from .store import EmbeddingStore, normalize_rows, read_store, save_store

logger = logging.getLogger(__name__)

PER_CONCEPT = "per_concept"
PER_CLASS = "per_class"
_GRANULARITY_CODES = {PER_CONCEPT: 1, PER_CLASS: 2}


@dataclass(frozen=True, eq=False)
class LabeledVectors:
    """One vector per entry, with the labels the downstream tasks need."""

    ids: np.ndarray
    class_labels: np.ndarray
    multi_labels: tuple[frozenset[int], ...]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def take(self, idx) -> "LabeledVectors":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, ids=self.ids[idx], class_labels=self.class_labels[idx],
                       multi_labels=tuple(self.multi_labels[i] for i in idx), vectors=self.vectors[idx])

    def with_vectors(self, vectors) -> "LabeledVectors":
        return replace(self, vectors=np.asarray(vectors, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class CentroidStore(LabeledVectors):
    granularity: str = PER_CONCEPT
    renormalized: bool = False
    skipped: tuple[int, ...] = ()


def concept_centroids(store: EmbeddingStore, granularity: str = PER_CONCEPT, classes=None) -> CentroidStore:
    """Average embeddings across modalities, one entry per concept or per class.

    For ``per_class``, ``classes`` may list the labels wanted; labels with no
    records are skipped and listed in ``skipped``.
    """
    if granularity == PER_CONCEPT:
        concepts, paired = store.paired_view()
        labels, multi = store.concept_labels()
        return CentroidStore(concepts, labels, multi, paired.mean(axis=1), granularity=PER_CONCEPT)
    if granularity != PER_CLASS:
        raise ParameterError(f"unknown granularity {granularity!r}")
    present = sorted(set(store.class_labels.tolist()))
    wanted = present if classes is None else sorted(set(int(c) for c in classes))
    kept, vectors, skipped = [], [], []
    for c in wanted:
        rows = store.class_labels == c
        if not rows.any():
            skipped.append(c)
            continue
        kept.append(c)
        vectors.append(store.vectors[rows].mean(axis=0))
    if skipped:
        logger.warning("classes without records skipped: %s", skipped)
    kept_arr = np.asarray(kept, dtype=np.int64)
    return CentroidStore(kept_arr, kept_arr.copy(), tuple(frozenset([c]) for c in kept),
                         np.asarray(vectors, dtype=np.float64).reshape(len(kept), store.dim),
                         granularity=PER_CLASS, skipped=tuple(skipped))


def renormalize_centroids(cs: CentroidStore) -> CentroidStore:
    vectors = normalize_rows(cs.vectors, what="centroid", ids=cs.ids.tolist(), exc=DegenerateCentroidError)
    return replace(cs, vectors=vectors, renormalized=True)


@dataclass(frozen=True)
class SelectionMask:
    source_dim: int
    target_dim: int
    indices: tuple[int, ...]
    seed: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if len(idx) != self.target_dim or self.target_dim > self.source_dim:
            raise ParameterError("mask size does not match target_dim")
        if len(idx) and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.source_dim):
            raise ParameterError("mask indices must be strictly increasing within [0, source_dim)")

    def to_json(self) -> str:
        return json.dumps({"D": self.source_dim, "T": self.target_dim, "seed": self.seed,
                           "indices": list(self.indices)})

    @classmethod
    def from_json(cls, text: str) -> "SelectionMask":
        try:
            obj = json.loads(text)
            return cls(int(obj["D"]), int(obj["T"]), tuple(int(i) for i in obj["indices"]), int(obj["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise FormatError(f"bad mask JSON: {exc}") from exc


def target_dim(D: int, rate: float) -> int:
    """Number of kept coordinates for a compression rate (rounded half up, at least 1)."""
    if not rate > 0:
        raise ParameterError(f"compression rate must be > 0, got {rate}")
    return max(1, int(np.floor(rate * D + 0.5)))


def make_rfs_mask(D: int, T: int, seed: int) -> SelectionMask:
    if not 1 <= T <= D:
        raise ParameterError(f"target dimension {T} outside [1, {D}]")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(D, size=T, replace=False))
    return SelectionMask(D, T, tuple(int(i) for i in indices), seed)


def apply_mask(vectors, mask: SelectionMask, renormalize: bool = False) -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float64)
    if X.shape[-1] != mask.source_dim:
        raise ParameterError(f"vector dim {X.shape[-1]} != mask source dim {mask.source_dim}")
    out = X[..., list(mask.indices)]
    return normalize_rows(out, what="masked vector") if renormalize else out


def concat_baseline(store: EmbeddingStore) -> LabeledVectors:
    """Stack every concept's modality vectors (modality-id order) into one M*D vector."""
    try:
        concepts, paired = store.paired_view()
    except IntegrityError as exc:
        raise IntegrityError(f"concatenation needs complete pairing: {exc}") from exc
    labels, multi = store.concept_labels()
    return LabeledVectors(concepts, labels, multi, paired.reshape(len(concepts), -1))


def single_modality(store: EmbeddingStore, m: int = 0) -> LabeledVectors:
    rows = np.flatnonzero(store.modality_ids == m)
    return LabeledVectors(store.concept_ids[rows], store.class_labels[rows],
                          tuple(store.multi_labels[i] for i in rows), store.vectors[rows])


def compression_ratio(entries_in: int, dim_in: int, entries_out: int, dim_out: int) -> float:
    return (entries_out * dim_out) / (entries_in * dim_in)


def save_centroid_store(cs: CentroidStore, path) -> None:
    store = EmbeddingStore(
        dim=cs.dim, modality_names=("centroid",), concept_ids=cs.ids,
        modality_ids=np.zeros(len(cs), dtype=np.int64), class_labels=cs.class_labels,
        multi_labels=cs.multi_labels, vectors=cs.vectors, normalized=cs.renormalized,
        reserved=_GRANULARITY_CODES[cs.granularity],
    )
    save_store(store, path)


def load_centroid_store(path) -> CentroidStore:
    store = read_store(path)
    codes = {v: k for k, v in _GRANULARITY_CODES.items()}
    if store.num_modalities != 1 or store.reserved not in codes:
        raise FormatError(f"{path}: not a centroid store")
    return CentroidStore(store.concept_ids, store.class_labels, store.multi_labels, store.vectors,
                         granularity=codes[store.reserved], renormalized=store.normalized)


def save_mask(mask: SelectionMask, path) -> None:
    Path(path).write_text(mask.to_json() + "\n")


def load_mask(path) -> SelectionMask:
    return SelectionMask.from_json(Path(path).read_text())
