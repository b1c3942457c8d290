"""Multimodal embedding collections: data model, validation and persistence.

Binary layout (all integers little-endian)::

    b"GCMP"  u32 version  u32 n_records  u32 n_modalities  u32 dim
    u8 normalized  u8 reserved
    n_modalities x (u32 byte_length, utf-8 name)
    n_records x (u64 concept_id, u32 modality_id, u32 class_label,
                 u32 label_count, label_count x u32, dim x f32)

The reserved byte is 0 for plain stores; centroid stores use it to record
their granularity (see :mod:`gapcomp.compression`).
"""

from __future__ import annotations

import json
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DegenerateVectorError, FormatError, IntegrityError

logger = logging.getLogger(__name__)

MAGIC = b"GCMP"
VERSION = 1
NORM_TOLERANCE = 1e-6

_HEADER = struct.Struct("<4sIIIIBB")
_RECORD_HEAD = struct.Struct("<QIII")


@dataclass(frozen=True)
class EmbeddingRecord:
    concept_id: int
    modality_id: int
    class_label: int
    multi_labels: frozenset[int]
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    """Column-oriented collection of embedding records.

    Vectors are held as float64 so metrics accumulate in double precision;
    persistence rounds them to float32.
    """

    dim: int
    modality_names: tuple[str, ...]
    concept_ids: np.ndarray
    modality_ids: np.ndarray
    class_labels: np.ndarray
    multi_labels: tuple[frozenset[int], ...]
    vectors: np.ndarray
    normalized: bool = False
    reserved: int = 0

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, self.dim)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "modality_names", tuple(self.modality_names))
        object.__setattr__(self, "multi_labels", tuple(frozenset(int(x) for x in s) for s in self.multi_labels))
        for name in ("concept_ids", "modality_ids", "class_labels"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        n = len(vectors)
        if not (len(self.concept_ids) == len(self.modality_ids) == len(self.class_labels) == len(self.multi_labels) == n):
            raise IntegrityError("record columns have mismatched lengths")

    @classmethod
    def from_records(cls, records: Iterable[EmbeddingRecord], dim: int,
                     modality_names: Sequence[str], normalized: bool = False) -> "EmbeddingStore":
        records = list(records)
        for r in records:
            if np.asarray(r.vector).shape != (dim,):
                raise IntegrityError(f"record (concept {r.concept_id}, modality {r.modality_id}) has wrong dimension")
        vectors = np.array([r.vector for r in records], dtype=np.float64).reshape(len(records), dim)
        return cls(
            dim=dim,
            modality_names=tuple(modality_names),
            concept_ids=[r.concept_id for r in records],
            modality_ids=[r.modality_id for r in records],
            class_labels=[r.class_label for r in records],
            multi_labels=[r.multi_labels for r in records],
            vectors=vectors,
            normalized=normalized,
        )

    def __len__(self) -> int:
        return len(self.vectors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.modality_names == other.modality_names
            and self.normalized == other.normalized
            and self.reserved == other.reserved
            and np.array_equal(self.concept_ids, other.concept_ids)
            and np.array_equal(self.modality_ids, other.modality_ids)
            and np.array_equal(self.class_labels, other.class_labels)
            and self.multi_labels == other.multi_labels
            and np.array_equal(self.vectors, other.vectors)
        )

    __hash__ = None

    @property
    def num_modalities(self) -> int:
        return len(self.modality_names)

    @property
    def records(self) -> list[EmbeddingRecord]:
        return [
            EmbeddingRecord(int(c), int(m), int(y), ml, v)
            for c, m, y, ml, v in zip(self.concept_ids, self.modality_ids, self.class_labels,
                                      self.multi_labels, self.vectors)
        ]

    def modality_mask(self, m: int) -> np.ndarray:
        return self.modality_ids == m

    def select(self, mask: np.ndarray) -> "EmbeddingStore":
        idx = np.flatnonzero(mask)
        return replace(
            self,
            concept_ids=self.concept_ids[idx],
            modality_ids=self.modality_ids[idx],
            class_labels=self.class_labels[idx],
            multi_labels=tuple(self.multi_labels[i] for i in idx),
            vectors=self.vectors[idx],
        )

    def paired_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(concept_ids, vectors)`` with vectors shaped (concepts, M, D).

        Concepts are ordered by first appearance in modality 0. Raises
        IntegrityError if the store is not completely paired.
        """
        _raise_on(self, {"duplicate_pair", "missing_modality", "bad_modality"}, IntegrityError)
        m0 = np.flatnonzero(self.modality_ids == 0)
        concepts = self.concept_ids[m0]
        position = {int(c): i for i, c in enumerate(concepts)}
        out = np.empty((len(concepts), self.num_modalities, self.dim))
        for c, m, v in zip(self.concept_ids, self.modality_ids, self.vectors):
            out[position[int(c)], m] = v
        return concepts, out

    def concept_labels(self) -> tuple[np.ndarray, tuple[frozenset[int], ...]]:
        """Class label and multi-label set per concept, in ``paired_view`` order."""
        m0 = np.flatnonzero(self.modality_ids == 0)
        return self.class_labels[m0], tuple(self.multi_labels[i] for i in m0)


@dataclass(frozen=True)
class Finding:
    kind: str
    message: str
    record: int | None = None


@dataclass
class Diagnostics:
    findings: list[Finding] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.findings)

    def __len__(self) -> int:
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)

    def of_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]


def validate_store(store: EmbeddingStore) -> Diagnostics:
    """List every invariant violation; an empty report means the store is valid."""
    report = Diagnostics()
    M = store.num_modalities

    bad_modality = (store.modality_ids < 0) | (store.modality_ids >= M)
    for i in np.flatnonzero(bad_modality):
        report.findings.append(Finding("bad_modality", f"record {i}: modality id {store.modality_ids[i]} outside [0,{M})", int(i)))

    pairs = Counter(zip(store.concept_ids.tolist(), store.modality_ids.tolist()))
    for (c, m), count in sorted(pairs.items()):
        if count > 1:
            report.findings.append(Finding("duplicate_pair", f"(concept {c}, modality {m}) occurs {count} times"))

    seen: dict[int, set[int]] = {}
    for c, m in pairs:
        seen.setdefault(c, set()).add(m)
    for c in sorted(seen):
        missing = sorted(set(range(M)) - seen[c])
        if missing:
            report.findings.append(Finding("missing_modality", f"concept {c} lacks modalities {missing}"))

    finite = np.isfinite(store.vectors).all(axis=1)
    for i in np.flatnonzero(~finite):
        report.findings.append(Finding("non_finite", f"record {i}: non-finite entry", int(i)))

    if store.normalized:
        norms = np.linalg.norm(store.vectors, axis=1)
        off = finite & (np.abs(norms - 1.0) > NORM_TOLERANCE)
        for i in np.flatnonzero(off):
            report.findings.append(Finding("norm_deviation", f"record {i}: norm {norms[i]:.9f}", int(i)))
    return report


def _raise_on(store, kinds, exc_type):
    hits = [f for f in validate_store(store) if f.kind in kinds]
    if hits:
        raise exc_type("; ".join(f.message for f in hits[:5]) + (" ..." if len(hits) > 5 else ""))


def check_store(store: EmbeddingStore) -> EmbeddingStore:
    """Raise the matching error for the first class of violation found."""
    _raise_on(store, {"non_finite", "norm_deviation"}, DataError)
    _raise_on(store, {"bad_modality", "duplicate_pair", "missing_modality"}, IntegrityError)
    return store


def normalize_rows(vectors: np.ndarray, what: str = "vector", ids=None, exc=DegenerateVectorError) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    zero = np.flatnonzero(norms.reshape(-1) == 0)
    if len(zero):
        who = zero[0] if ids is None else ids[zero[0]]
        raise exc(f"{what} {who} has zero norm")
    return vectors / norms


def normalize_store(store: EmbeddingStore) -> EmbeddingStore:
    labels = [f"record {i} (concept {c}, modality {m})"
              for i, (c, m) in enumerate(zip(store.concept_ids, store.modality_ids))]
    vectors = normalize_rows(store.vectors, what="vector at", ids=labels)
    return replace(store, vectors=vectors, normalized=True)


def save_store(store: EmbeddingStore, path) -> None:
    chunks = [_HEADER.pack(MAGIC, VERSION, len(store), store.num_modalities, store.dim,
                           int(store.normalized), store.reserved)]
    for name in store.modality_names:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
    vecs = store.vectors.astype("<f4")
    for i in range(len(store)):
        labels = sorted(store.multi_labels[i])
        chunks.append(_RECORD_HEAD.pack(int(store.concept_ids[i]), int(store.modality_ids[i]),
                                        int(store.class_labels[i]), len(labels)))
        if labels:
            chunks.append(struct.pack(f"<{len(labels)}I", *labels))
        chunks.append(vecs[i].tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_store(path) -> EmbeddingStore:
    """Parse a store file without checking store invariants."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, M, D, normalized, reserved = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if normalized not in (0, 1):
        raise FormatError(f"{path}: bad normalized flag {normalized}")
    offset = _HEADER.size
    try:
        names = []
        for _ in range(M):
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            names.append(data[offset:offset + length].decode("utf-8"))
            offset += length
        cols = ([], [], [], [])
        vectors = np.empty((n, D), dtype=np.float64)
        for i in range(n):
            c, m, y, count = _RECORD_HEAD.unpack_from(data, offset)
            offset += _RECORD_HEAD.size
            labels = struct.unpack_from(f"<{count}I", data, offset)
            offset += 4 * count
            end = offset + 4 * D
            if end > len(data):
                raise FormatError(f"{path}: truncated record {i}")
            vectors[i] = np.frombuffer(data, dtype="<f4", count=D, offset=offset)
            offset = end
            for col, value in zip(cols, (c, m, y, frozenset(labels))):
                col.append(value)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return EmbeddingStore(dim=D, modality_names=names, concept_ids=cols[0], modality_ids=cols[1],
                          class_labels=cols[2], multi_labels=cols[3], vectors=vectors,
                          normalized=bool(normalized), reserved=reserved)


def load_store(path) -> EmbeddingStore:
    return check_store(read_store(path))


def load_jsonl(path, modality_names: Sequence[str] | None = None, normalized: bool = False) -> EmbeddingStore:
    """Import records from JSON lines.

    Each line holds ``concept_id``, ``modality_id``, ``class_label``,
    ``multi_labels`` (optional) and ``vector``. When a (concept, modality)
    pair repeats, e.g. several captions for one image, the first line wins.
    """
    records, seen, dim = [], set(), None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = EmbeddingRecord(int(obj["concept_id"]), int(obj["modality_id"]), int(obj["class_label"]),
                                      frozenset(int(x) for x in obj.get("multi_labels", ())),
                                      np.asarray(obj["vector"], dtype=np.float64))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if dim is None:
                dim = len(rec.vector)
            key = (rec.concept_id, rec.modality_id)
            if key in seen:
                logger.info("%s:%d: dropping repeat of concept %d modality %d", path, lineno, *key)
                continue
            seen.add(key)
            records.append(rec)
    if dim is None:
        raise FormatError(f"{path}: no records")
    if modality_names is None:
        modality_names = [f"m{i}" for i in range(max(r.modality_id for r in records) + 1)]
    return check_store(EmbeddingStore.from_records(records, dim, modality_names, normalized))


def save_jsonl(store: EmbeddingStore, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in store.records:
            fh.write(json.dumps({
                "concept_id": r.concept_id, "modality_id": r.modality_id, "class_label": r.class_label,
                "multi_labels": sorted(r.multi_labels), "vector": r.vector.tolist(),
            }) + "\n")
