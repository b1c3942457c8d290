"""Synthetic paired data and affine encoders trained with bidirectional InfoNCE."""

from __future__ import annotations

import csv
import itertools
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ParameterError, TrainingError
from .store import EmbeddingStore, normalize_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    num_concepts: int = 20
    samples_per_concept: int = 100
    latent_dim: int = 64
    input_dim: int = 64
    modality_count: int = 2
    noise_std: float = 0.5
    num_attributes: int = 8
    attribute_prob: float = 0.3
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "input_dim", "modality_count", "samples_per_concept", "num_attributes"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.num_concepts < 2:
            raise ParameterError("num_concepts must be >= 2")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be >= 0")
        if not 0.0 <= self.attribute_prob <= 1.0:
            raise ParameterError("attribute_prob must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.07
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 256
    embed_dim: int = 64
    init_bias_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ParameterError("temperature must be > 0")
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be >= 2")
        if self.embed_dim < 1:
            raise ParameterError("embed_dim must be >= 1")
        if self.init_bias_scale < 0:
            raise ParameterError("init_bias_scale must be >= 0")


@dataclass
class EncoderParams:
    modality_id: int
    weight: np.ndarray  # (input_dim, D)
    bias: np.ndarray  # (D,)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.modality_id, self.weight.copy(), self.bias.copy())


@dataclass(frozen=True, eq=False)
class PairedInputs:
    """Raw per-modality inputs for a set of paired samples."""

    inputs: tuple[np.ndarray, ...]
    concept_ids: np.ndarray
    class_labels: np.ndarray
    multi_labels: tuple[frozenset[int], ...]

    def __len__(self) -> int:
        return len(self.concept_ids)

    def to_store(self) -> EmbeddingStore:
        """Raw inputs as an unnormalized store (dimension = input_dim)."""
        return _paired_store([x.astype(np.float64) for x in self.inputs], self, normalized=False)

    @classmethod
    def from_store(cls, store: EmbeddingStore) -> "PairedInputs":
        concepts, vectors = store.paired_view()
        labels, multi = store.concept_labels()
        return cls(tuple(vectors[:, m] for m in range(store.num_modalities)), concepts, labels, multi)


def _paired_store(per_modality, data: PairedInputs, normalized: bool) -> EmbeddingStore:
    M, n = len(per_modality), len(data)
    vectors = np.stack(per_modality, axis=1).reshape(n * M, -1)
    return EmbeddingStore(
        dim=vectors.shape[1],
        modality_names=tuple(f"modality{m}" for m in range(M)),
        concept_ids=np.repeat(data.concept_ids, M),
        modality_ids=np.tile(np.arange(M), n),
        class_labels=np.repeat(data.class_labels, M),
        multi_labels=tuple(ml for ml in data.multi_labels for _ in range(M)),
        vectors=vectors,
        normalized=normalized,
    )


def generate_synthetic(config: SynthConfig) -> tuple[PairedInputs, PairedInputs]:
    """Sample paired multimodal inputs around per-concept latent prototypes.

    Every modality sees the same latent (prototype plus gaussian noise)
    through its own random linear map. Multi-labels are a fixed random
    attribute set per concept. The split is stratified by concept.
    """
    rng = np.random.default_rng(config.seed)
    K, L = config.num_concepts, config.latent_dim
    prototypes = rng.normal(size=(K, L))
    maps = [rng.normal(size=(L, config.input_dim)) / np.sqrt(L) for _ in range(config.modality_count)]

    attributes = []
    for _ in range(K):
        chosen = np.flatnonzero(rng.random(config.num_attributes) < config.attribute_prob)
        if len(chosen) == 0:
            chosen = [rng.integers(config.num_attributes)]
        attributes.append(frozenset(int(a) for a in chosen))

    labels = np.repeat(np.arange(K), config.samples_per_concept)
    latent = prototypes[labels] + config.noise_std * rng.normal(size=(len(labels), L))
    inputs = [latent @ A for A in maps]

    n_train = int(round(config.train_fraction * config.samples_per_concept))
    train_idx, test_idx = [], []
    for k in range(K):
        members = rng.permutation(np.flatnonzero(labels == k))
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])

    def subset(idx):
        idx = np.sort(np.concatenate(idx))
        return PairedInputs(tuple(x[idx] for x in inputs), idx.astype(np.int64), labels[idx],
                            tuple(attributes[labels[i]] for i in idx))

    return subset(train_idx), subset(test_idx)


def _logsumexp(S: np.ndarray, axis: int) -> np.ndarray:
    top = S.max(axis=axis, keepdims=True)
    return np.squeeze(top, axis) + np.log(np.exp(S - top).sum(axis=axis))


def _softmax(S: np.ndarray, axis: int) -> np.ndarray:
    E = np.exp(S - S.max(axis=axis, keepdims=True))
    return E / E.sum(axis=axis, keepdims=True)


def _check_pair(Z_m, Z_n, tau):
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")
    Z_m, Z_n = np.asarray(Z_m, dtype=np.float64), np.asarray(Z_n, dtype=np.float64)
    if Z_m.ndim != 2 or Z_m.shape != Z_n.shape:
        raise ParameterError(f"embedding batches must share shape, got {Z_m.shape} and {Z_n.shape}")
    if len(Z_m) < 1:
        raise ParameterError("batch must contain at least one pair")
    return Z_m, Z_n


def infonce_directed(Z_m, Z_n, tau: float) -> float:
    """InfoNCE from modality m to n; rows of both inputs must be unit norm."""
    Z_m, Z_n = _check_pair(Z_m, Z_n, tau)
    S = Z_m @ Z_n.T / tau
    return float(np.mean(_logsumexp(S, 1) - np.diag(S)))


def infonce_symmetric(Z_m, Z_n, tau: float) -> float:
    return 0.5 * (infonce_directed(Z_m, Z_n, tau) + infonce_directed(Z_n, Z_m, tau))


def _pairs(Z):
    pairs = list(itertools.combinations(range(len(Z)), 2))
    if not pairs:
        raise ParameterError("need at least two modalities")
    return pairs


def _embedding_loss(Z: Sequence[np.ndarray], tau: float) -> float:
    """Symmetric InfoNCE averaged over modality pairs (rows of S index modality m)."""
    pairs = _pairs(Z)
    total = 0.0
    for m, n in pairs:
        S = Z[m] @ Z[n].T
        S /= tau
        diag = np.diag(S).copy()
        if 2.0 / tau < 600.0:
            # unit rows bound every entry to [-1/tau, 1/tau]: one shared shift cannot underflow
            top = S.max()
            E = np.exp(np.subtract(S, top, out=S), out=S)
            row, col = top + np.log(E.sum(axis=1)), top + np.log(E.sum(axis=0))
        else:
            row, col = _logsumexp(S, 1), _logsumexp(S, 0)
        total += 0.5 * (np.mean(row - diag) + np.mean(col - diag))
    return total / len(pairs)


def _embedding_loss_grad(Z: Sequence[np.ndarray], tau: float):
    """Loss averaged over modality pairs and its gradient w.r.t. each Z."""
    pairs = _pairs(Z)
    N = len(Z[0])
    eye = np.eye(N)
    loss = 0.0
    grads = [np.zeros_like(z) for z in Z]
    for m, n in pairs:
        S = Z[m] @ Z[n].T / tau
        diag = np.diag(S)
        loss += 0.5 * (np.mean(_logsumexp(S, 1) - diag) + np.mean(_logsumexp(S, 0) - diag))
        # dL/dS: row softmax for m->n, column softmax for n->m
        G = (_softmax(S, 1) + _softmax(S, 0) - 2 * eye) / (2 * N)
        grads[m] += G @ Z[n] / tau
        grads[n] += G.T @ Z[m] / tau
    scale = 1.0 / len(pairs)
    return loss * scale, [g * scale for g in grads]


def _encode_raw(params: EncoderParams, x: np.ndarray):
    u = x @ params.weight + params.bias
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return u, norms


def encode(params: EncoderParams, inputs) -> np.ndarray:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[1] != params.weight.shape[0]:
        raise ParameterError(f"input dim {inputs.shape[1]} != encoder input dim {params.weight.shape[0]}")
    return normalize_rows(inputs @ params.weight + params.bias, what="encoded sample")


def infonce_loss_and_gradients(inputs: Sequence[np.ndarray], params: Sequence[EncoderParams], tau: float):
    """Symmetric InfoNCE and its gradients w.r.t. every encoder's weight and bias.

    Returns ``(loss, [(d_weight, d_bias), ...])`` in modality order.
    """
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")
    raw = [_encode_raw(p, np.asarray(x, dtype=np.float64)) for p, x in zip(params, inputs)]
    Z = []
    for (u, norms) in raw:
        if np.any(norms == 0):
            raise ParameterError("encoder produced a zero vector")
        Z.append(u / norms)
    loss, dZ = _embedding_loss_grad(Z, tau)
    grads = []
    for x, z, (u, norms), g in zip(inputs, Z, raw, dZ):
        # back through z = u / |u|
        du = (g - z * np.sum(z * g, axis=1, keepdims=True)) / norms
        grads.append((np.asarray(x).T @ du, du.sum(axis=0)))
    return loss, grads


def infonce_gradients(inputs, params, tau):
    return infonce_loss_and_gradients(inputs, params, tau)[1]


def init_encoders(input_dim: int, config: TrainConfig, modality_count: int, rng=None) -> list[EncoderParams]:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    return [
        EncoderParams(
            m,
            rng.normal(size=(input_dim, config.embed_dim)) / np.sqrt(input_dim),
            config.init_bias_scale * rng.normal(size=config.embed_dim),
        )
        for m in range(modality_count)
    ]


def embed(data: PairedInputs, params: Sequence[EncoderParams]) -> EmbeddingStore:
    return _paired_store([encode(p, x) for p, x in zip(params, data.inputs)], data, normalized=True)


@dataclass
class TrainResult:
    config: TrainConfig
    params: list[EncoderParams]
    loss_history: list[float] = field(default_factory=list)
    train_store: EmbeddingStore | None = None
    test_store: EmbeddingStore | None = None


def _full_loss(data, params, tau):
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        Z = [_encode_raw(p, x) for p, x in zip(params, data.inputs)]
        return _embedding_loss([u / n for u, n in Z], tau)


def train(data: tuple[PairedInputs, PairedInputs], config: TrainConfig) -> TrainResult:
    """Mini-batch gradient descent on the symmetric InfoNCE loss.

    ``loss_history[0]`` is the full training-set loss at initialization and
    ``loss_history[e]`` the loss after epoch ``e``.
    """
    train_data, test_data = data
    if len(train_data) < 2:
        raise ParameterError("need at least two training pairs")
    rng = np.random.default_rng(config.seed)
    params = init_encoders(train_data.inputs[0].shape[1], config, len(train_data.inputs), rng)
    tau, lr = config.temperature, config.learning_rate
    history = [_full_loss(train_data, params, tau)]
    n = len(train_data)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                try:
                    _, grads = infonce_loss_and_gradients([x[idx] for x in train_data.inputs], params, tau)
                except ParameterError as exc:
                    raise TrainingError(f"epoch {epoch}: {exc}", epoch) from exc
                for p, (gw, gb) in zip(params, grads):
                    p.weight -= lr * gw
                    p.bias -= lr * gb
        loss = _full_loss(train_data, params, tau)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch} (temperature {tau})", epoch)
        history.append(loss)
    logger.info("tau=%g: loss %.4f -> %.4f over %d epochs", tau, history[0], history[-1], config.epochs)
    return TrainResult(config, params, history, embed(train_data, params), embed(test_data, params))


ENCODER_MAGIC = b"GCEN"
_ENC_HEADER = struct.Struct("<4sIIII")


def save_encoders(params: Sequence[EncoderParams], path) -> None:
    """Binary sidecar: magic, u32 version, u32 M, u32 input_dim, u32 D, then
    per modality u32 id, weight and bias as little-endian f64."""
    input_dim, D = params[0].weight.shape
    chunks = [_ENC_HEADER.pack(ENCODER_MAGIC, 1, len(params), input_dim, D)]
    for p in params:
        chunks.append(struct.pack("<I", p.modality_id))
        chunks.append(np.ascontiguousarray(p.weight, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(p.bias, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_encoders(path) -> list[EncoderParams]:
    data = Path(path).read_bytes()
    try:
        magic, version, M, input_dim, D = _ENC_HEADER.unpack_from(data, 0)
    except struct.error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if magic != ENCODER_MAGIC or version != 1:
        raise FormatError(f"{path}: not an encoder file")
    expected = _ENC_HEADER.size + M * (4 + 8 * (input_dim * D + D))
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset, out = _ENC_HEADER.size, []
    for _ in range(M):
        (mid,) = struct.unpack_from("<I", data, offset)
        offset += 4
        w = np.frombuffer(data, "<f8", input_dim * D, offset).reshape(input_dim, D).astype(np.float64)
        offset += 8 * input_dim * D
        b = np.frombuffer(data, "<f8", D, offset).astype(np.float64)
        offset += 8 * D
        out.append(EncoderParams(mid, w, b))
    return out


def write_loss_history(history: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(float(loss))])
