"""Trainable token-embedding encoder shared by both retrievers.

Tokens are hashed into a fixed bucket table (no OOV is possible by
construction; a reserved low-bucket range absorbs empty inputs), rows
are optionally mean-pooled, pushed through one linear projection, and
L2-normalized. There is no positional information: embeddings are
order-invariant by design. All gradients are hand-derived and checked
against central finite differences.

Forward, for token buckets b_1..b_T:
    x = mean_t E[b_t]          (mean-pooled)   or   x_t = E[b_t]  (per token)
    y = x @ P
    u = y / ||y||
Backward through the normalization: g_y = (g_u - (g_u . u) u) / ||y||;
through the projection: g_P += outer(x, g_y), g_x = g_y @ P^T; through
the pooling: g_E[b_t] += g_x / T per occurrence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=1_000_000)
def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass
class EncoderParams:
    vocab_size: int
    dim: int
    oov_buckets: int
    embedding: np.ndarray  # (vocab_size, dim)
    projection: np.ndarray  # (dim, dim)

    def __post_init__(self):
        if not (self.vocab_size >= self.oov_buckets >= 1):
            raise ValueError("need vocab_size >= oov_buckets >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.embedding.shape != (self.vocab_size, self.dim):
            raise ValueError("embedding shape mismatch")
        if self.projection.shape != (self.dim, self.dim):
            raise ValueError("projection shape mismatch")

    def bucket(self, token: str) -> int:
        return self.oov_buckets + _token_hash(token) % (self.vocab_size - self.oov_buckets)

    def buckets(self, tokens: list[str]) -> np.ndarray:
        return np.asarray([self.bucket(t) for t in tokens], dtype=np.int64)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.vocab_size}:{self.dim}:{self.oov_buckets}".encode())
        h.update(self.embedding.tobytes())
        h.update(self.projection.tobytes())
        return h.hexdigest()[:16]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            vocab_size=self.vocab_size,
            dim=self.dim,
            oov_buckets=self.oov_buckets,
            embedding=self.embedding.copy(),
            projection=self.projection.copy(),
        )


def init_params(vocab_size: int, dim: int, seed: int, oov_buckets: int = 1) -> EncoderParams:
    """Uniform init in [-1/sqrt(d), +1/sqrt(d)]; projection starts as identity."""
    if vocab_size < 1 or dim < 2:
        raise ValueError("vocab_size must be >= 1 and dim >= 2")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)
    embedding = rng.uniform(-bound, bound, size=(vocab_size, dim))
    return EncoderParams(
        vocab_size=vocab_size,
        dim=dim,
        oov_buckets=oov_buckets,
        embedding=embedding,
        projection=np.eye(dim),
    )


@dataclass
class EncoderGrads:
    embedding: np.ndarray
    projection: np.ndarray

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "EncoderGrads":
        return cls(
            embedding=np.zeros_like(params.embedding),
            projection=np.zeros_like(params.projection),
        )


@dataclass
class _PooledCache:
    buckets: np.ndarray
    x: np.ndarray
    y: np.ndarray
    norm: float
    u: np.ndarray


def embed_mean_pooled_cached(params: EncoderParams, tokens: list[str]):
    if not tokens:
        raise ValueError("cannot embed an empty token sequence")
    buckets = params.buckets(tokens)
    x = params.embedding[buckets].mean(axis=0)
    y = x @ params.projection
    norm = float(np.linalg.norm(y))
    if norm == 0.0:
        raise FloatingPointError("projected embedding collapsed to zero; cannot normalize")
    u = y / norm
    return u, _PooledCache(buckets=buckets, x=x, y=y, norm=norm, u=u)


def embed_mean_pooled(params: EncoderParams, tokens: list[str]) -> np.ndarray:
    """Mean-pooled, projected, unit-norm sentence embedding."""
    return embed_mean_pooled_cached(params, tokens)[0]


def backprop_mean_pooled(
    params: EncoderParams, cache: _PooledCache, g_u: np.ndarray, grads: EncoderGrads
) -> None:
    """Accumulate d(loss)/d(params) for one mean-pooled embedding."""
    g_y = (g_u - np.dot(g_u, cache.u) * cache.u) / cache.norm
    grads.projection += np.outer(cache.x, g_y)
    g_x = g_y @ params.projection.T
    np.add.at(grads.embedding, cache.buckets, g_x / len(cache.buckets))


@dataclass
class _TokenCache:
    buckets: np.ndarray
    x: np.ndarray  # (T, d) raw rows
    y: np.ndarray  # (T, d) projected
    norms: np.ndarray  # (T,)
    u: np.ndarray  # (T, d) unit rows


def embed_tokens_cached(params: EncoderParams, tokens: list[str], max_tokens: int | None = None):
    if not tokens:
        raise ValueError("cannot embed an empty token sequence")
    if max_tokens is not None:
        tokens = tokens[:max_tokens]
    buckets = params.buckets(tokens)
    x = params.embedding[buckets]
    y = x @ params.projection
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms == 0.0):
        raise FloatingPointError("projected token embedding collapsed to zero")
    u = y / norms[:, None]
    return u, _TokenCache(buckets=buckets, x=x, y=y, norms=norms, u=u)


def embed_tokens(
    params: EncoderParams, tokens: list[str], max_tokens: int | None = None
) -> np.ndarray:
    """Per-token projected unit rows, truncated at max_tokens."""
    return embed_tokens_cached(params, tokens, max_tokens)[0]


def backprop_tokens(
    params: EncoderParams, cache: _TokenCache, g_u: np.ndarray, grads: EncoderGrads
) -> None:
    """Accumulate d(loss)/d(params) for one per-token embedding matrix."""
    g_y = (g_u - np.sum(g_u * cache.u, axis=1, keepdims=True) * cache.u) / cache.norms[:, None]
    grads.projection += cache.x.T @ g_y
    g_x = g_y @ params.projection.T
    np.add.at(grads.embedding, cache.buckets, g_x)


@dataclass
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer with decoupled weight decay."""

    hyper: AdamHyper
    m_embedding: np.ndarray
    v_embedding: np.ndarray
    m_projection: np.ndarray
    v_projection: np.ndarray
    step_count: int = 0

    @classmethod
    def for_params(cls, params: EncoderParams, hyper: AdamHyper | None = None) -> "AdamState":
        return cls(
            hyper=hyper or AdamHyper(),
            m_embedding=np.zeros_like(params.embedding),
            v_embedding=np.zeros_like(params.embedding),
            m_projection=np.zeros_like(params.projection),
            v_projection=np.zeros_like(params.projection),
        )


def adam_step(state: AdamState, params: EncoderParams, grads: EncoderGrads) -> None:
    """One in-place update of params and moments; the step counter advances by 1."""
    if not (np.all(np.isfinite(grads.embedding)) and np.all(np.isfinite(grads.projection))):
        raise FloatingPointError("non-finite gradient entries")
    h = state.hyper
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - h.beta1**t
    bias2 = 1.0 - h.beta2**t
    for m, v, g, p in (
        (state.m_embedding, state.v_embedding, grads.embedding, params.embedding),
        (state.m_projection, state.v_projection, grads.projection, params.projection),
    ):
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        denom = np.sqrt(v / bias2)
        denom += h.epsilon
        denom *= bias1
        if h.weight_decay:
            p -= h.learning_rate * h.weight_decay * p
        p -= h.learning_rate * (m / denom)


def finite_diff_check(
    loss_fn,
    params: EncoderParams,
    analytic: EncoderGrads,
    probe_count: int = 64,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes `probe_count` random coordinates across both parameter arrays;
    the error at a probe is |analytic - numeric| / max(1e-8, |numeric|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    arrays = [(params.embedding, analytic.embedding), (params.projection, analytic.projection)]
    sizes = np.array([a.size for a, _ in arrays])
    worst = 0.0
    for _ in range(probe_count):
        flat = int(rng.integers(sizes.sum()))
        which = 0 if flat < sizes[0] else 1
        idx = flat - (0 if which == 0 else sizes[0])
        arr, grad = arrays[which]
        original = arr.flat[idx]
        arr.flat[idx] = original + h
        f_plus = loss_fn(params)
        arr.flat[idx] = original - h
        f_minus = loss_fn(params)
        arr.flat[idx] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError("non-finite loss during finite differencing")
        numeric = (f_plus - f_minus) / (2.0 * h)
        rel = abs(grad.flat[idx] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, rel)
    return worst


@dataclass
class TrainingConfig:
    """Hyperparameters shared by both retriever trainers.

    The checkpoint rule is fixed: the epoch with the best validation
    Recall@5 wins. `alpha` only affects the bi-encoder loss; `hard_negatives`
    only affects late-interaction triplet extraction.
    """

    batch_size: int = 32
    learning_rate: float = 0.1
    epochs: int = 10
    alpha: float = 20.0
    seed: int = 0
    hard_negatives: int = 4
    dim: int = 64
    vocab_size: int = 2**16
    oov_buckets: int = 1
    max_query_tokens: int = 32
    max_passage_tokens: int = 180
    weight_decay: float = 0.0
    separate_towers: bool = False
    redraw_duplicate_batches: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


_MAGIC = b"RAGKIT-CKPT v1\n"


def save_checkpoint(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Versioned binary checkpoint: magic line, JSON header, raw float64 payloads.

    Round-trips bit-exactly and writes identical bytes for identical inputs.
    """
    manifest = []
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": manifest}, ensure_ascii=False, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header + b"\n")
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a ragkit checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(count * 8)
            arrays[spec["name"]] = np.frombuffer(blob, dtype=np.float64).reshape(shape).copy()
    return header["kind"], arrays, header["meta"]
