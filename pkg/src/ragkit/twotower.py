"""Bi-encoder retriever: cosine relevance, in-batch-negative training,
corpus encoding and brute-force nearest-neighbor search.

The training loss over a batch of n (question, positive) pairs is

    L = - sum_i log( exp(a * R_ii) / sum_j exp(a * R_ij) )

where R_ij is the cosine between question i and passage j and every
other passage in the batch acts as a negative for question i. Softmax
rows are computed with a max shift after the scale is applied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Passage, QAPair, Qrels, RankedList
from .encoder import (
    AdamHyper,
    AdamState,
    EncoderGrads,
    EncoderParams,
    TrainingConfig,
    adam_step,
    backprop_mean_pooled,
    embed_mean_pooled_cached,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .metrics import per_question_recall
from .tokenize import tokenize

logger = logging.getLogger(__name__)


def cosine_score(eq: np.ndarray, es: np.ndarray) -> float:
    """Dot product of two unit vectors (equal to their cosine)."""
    if eq.shape != es.shape:
        raise ValueError(f"dimension mismatch: {eq.shape} vs {es.shape}")
    return float(np.dot(eq, es))


@dataclass
class TwoTowerModel:
    question_tower: EncoderParams
    passage_tower: EncoderParams

    @property
    def shared(self) -> bool:
        return self.question_tower is self.passage_tower

    def copy(self) -> "TwoTowerModel":
        q = self.question_tower.copy()
        return TwoTowerModel(question_tower=q, passage_tower=q if self.shared else self.passage_tower.copy())


def init_two_tower(config: TrainingConfig) -> TwoTowerModel:
    q = init_params(config.vocab_size, config.dim, config.seed, config.oov_buckets)
    if config.separate_towers:
        p = init_params(config.vocab_size, config.dim, config.seed + 1, config.oov_buckets)
    else:
        p = q
    return TwoTowerModel(question_tower=q, passage_tower=p)


def mnr_loss_and_grads(
    model: TwoTowerModel,
    batch: list[tuple[str, str]],
    alpha: float,
    max_query_tokens: int = 32,
    max_passage_tokens: int = 180,
) -> tuple[float, EncoderGrads, EncoderGrads]:
    """Batch loss and gradients for both towers.

    Returns (loss, question grads, passage grads); the two grad objects
    are the same object when the towers share weights. n=1 gives exactly
    zero loss (single-element softmax).
    """
    n = len(batch)
    if n < 1:
        raise ValueError("batch must be non-empty")
    positives = [p for _, p in batch]
    if len(set(positives)) != n:
        logger.warning("batch contains duplicate positives; in-batch negatives are impure")

    q_embeds, q_caches, s_embeds, s_caches = [], [], [], []
    for question, passage in batch:
        u, cache = embed_mean_pooled_cached(
            model.question_tower, tokenize(question)[:max_query_tokens]
        )
        q_embeds.append(u)
        q_caches.append(cache)
        u, cache = embed_mean_pooled_cached(
            model.passage_tower, tokenize(passage)[:max_passage_tokens]
        )
        s_embeds.append(u)
        s_caches.append(cache)
    uq = np.stack(q_embeds)
    us = np.stack(s_embeds)

    z = alpha * (uq @ us.T)
    shift = z.max(axis=1, keepdims=True)
    exp_z = np.exp(z - shift)
    softmax = exp_z / exp_z.sum(axis=1, keepdims=True)
    log_sum = np.log(exp_z.sum(axis=1)) + shift[:, 0]
    loss = float(np.sum(log_sum - np.diag(z)))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    d_r = alpha * (softmax - np.eye(n))
    g_uq = d_r @ us
    g_us = d_r.T @ uq

    q_grads = EncoderGrads.zeros_like(model.question_tower)
    s_grads = q_grads if model.shared else EncoderGrads.zeros_like(model.passage_tower)
    for i in range(n):
        backprop_mean_pooled(model.question_tower, q_caches[i], g_uq[i], q_grads)
        backprop_mean_pooled(model.passage_tower, s_caches[i], g_us[i], s_grads)
    return loss, q_grads, s_grads


@dataclass
class EmbeddingMatrix:
    pids: list[str]
    vectors: np.ndarray  # (len(pids), d) unit rows
    encoder_checksum: str

    def save(self, path) -> None:
        save_checkpoint(
            path,
            "embedding-matrix",
            {"vectors": self.vectors},
            {"pids": self.pids, "encoder_checksum": self.encoder_checksum},
        )

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        kind, arrays, meta = load_checkpoint(path)
        if kind != "embedding-matrix":
            raise ValueError(f"{path}: expected an embedding matrix, found {kind!r}")
        return cls(
            pids=meta["pids"], vectors=arrays["vectors"], encoder_checksum=meta["encoder_checksum"]
        )


def encode_corpus(
    params: EncoderParams, corpus: dict[str, Passage], max_passage_tokens: int = 180
) -> EmbeddingMatrix:
    """One unit row per passage, in sorted-pid order.

    Passages that tokenize to nothing get the reserved-bucket embedding;
    their count is logged.
    """
    if not corpus:
        raise ValueError("cannot encode an empty corpus")
    pids = sorted(corpus)
    token_lists = [tokenize(corpus[pid].text)[:max_passage_tokens] for pid in pids]
    return encode_token_lists(params, pids, token_lists)


def encode_token_lists(
    params: EncoderParams, pids: list[str], token_lists: list[list[str]]
) -> EmbeddingMatrix:
    counts = np.array([len(t) for t in token_lists], dtype=np.int64)
    flat: list[str] = []
    for tokens in token_lists:
        flat.extend(tokens)
    buckets = params.buckets(flat)
    sums = np.zeros((len(pids), params.dim))
    if len(flat):
        nonempty = np.flatnonzero(counts)
        offsets = np.zeros(len(nonempty), dtype=np.int64)
        np.cumsum(counts[nonempty][:-1], out=offsets[1:])
        sums[nonempty] = np.add.reduceat(params.embedding[buckets], offsets, axis=0)
    x = sums / np.maximum(counts, 1)[:, None]
    empties = int((counts == 0).sum())
    if empties:
        x[counts == 0] = params.embedding[0]
        logger.warning(
            "%d passages tokenized to nothing; assigned the reserved-bucket embedding", empties
        )
    y = x @ params.projection
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms == 0.0):
        raise FloatingPointError("projected embedding collapsed to zero; cannot normalize")
    return EmbeddingMatrix(
        pids=pids, vectors=y / norms[:, None], encoder_checksum=params.checksum()
    )


def search(matrix: EmbeddingMatrix, query_vector: np.ndarray, k: int) -> RankedList:
    """Exhaustive dot-product search; ties broken by ascending pid."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = matrix.vectors @ query_vector
    order = np.argsort(-scores, kind="stable")[:k]
    return RankedList(qid="", entries=tuple((matrix.pids[i], float(scores[i])) for i in order))


def search_text(
    params: EncoderParams,
    matrix: EmbeddingMatrix,
    qid: str,
    question: str,
    k: int,
    max_query_tokens: int = 32,
) -> RankedList:
    if matrix.encoder_checksum != params.checksum():
        raise ValueError("embedding matrix was produced by a different encoder")
    u, _ = embed_mean_pooled_cached(params, tokenize(question)[:max_query_tokens])
    ranked = search(matrix, u, k)
    return RankedList(qid=qid, entries=ranked.entries)


def _epoch_batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _has_duplicate_positives(pairs: list[tuple[str, str]], batch: np.ndarray) -> bool:
    positives = [pairs[i][1] for i in batch]
    return len(set(positives)) != len(positives)


def train_two_tower(
    config: TrainingConfig,
    pairs: list[tuple[str, str]],
    validation: tuple[list[QAPair], Qrels],
    corpus_for_val: dict[str, Passage],
) -> tuple[TwoTowerModel, list[dict]]:
    """Epochs of seeded shuffled batches; keeps the best validation Recall@5 epoch.

    Returns the winning model and a log with one record per epoch
    (mean batch loss, mean per-example loss, Recall@5).
    """
    if not pairs:
        raise ValueError("no training pairs")
    val_pairs, qrels = validation
    missing = {pid for pids in qrels.values() for pid in pids} - set(corpus_for_val)
    if missing:
        raise ValueError(f"validation corpus is missing gold pids: {sorted(missing)[:5]}")

    model = init_two_tower(config)
    if config.epochs == 0:
        return model, []

    hyper = AdamHyper(learning_rate=config.learning_rate, weight_decay=config.weight_decay)
    q_opt = AdamState.for_params(model.question_tower, hyper)
    p_opt = q_opt if model.shared else AdamState.for_params(model.passage_tower, hyper)

    val_pids = sorted(corpus_for_val)
    val_token_lists = [
        tokenize(corpus_for_val[pid].text)[: config.max_passage_tokens] for pid in val_pids
    ]

    rng = np.random.default_rng(config.seed)
    best_recall, best_model, log = -1.0, None, []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        batches = _epoch_batches(order, config.batch_size)
        if config.redraw_duplicate_batches:
            for _ in range(50):
                if not any(_has_duplicate_positives(pairs, b) for b in batches):
                    break
                order = rng.permutation(len(pairs))
                batches = _epoch_batches(order, config.batch_size)
            else:
                logger.warning("could not draw duplicate-free batches after 50 attempts")

        total_loss = 0.0
        for batch_idx in batches:
            batch = [pairs[i] for i in batch_idx]
            loss, q_grads, p_grads = mnr_loss_and_grads(
                model, batch, config.alpha, config.max_query_tokens, config.max_passage_tokens
            )
            adam_step(q_opt, model.question_tower, q_grads)
            if not model.shared:
                adam_step(p_opt, model.passage_tower, p_grads)
            total_loss += loss

        matrix = encode_token_lists(model.passage_tower, val_pids, val_token_lists)
        run = []
        for qa in val_pairs:
            u, _ = embed_mean_pooled_cached(
                model.question_tower, tokenize(qa.question)[: config.max_query_tokens]
            )
            ranked = search(matrix, u, 5)
            run.append(RankedList(qid=qa.qid, entries=ranked.entries))
        recalls = per_question_recall(run, qrels, 5)
        recall5 = sum(recalls.values()) / len(recalls)
        log.append(
            {
                "epoch": epoch,
                "mean_loss": total_loss / len(batches),
                "mean_loss_per_example": total_loss / len(pairs),
                "recall_at_5": recall5,
            }
        )
        if recall5 > best_recall:
            best_recall = recall5
            best_model = model.copy()
    return best_model, log


def save_two_tower(path, model: TwoTowerModel, config: TrainingConfig,
                   q_opt: AdamState | None = None, p_opt: AdamState | None = None) -> None:
    arrays = {
        "q_embedding": model.question_tower.embedding,
        "q_projection": model.question_tower.projection,
    }
    if not model.shared:
        arrays["p_embedding"] = model.passage_tower.embedding
        arrays["p_projection"] = model.passage_tower.projection
    for prefix, opt in (("q", q_opt), ("p", p_opt)):
        if opt is not None:
            arrays[f"{prefix}_m_embedding"] = opt.m_embedding
            arrays[f"{prefix}_v_embedding"] = opt.v_embedding
            arrays[f"{prefix}_m_projection"] = opt.m_projection
            arrays[f"{prefix}_v_projection"] = opt.v_projection
    meta = {
        "shared": model.shared,
        "vocab_size": model.question_tower.vocab_size,
        "dim": model.question_tower.dim,
        "oov_buckets": model.question_tower.oov_buckets,
        "config": vars(config),
        "opt_steps": {"q": q_opt.step_count if q_opt else 0, "p": p_opt.step_count if p_opt else 0},
    }
    save_checkpoint(path, "two-tower", arrays, meta)


def load_two_tower(path) -> tuple[TwoTowerModel, TrainingConfig]:
    kind, arrays, meta = load_checkpoint(path)
    if kind != "two-tower":
        raise ValueError(f"{path}: expected a two-tower checkpoint, found {kind!r}")
    q = EncoderParams(
        vocab_size=meta["vocab_size"],
        dim=meta["dim"],
        oov_buckets=meta["oov_buckets"],
        embedding=arrays["q_embedding"],
        projection=arrays["q_projection"],
    )
    if meta["shared"]:
        p = q
    else:
        p = EncoderParams(
            vocab_size=meta["vocab_size"],
            dim=meta["dim"],
            oov_buckets=meta["oov_buckets"],
            embedding=arrays["p_embedding"],
            projection=arrays["p_projection"],
        )
    return TwoTowerModel(question_tower=q, passage_tower=p), TrainingConfig(**meta["config"])
