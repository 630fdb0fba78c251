"""Okapi BM25 index for first-stage candidate retrieval.

Scoring follows the classic Okapi formulation with the negative-idf
substitution used by the common Okapi implementations: raw
``idf(t) = ln((N - df + 0.5) / (df + 0.5))``; any term whose raw idf is
negative is assigned ``epsilon * mean(raw idf over the vocabulary)``
instead (the mean includes the negative values).
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Passage, RankedList
from .tokenize import tokenize

_FORMAT = "ragkit-bm25"
_VERSION = 1


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.5
    b: float = 0.75
    epsilon: float = 0.25


class BM25Index:
    """Immutable inverted index; a built index supports concurrent queries."""

    def __init__(self, pids, doc_lengths, postings, idf, params: BM25Params):
        self.pids: list[str] = pids
        self.doc_lengths = doc_lengths  # np.float64, aligned with pids
        self.postings = postings  # term -> (doc index array, tf array)
        self.idf: dict[str, float] = idf
        self.params = params
        self._index_of = {pid: i for i, pid in enumerate(pids)}
        self.N = len(pids)
        self.avgdl = float(doc_lengths.mean())
        # per-document length normalization, shared by every query term
        k1, b = params.k1, params.b
        self._denom = k1 * (1.0 - b + b * self.doc_lengths / self.avgdl)

    def score(self, query_tokens: list[str], pid: str) -> float:
        """Okapi score of one document; every query-token occurrence adds one summand."""
        if pid not in self._index_of:
            raise KeyError(f"unknown pid {pid!r}")
        i = self._index_of[pid]
        total = 0.0
        for term in query_tokens:
            posting = self.postings.get(term)
            if posting is None:
                continue
            doc_idx, tfs = posting
            j = np.searchsorted(doc_idx, i)
            if j == len(doc_idx) or doc_idx[j] != i:
                continue
            tf = tfs[j]
            total += self.idf[term] * tf * (self.params.k1 + 1.0) / (tf + self._denom[i])
        return float(total)

    def all_scores(self, query_tokens: list[str]) -> np.ndarray:
        scores = np.zeros(self.N)
        for term in query_tokens:
            posting = self.postings.get(term)
            if posting is None:
                continue
            doc_idx, tfs = posting
            scores[doc_idx] += (
                self.idf[term] * tfs * (self.params.k1 + 1.0) / (tfs + self._denom[doc_idx])
            )
        return scores

    def retrieve_topk(self, question: str, k: int) -> RankedList:
        """Top-k pids by score, descending; ties broken by ascending pid."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.all_scores(tokenize(question))
        # pids are stored sorted, so a stable sort on -score breaks ties by pid
        order = np.argsort(-scores, kind="stable")[:k]
        entries = tuple((self.pids[i], float(scores[i])) for i in order)
        return RankedList(qid="", entries=entries)

    def retrieve_topk_for(self, qid: str, question: str, k: int) -> RankedList:
        ranked = self.retrieve_topk(question, k)
        return RankedList(qid=qid, entries=ranked.entries)

    def save(self, path) -> None:
        """Persist as a gzip-compressed, versioned JSON blob (deterministic bytes)."""
        payload = {
            "format": _FORMAT,
            "version": _VERSION,
            "params": {"k1": self.params.k1, "b": self.params.b, "epsilon": self.params.epsilon},
            "pids": self.pids,
            "doc_lengths": self.doc_lengths.tolist(),
            "postings": {
                t: [idx.tolist(), tf.tolist()] for t, (idx, tf) in sorted(self.postings.items())
            },
            "idf": {t: v for t, v in sorted(self.idf.items())},
        }
        raw = json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(gzip.compress(raw, mtime=0))

    @classmethod
    def load(cls, path) -> "BM25Index":
        with open(path, "rb") as fh:
            payload = json.loads(gzip.decompress(fh.read()).decode("utf-8"))
        if payload.get("format") != _FORMAT:
            raise ValueError(f"{path}: not a {_FORMAT} file")
        if payload.get("version") != _VERSION:
            raise ValueError(f"{path}: unsupported version {payload.get('version')}")
        postings = {
            t: (np.asarray(idx, dtype=np.int64), np.asarray(tf, dtype=np.float64))
            for t, (idx, tf) in payload["postings"].items()
        }
        return cls(
            pids=payload["pids"],
            doc_lengths=np.asarray(payload["doc_lengths"], dtype=np.float64),
            postings=postings,
            idf=payload["idf"],
            params=BM25Params(**payload["params"]),
        )


def build_index(corpus: dict[str, Passage], params: BM25Params | None = None) -> BM25Index:
    """Tokenize the corpus and build the inverted index, df table and idf table."""
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    params = params or BM25Params()
    pids = sorted(corpus)
    doc_lengths = np.zeros(len(pids))
    raw_postings: dict[str, list[tuple[int, int]]] = {}
    for i, pid in enumerate(pids):
        tokens = tokenize(corpus[pid].text)
        doc_lengths[i] = len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for term, tf in counts.items():
            raw_postings.setdefault(term, []).append((i, tf))

    n = len(pids)
    raw_idf = {
        term: math.log((n - len(post) + 0.5) / (len(post) + 0.5))
        for term, post in raw_postings.items()
    }
    avg_raw_idf = sum(raw_idf.values()) / len(raw_idf)
    floor = params.epsilon * avg_raw_idf
    idf = {term: (v if v >= 0 else floor) for term, v in raw_idf.items()}

    postings = {
        term: (
            np.asarray([i for i, _ in post], dtype=np.int64),
            np.asarray([tf for _, tf in post], dtype=np.float64),
        )
        for term, post in raw_postings.items()
    }
    return BM25Index(pids=pids, doc_lengths=doc_lengths, postings=postings, idf=idf, params=params)
