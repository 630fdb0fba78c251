"""Weak-label generation: rerank first-stage candidates by an answer
scorer, keep the top passage as the positive, and the immediately
following passages as hard negatives.

Reranking is a pure permutation of the candidate set. Ties keep the
first-stage order (the score gaps between adjacent candidates can shrink
to noise, so a stable deterministic fallback matters). A question whose
scorer fails is dropped outright; partial records are never emitted.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .data import DataFormatError, Passage, QAPair, Qrels, RankedList
from .metrics import recall_at_k

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeakLabelRecord:
    qid: str
    scored_candidates: tuple[tuple[str, float], ...]  # descending score
    positive_pid: str
    hard_negative_pids: tuple[str, ...]

    def __post_init__(self):
        if not self.scored_candidates:
            raise ValueError(f"record {self.qid!r} has no candidates")
        scores = [s for _, s in self.scored_candidates]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"record {self.qid!r} scores are not non-increasing")
        pids = [p for p, _ in self.scored_candidates]
        if self.positive_pid != pids[0]:
            raise ValueError(f"record {self.qid!r}: positive must be the top candidate")
        m = len(self.hard_negative_pids)
        if tuple(pids[1 : m + 1]) != self.hard_negative_pids:
            raise ValueError(f"record {self.qid!r}: hard negatives must be ranks 2..{m + 1}")

    def ranked_list(self) -> RankedList:
        return RankedList(qid=self.qid, entries=self.scored_candidates)


@dataclass(frozen=True)
class WeakLabelSet:
    records: tuple[WeakLabelRecord, ...]
    provenance: str

    def __post_init__(self):
        qids = [r.qid for r in self.records]
        if len(set(qids)) != len(qids):
            raise ValueError("one record per qid required")

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for r in self.records:
                rec = {
                    "qid": r.qid,
                    "candidates": [[p, s] for p, s in r.scored_candidates],
                    "positive": r.positive_pid,
                    "negatives": list(r.hard_negative_pids),
                    "provenance": self.provenance,
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path) -> "WeakLabelSet":
        records = []
        provenance = ""
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    records.append(
                        WeakLabelRecord(
                            qid=rec["qid"],
                            scored_candidates=tuple((p, float(s)) for p, s in rec["candidates"]),
                            positive_pid=rec["positive"],
                            hard_negative_pids=tuple(rec["negatives"]),
                        )
                    )
                    provenance = rec["provenance"]
                except (KeyError, ValueError, TypeError) as exc:
                    raise DataFormatError(f"{path}:{lineno}: bad weak-label record: {exc}") from exc
        return cls(records=tuple(records), provenance=provenance)


def rerank_candidates(
    scorer,
    qa: QAPair,
    candidates: RankedList,
    corpus: dict[str, Passage],
    m: int = 10,
    multi_answer: str = "max",
) -> WeakLabelRecord:
    """Score every candidate and sort descending, stably.

    With several gold answers the candidate's relevance is the maximum
    scorer output over the answers ("max" mode) or the first answer's
    score ("first" mode). Every (candidate, answer) combination costs one
    scorer invocation.
    """
    if not candidates.entries:
        raise ValueError(f"no candidates for {qa.qid!r}")
    if multi_answer not in ("max", "first"):
        raise ValueError(f"unknown multi_answer mode {multi_answer!r}")
    answers = qa.answers if multi_answer == "max" else qa.answers[:1]
    pids = candidates.pids
    items = [(corpus[pid].text, qa.question, answer) for pid in pids for answer in answers]
    flat = scorer.score_many(items)
    per_candidate = [
        max(flat[i * len(answers) : (i + 1) * len(answers)]) for i in range(len(pids))
    ]
    order = sorted(range(len(pids)), key=lambda i: -per_candidate[i])  # stable: ties keep BM25 order
    scored = tuple((pids[i], float(per_candidate[i])) for i in order)
    return WeakLabelRecord(
        qid=qa.qid,
        scored_candidates=scored,
        positive_pid=scored[0][0],
        hard_negative_pids=tuple(p for p, _ in scored[1 : m + 1]),
    )


def build_weak_labels(
    scorer,
    corpus: dict[str, Passage],
    qa_pairs: list[QAPair],
    candidate_runs: dict[str, RankedList],
    m: int = 10,
    multi_answer: str = "max",
) -> WeakLabelSet:
    """Rerank every question's candidates; failed questions are dropped whole."""
    records = []
    dropped = 0
    for qa in qa_pairs:
        if qa.qid not in candidate_runs:
            raise KeyError(f"no candidate run for qid {qa.qid!r}")
        try:
            records.append(
                rerank_candidates(scorer, qa, candidate_runs[qa.qid], corpus, m, multi_answer)
            )
        except Exception:
            dropped += 1
            logger.warning("dropping qid %s: scorer failed", qa.qid, exc_info=True)
    if dropped:
        logger.warning("dropped %d of %d questions", dropped, len(qa_pairs))
    return WeakLabelSet(records=tuple(records), provenance=scorer.name)


def extract_two_tower_pairs(
    wset: WeakLabelSet, qa_by_qid: dict[str, QAPair], corpus: dict[str, Passage]
) -> list[tuple[str, str]]:
    """One (question, top-ranked passage text) pair per record."""
    return [
        (qa_by_qid[r.qid].question, corpus[r.positive_pid].text) for r in wset.records
    ]


def extract_triplets(
    wset: WeakLabelSet,
    qa_by_qid: dict[str, QAPair],
    corpus: dict[str, Passage],
    m: int = 10,
) -> list[tuple[str, str, str]]:
    """Per record, m triplets pairing the top passage with ranks 2..m+1.

    Records with fewer than m+1 candidates are skipped with a warning.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    triplets = []
    skipped = 0
    for r in wset.records:
        if len(r.scored_candidates) < m + 1:
            skipped += 1
            logger.warning(
                "record %s has %d candidates, need %d; skipped",
                r.qid, len(r.scored_candidates), m + 1,
            )
            continue
        question = qa_by_qid[r.qid].question
        positive = corpus[r.positive_pid].text
        for pid, _ in r.scored_candidates[1 : m + 1]:
            triplets.append((question, positive, corpus[pid].text))
    if skipped:
        logger.warning("skipped %d records too short for m=%d", skipped, m)
    return triplets


def evaluate_weak_labels(
    wset: WeakLabelSet,
    bm25_runs: dict[str, RankedList],
    qrels: Qrels,
    ks: list[int],
) -> list[dict]:
    """Recall@k of the first-stage ordering versus the reranked ordering."""
    for r in wset.records:
        if r.qid not in qrels:
            raise KeyError(f"qid {r.qid!r} missing from qrels")
        if r.qid not in bm25_runs:
            raise KeyError(f"qid {r.qid!r} missing from the first-stage run")
    pre = [bm25_runs[r.qid] for r in wset.records]
    post = [r.ranked_list() for r in wset.records]
    return [
        {"k": k, "first_stage": recall_at_k(pre, qrels, k), "reranked": recall_at_k(post, qrels, k)}
        for k in ks
    ]
