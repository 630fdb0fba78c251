"""End-to-end question answering: retrieve top-n passages, build the QA
prompt, generate, and persist per-question results with latencies.

Latency is measured around the generation call only; retrieval cost is
the caller's to time so the two stay attributable. Batch runs append one
JSONL line per answered question, so an interrupted run resumes by
skipping qids already present in the output file.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .data import Passage, QAPair, Qrels, RankedList
from .llm import PromptTemplate, build_qa_prompt

RETRIEVER_SELECTORS = ("bm25", "two-tower", "late-interaction", "none", "gold")


@dataclass(frozen=True)
class QAConfig:
    retriever: str = "bm25"
    top_n: int = 1
    max_tokens: int = 20

    def __post_init__(self):
        if self.retriever not in RETRIEVER_SELECTORS:
            raise ValueError(f"unknown retriever selector {self.retriever!r}")
        if self.top_n < 0:
            raise ValueError("top_n must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


class RetrieverHandle(Protocol):
    def retrieve(self, qid: str, question: str, k: int) -> RankedList: ...


def answer_question(
    config: QAConfig,
    qa: QAPair,
    retriever: RetrieverHandle | None,
    client,
    corpus: dict[str, Passage],
    template: PromptTemplate | None = None,
    qrels: Qrels | None = None,
) -> tuple[str, list[str]]:
    """Generate one answer; returns (answer text, pids inserted into the prompt).

    Selector "none" sends zero passages; "gold" injects judged-relevant
    passages instead of retrieving.
    """
    template = template or PromptTemplate()
    if config.retriever == "none" or config.top_n == 0:
        used_pids: list[str] = []
    elif config.retriever == "gold":
        if qrels is None or qa.qid not in qrels:
            raise ValueError(f"gold selector needs qrels covering {qa.qid!r}")
        used_pids = sorted(qrels[qa.qid])[: config.top_n]
    else:
        if retriever is None:
            raise ValueError(f"selector {config.retriever!r} needs a retriever handle")
        ranked = retriever.retrieve(qa.qid, qa.question, config.top_n)
        used_pids = ranked.pids[: config.top_n]
    passages = [corpus[pid].text for pid in used_pids]
    prompt = build_qa_prompt(passages, qa.question, template)
    answer = client.generate(prompt, max_tokens=config.max_tokens)
    return answer, used_pids


def run_qa_batch(
    config: QAConfig,
    qa_pairs: list[QAPair],
    retriever: RetrieverHandle | None,
    client,
    corpus: dict[str, Passage],
    template: PromptTemplate | None = None,
    qrels: Qrels | None = None,
    out_path=None,
) -> tuple[dict[str, str], dict]:
    """Answer every question, recording per-question generation latency.

    With `out_path`, each result is appended as soon as it exists and a
    rerun resumes past qids already on disk. Returns the full answer map
    (existing plus new) and a latency summary in milliseconds.
    """
    answers: dict[str, str] = {}
    done: set[str] = set()
    out_file = None
    if out_path is not None:
        out_path = Path(out_path)
        if out_path.exists():
            with out_path.open(encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    answers[rec["qid"]] = rec["answer"]
                    done.add(rec["qid"])
        out_file = out_path.open("a", encoding="utf-8")

    latencies = []
    try:
        for qa in qa_pairs:
            if qa.qid in done:
                continue
            start = time.perf_counter()
            answer, used_pids = answer_question(
                config, qa, retriever, client, corpus, template, qrels
            )
            latency_ms = (time.perf_counter() - start) * 1000.0
            answers[qa.qid] = answer
            latencies.append(latency_ms)
            if out_file is not None:
                rec = {
                    "qid": qa.qid,
                    "answer": answer,
                    "used_pids": used_pids,
                    "latency_ms": round(latency_ms, 3),
                }
                out_file.write(json.dumps(rec, ensure_ascii=False) + "\n")
                out_file.flush()
    finally:
        if out_file is not None:
            out_file.close()

    summary = {
        "generated": len(latencies),
        "resumed": len(done),
        "mean_latency_ms": sum(latencies) / len(latencies) if latencies else 0.0,
    }
    return answers, summary


class BM25Handle:
    def __init__(self, index):
        self.index = index

    def retrieve(self, qid: str, question: str, k: int) -> RankedList:
        return self.index.retrieve_topk_for(qid, question, k)


class TwoTowerHandle:
    def __init__(self, params, matrix, max_query_tokens: int = 32):
        self.params = params
        self.matrix = matrix
        self.max_query_tokens = max_query_tokens

    def retrieve(self, qid: str, question: str, k: int) -> RankedList:
        from .twotower import search_text

        return search_text(self.params, self.matrix, qid, question, k, self.max_query_tokens)


class LateInteractionHandle:
    def __init__(self, params, store, max_query_tokens: int = 32):
        self.params = params
        self.store = store
        self.max_query_tokens = max_query_tokens

    def retrieve(self, qid: str, question: str, k: int) -> RankedList:
        from .lateinteraction import search_maxsim

        return search_maxsim(self.params, self.store, qid, question, k, self.max_query_tokens)
