"""Corpus, question-answer, qrels and run-file management.

File conventions follow the retrieval-evaluation ecosystem: corpora and
QA pairs are JSONL, relevance judgments are 4-column TSV
(``qid 0 pid relevance``), rankings are 6-column TREC run files
(``qid Q0 pid rank score tag``). Loaded stores are plain immutable-by-
convention objects, safe for concurrent readers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """A file does not conform to its documented format."""


@dataclass(frozen=True)
class Passage:
    pid: str
    text: str
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.pid:
            raise DataFormatError("passage id must be non-empty")
        if not self.text:
            raise DataFormatError(f"passage {self.pid!r} has empty text")


@dataclass(frozen=True)
class QAPair:
    qid: str
    question: str
    answers: tuple[str, ...]
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.qid:
            raise DataFormatError("question id must be non-empty")
        if not self.answers:
            raise DataFormatError(f"question {self.qid!r} has no answers")
        if any(not a for a in self.answers):
            raise DataFormatError(f"question {self.qid!r} has an empty answer")


# qid -> set of relevant pids
Qrels = dict[str, set[str]]


@dataclass(frozen=True)
class RankedList:
    """Ordered (pid, score) entries for one question, best first."""

    qid: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        pids = [p for p, _ in self.entries]
        if len(set(pids)) != len(pids):
            raise DataFormatError(f"ranked list for {self.qid!r} repeats a pid")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise DataFormatError(f"ranked list for {self.qid!r} has increasing scores")

    @property
    def pids(self) -> list[str]:
        return [p for p, _ in self.entries]


@dataclass(frozen=True)
class DatasetSplit:
    train: list[QAPair]
    validation: list[QAPair]
    test: list[QAPair]


def _read_jsonl(path) -> list[tuple[int, dict]]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            records.append((lineno, obj))
    if not records:
        raise DataFormatError(f"{path}: file is empty")
    return records


def load_corpus(path) -> dict[str, Passage]:
    """Load a JSONL corpus of ``{"_id": ..., "text": ...}`` records.

    Duplicate ids and malformed lines are rejected with the offending
    line number. Unknown extra fields are preserved for round-tripping.
    """
    corpus: dict[str, Passage] = {}
    for lineno, obj in _read_jsonl(path):
        try:
            pid = obj.pop("_id")
            text = obj.pop("text")
        except KeyError as exc:
            raise DataFormatError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        if not isinstance(pid, str) or not isinstance(text, str):
            raise DataFormatError(f"{path}:{lineno}: _id and text must be strings")
        if pid in corpus:
            raise DataFormatError(f"{path}:{lineno}: duplicate passage id {pid!r}")
        try:
            corpus[pid] = Passage(pid=pid, text=text, extra=obj)
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return corpus


def save_corpus(corpus: dict[str, Passage], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pid in corpus:
            p = corpus[pid]
            rec = {"_id": p.pid, "text": p.text, **p.extra}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_qa_pairs(path) -> list[QAPair]:
    """Load JSONL ``{"qid": ..., "question": ..., "answers": [...]}`` records.

    File order is preserved, as is the order of each answer list.
    """
    pairs: list[QAPair] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        try:
            qid = obj.pop("qid")
            question = obj.pop("question")
            answers = obj.pop("answers")
        except KeyError as exc:
            raise DataFormatError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        if not isinstance(answers, list):
            raise DataFormatError(f"{path}:{lineno}: answers must be a list")
        if qid in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate question id {qid!r}")
        seen.add(qid)
        try:
            pairs.append(QAPair(qid=qid, question=question, answers=tuple(answers), extra=obj))
        except DataFormatError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def save_qa_pairs(pairs: list[QAPair], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"qid": p.qid, "question": p.question, "answers": list(p.answers), **p.extra}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_qrels(path, corpus: dict[str, Passage] | None = None) -> Qrels:
    """Load 4-column TSV qrels; lines judged 0 are skipped."""
    path = Path(path)
    qrels: Qrels = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
            qid, _, pid, rel = cols
            try:
                relevance = int(rel)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-integer relevance {rel!r}") from exc
            if relevance <= 0:
                continue
            if corpus is not None and pid not in corpus:
                raise DataFormatError(f"{path}:{lineno}: pid {pid!r} not in corpus")
            qrels.setdefault(qid, set()).add(pid)
    if not qrels:
        raise DataFormatError(f"{path}: no positive judgments found")
    return qrels


def save_qrels(qrels: Qrels, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for pid in sorted(qrels[qid]):
                fh.write(f"{qid}\t0\t{pid}\t1\n")


def split_qa(pairs: list[QAPair], seed: int, sizes: tuple[int, int, int]) -> DatasetSplit:
    """Uniform random split without replacement, deterministic per seed.

    The split depends only on the member set, not on input order: pairs
    are keyed by qid before the seeded permutation is drawn.
    """
    n_train, n_val, n_test = sizes
    total = n_train + n_val + n_test
    if total > len(pairs):
        raise ValueError(f"requested {total} pairs but only {len(pairs)} available")
    by_qid = sorted(pairs, key=lambda p: p.qid)
    if len({p.qid for p in by_qid}) != len(by_qid):
        raise ValueError("duplicate qids in input pairs")
    order = np.random.default_rng(seed).permutation(len(by_qid))
    picked = [by_qid[i] for i in order[:total]]
    return DatasetSplit(
        train=picked[:n_train],
        validation=picked[n_train : n_train + n_val],
        test=picked[n_train + n_val :],
    )


def write_run_file(run: list[RankedList], path, tag: str = "ragkit") -> None:
    """Persist rankings in 6-column TREC format, scores at 6 decimals."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for ranked in run:
            for rank, (pid, score) in enumerate(ranked.entries, start=1):
                fh.write(f"{ranked.qid} Q0 {pid} {rank} {score:.6f} {tag}\n")


def read_run_file(path) -> list[RankedList]:
    """Read a TREC run file back into ranked lists, in file order."""
    path = Path(path)
    per_qid: dict[str, list[tuple[str, float]]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) != 6:
                raise DataFormatError(f"{path}:{lineno}: expected 6 columns, got {len(cols)}")
            qid, _, pid, rank, score, _ = cols
            try:
                rank_i = int(rank)
                score_f = float(score)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad rank or score") from exc
            entries = per_qid.setdefault(qid, [])
            if rank_i != len(entries) + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: rank column {rank_i} inconsistent with order "
                    f"(expected {len(entries) + 1})"
                )
            entries.append((pid, score_f))
    return [RankedList(qid=qid, entries=tuple(entries)) for qid, entries in per_qid.items()]
