"""Retrieval and answer-quality metrics, plus paired significance testing.

Generated and reference answers are normalized through the shared
tokenizer (lowercase, punctuation stripped) before any overlap counting,
so scores are reproducible across components. No SQuAD-style article
removal is applied.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from scipy.special import betainc

from .data import QAPair, Qrels, RankedList
from .tokenize import tokenize

QA_METRICS = ("f1", "rouge_l", "bleu_1")


def recall_at_k(run: list[RankedList], qrels: Qrels, k: int) -> float:
    """Mean over questions of |top-k intersect relevant| / |relevant|."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = per_question_recall(run, qrels, k)
    return sum(scores.values()) / len(scores)


def per_question_recall(run: list[RankedList], qrels: Qrels, k: int) -> dict[str, float]:
    out = {}
    for ranked in run:
        if ranked.qid not in qrels:
            raise KeyError(f"qid {ranked.qid!r} missing from qrels")
        relevant = qrels[ranked.qid]
        hits = sum(1 for pid in ranked.pids[:k] if pid in relevant)
        out[ranked.qid] = hits / len(relevant)
    if not out:
        raise ValueError("empty run")
    return out


def mrr_at_k(run: list[RankedList], qrels: Qrels, k: int) -> float:
    """Mean reciprocal rank of the first relevant pid within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = 0.0
    for ranked in run:
        if ranked.qid not in qrels:
            raise KeyError(f"qid {ranked.qid!r} missing from qrels")
        relevant = qrels[ranked.qid]
        for rank, pid in enumerate(ranked.pids[:k], start=1):
            if pid in relevant:
                total += 1.0 / rank
                break
    if not run:
        raise ValueError("empty run")
    return total / len(run)


def token_f1(generated: str, reference: str) -> float:
    """Token-level F1 with multiset (clipped) overlap counts."""
    gen = tokenize(generated)
    ref = tokenize(reference)
    if not gen or not ref:
        return 0.0
    overlap = sum((Counter(gen) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(gen)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(generated: str, reference: str) -> float:
    """LCS-based F-measure over token sequences (beta = 1)."""
    gen = tokenize(generated)
    ref = tokenize(reference)
    if not gen or not ref:
        return 0.0
    lcs = _lcs_length(gen, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(gen)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def bleu_1(generated: str, reference: str) -> float:
    """Clipped unigram precision times the brevity penalty."""
    gen = tokenize(generated)
    ref = tokenize(reference)
    if not gen or not ref:
        return 0.0
    overlap = sum((Counter(gen) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(gen)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(gen)))
    return precision * bp


@dataclass
class MetricReport:
    """Per-question scores with their arithmetic means and optional paired-test notes."""

    metric_names: tuple[str, ...]
    per_question: dict[str, dict[str, float]]  # metric -> qid -> score
    means: dict[str, float]
    significance: dict[str, dict] = field(default_factory=dict)

    def annotate_significance(self, metric: str, t: float, p: float, versus: str) -> None:
        if not (0.0 <= p <= 1.0):
            raise ValueError("p-value out of range")
        self.significance[metric] = {"t": t, "p": p, "versus": versus}

    def save_tsv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("metric\tmean\tnote\n")
            for m in self.metric_names:
                note = ""
                if m in self.significance:
                    s = self.significance[m]
                    note = f"t={s['t']:.4f} p={s['p']:.4g} vs {s['versus']}"
                fh.write(f"{m}\t{self.means[m]:.6f}\t{note}\n")

    def save_json(self, path) -> None:
        payload = {
            "metrics": list(self.metric_names),
            "means": self.means,
            "per_question": self.per_question,
            "significance": self.significance,
        }
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=None)
            fh.write("\n")


def evaluate_qa(generations: dict[str, str], qa_pairs: list[QAPair]) -> MetricReport:
    """Score generations against gold answers.

    For multi-answer questions the reference maximizing the cumulative
    F1 + Rouge-L + BLEU-1 is kept (ties keep the earliest answer), and
    the reported per-metric values all come from that reference.
    """
    per_question: dict[str, dict[str, float]] = {m: {} for m in QA_METRICS}
    for pair in qa_pairs:
        if pair.qid not in generations:
            raise KeyError(f"no generation for qid {pair.qid!r}")
        gen = generations[pair.qid]
        best = None
        for answer in pair.answers:
            triple = (token_f1(gen, answer), rouge_l(gen, answer), bleu_1(gen, answer))
            if best is None or sum(triple) > sum(best):
                best = triple
        for name, value in zip(QA_METRICS, best):
            per_question[name][pair.qid] = value
    means = {m: sum(v.values()) / len(v) for m, v in per_question.items()}
    return MetricReport(metric_names=QA_METRICS, per_question=per_question, means=means)


def paired_t_test(scores_a: list[float], scores_b: list[float]) -> tuple[float, float]:
    """Two-sided paired t-test; p from the t distribution with n-1 dof.

    The CDF comes from the regularized incomplete beta identity
    ``p = I_{nu/(nu+t^2)}(nu/2, 1/2)``. Zero-variance, zero-mean
    differences return (0, 1) by convention; zero-variance nonzero-mean
    differences return (+/-inf, 0).
    """
    if len(scores_a) != len(scores_b):
        raise ValueError("paired samples must have equal length")
    n = len(scores_a)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    diffs = [a - b for a, b in zip(scores_a, scores_b)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / math.sqrt(var / n)
    nu = n - 1
    p = float(betainc(nu / 2.0, 0.5, nu / (nu + t * t)))
    return t, p
