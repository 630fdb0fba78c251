"""Self-contained synthetic OpenQA dataset for offline runs.

Every question asks for one attribute of a two-word entity. Exactly one
passage (the gold) states the answer verbatim; a few "near miss"
passages mention the same entity more often but under a different
attribute and never contain the answer tokens; the rest of the corpus is
filler. The construction gives first-stage lexical retrieval a high
Recall@100 but a poor Recall@1 (near misses outscore the gold on term
frequency), which is exactly the regime answer-aware reranking and the
trained retrievers are supposed to fix.

Entity pairs are unique per question but the entity *words* come from a
shared vocabulary, so token-level structure learned on the training
split transfers to held-out questions the way recurring vocabulary does
in real corpora.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Passage, QAPair, Qrels

ATTRIBUTES = ("color", "size", "weight", "origin", "texture", "flavor", "shape", "volume")

_CONSONANTS = "bcdfghjklmnpqrstvwz"
_VOWELS = "aeiou"
_RESERVED = set(ATTRIBUTES) | {
    "what", "is", "the", "of", "linked", "with", "though", "differ",
}


@dataclass(frozen=True)
class SyntheticDataset:
    corpus: dict[str, Passage]
    qa_pairs: list[QAPair]
    qrels: Qrels


def _new_word(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        n_syllables = int(rng.integers(2, 4))
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(n_syllables)
        )
        if word not in used and word not in _RESERVED:
            used.add(word)
            return word


def make_synthetic_dataset(
    n_questions: int = 200,
    n_passages: int = 5000,
    seed: int = 0,
    max_near_misses: int = 4,
    filler_vocab: int = 400,
    entity_vocab: int = 240,
) -> SyntheticDataset:
    """Generate a corpus, QA pairs and single-gold qrels, deterministically per seed.

    Each question draws 0..max_near_misses near-miss passages, so a
    fraction of the golds do sit at first-stage rank 1 and the rerank
    lift is a shift, not a step function.
    """
    min_needed = n_questions * (1 + max_near_misses)
    if n_passages < min_needed:
        raise ValueError(f"need at least {min_needed} passages for {n_questions} questions")
    if entity_vocab * (entity_vocab - 1) // 2 < n_questions:
        raise ValueError("entity vocabulary too small for distinct pairs")
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    filler = [_new_word(rng, used) for _ in range(filler_vocab)]
    entities = [_new_word(rng, used) for _ in range(entity_vocab)]

    def filler_span(n: int) -> str:
        return " ".join(filler[i] for i in rng.integers(len(filler), size=n))

    texts: list[tuple[str, str | None]] = []  # (text, qid of gold or None)
    qa_pairs: list[QAPair] = []
    seen_pairs: set[tuple[str, str]] = set()
    for i in range(n_questions):
        qid = f"q{i:04d}"
        attr = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
        while True:
            ea, eb = (entities[j] for j in rng.choice(entity_vocab, size=2, replace=False))
            if (ea, eb) not in seen_pairs:
                seen_pairs.add((ea, eb))
                seen_pairs.add((eb, ea))
                break
        a1, a2 = _new_word(rng, used), _new_word(rng, used)
        qa_pairs.append(
            QAPair(qid=qid, question=f"what is the {attr} of {ea} {eb}", answers=(f"{a1} {a2}",))
        )
        gold = (
            f"the {attr} of {ea} {eb} is {a1} {a2}. "
            + filler_span(int(rng.integers(22, 30)))
        )
        texts.append((gold, qid))
        for _ in range(int(rng.integers(0, max_near_misses + 1))):
            other = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
            while other == attr:
                other = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
            near = (
                f"the {other} of {ea} {eb} is linked with {ea} {eb} though {ea} {eb} differ. "
                + filler_span(int(rng.integers(16, 24)))
            )
            texts.append((near, None))
    while len(texts) < n_passages:
        texts.append((filler_span(int(rng.integers(26, 36))) + ".", None))

    order = rng.permutation(len(texts))
    corpus: dict[str, Passage] = {}
    qrels: Qrels = {}
    for new_index, old_index in enumerate(order):
        pid = f"p{new_index:05d}"
        text, gold_qid = texts[old_index]
        corpus[pid] = Passage(pid=pid, text=text)
        if gold_qid is not None:
            qrels[gold_qid] = {pid}
    return SyntheticDataset(corpus=corpus, qa_pairs=qa_pairs, qrels=qrels)
