"""Language-model gateway: prompt construction, answer-likelihood scoring,
answer generation, and a deterministic offline mock.

The remote side is a completion-style HTTP endpoint that can echo a
supplied continuation with per-token log-probabilities:

    POST {base_url}/v1/completions
    {"model": ..., "prompt": prompt + answer, "max_tokens": 0,
     "echo": true, "logprobs": 0, "temperature": 0}

    -> {"choices": [{"text": ...,
                     "logprobs": {"tokens": [...],
                                  "token_logprobs": [...],
                                  "text_offset": [...]}}]}

The answer span is located by character offset: tokens whose
``text_offset`` falls at or beyond the prompt length are the answer
continuation, and the relevance score is the mean of their
log-probabilities. The answer's token count is whatever the remote
tokenizer reports for that span. Generation uses the same endpoint with
``max_tokens`` set and temperature 0.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import requests

from .tokenize import tokenize


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Network-level failure that persisted through all retries."""


class ResponseFormatError(GatewayError):
    """The service answered, but not in the documented shape."""


class ScoreOrdering(str, Enum):
    PASSAGE_QUESTION_INSTRUCTION = "passage_question_instruction"
    PASSAGE_INSTRUCTION_QUESTION = "passage_instruction_question"
    INSTRUCTION_PASSAGE_QUESTION = "instruction_passage_question"


DEFAULT_SCORE_INSTRUCTION = (
    "Based on the document above, answer the question. "
    "Respond with the exact answer only, no explanation."
)
DEFAULT_QA_INSTRUCTION = (
    "Answer the question using the documents above if they are helpful; "
    "otherwise answer from your own knowledge. Give a short answer."
)


@dataclass(frozen=True)
class PromptTemplate:
    passage_label: str = "DOCUMENT"
    score_ordering: ScoreOrdering = ScoreOrdering.PASSAGE_QUESTION_INSTRUCTION
    score_instruction: str = DEFAULT_SCORE_INSTRUCTION
    qa_instruction: str = DEFAULT_QA_INSTRUCTION

    def __post_init__(self):
        if not self.passage_label:
            raise ValueError("passage label must be non-empty")
        if not isinstance(self.score_ordering, ScoreOrdering):
            object.__setattr__(self, "score_ordering", ScoreOrdering(self.score_ordering))

    def digest(self) -> str:
        blob = json.dumps(
            [self.passage_label, self.score_ordering.value, self.score_instruction,
             self.qa_instruction],
            ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class TokenLogProb:
    token: str
    logprob: float

    def __post_init__(self):
        if self.logprob > 0.0:
            raise ResponseFormatError(f"logprob {self.logprob} > 0 for token {self.token!r}")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "RAGKIT_API_KEY"
    timeout_s: float = 30.0
    max_in_flight: int = 4
    retries: int = 3
    cache_path: str | None = None

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


def build_score_prompt(passage: str, question: str, template: PromptTemplate) -> str:
    """Assemble the weak-label scoring prompt in the template's section order."""
    if not passage or not question:
        raise ValueError("passage and question must be non-empty")
    sections = {
        "passage": f"{template.passage_label}: {passage}",
        "question": f"QUESTION: {question}",
        "instruction": template.score_instruction,
    }
    order = {
        ScoreOrdering.PASSAGE_QUESTION_INSTRUCTION: ("passage", "question", "instruction"),
        ScoreOrdering.PASSAGE_INSTRUCTION_QUESTION: ("passage", "instruction", "question"),
        ScoreOrdering.INSTRUCTION_PASSAGE_QUESTION: ("instruction", "passage", "question"),
    }[template.score_ordering]
    return "\n\n".join([sections[name] for name in order] + ["ANSWER:"])


def build_qa_prompt(passages: list[str], question: str, template: PromptTemplate) -> str:
    """Assemble the question-answering prompt; zero passages is the no-retrieval baseline."""
    if not question:
        raise ValueError("question must be non-empty")
    blocks = []
    for i, text in enumerate(passages, start=1):
        label = template.passage_label if len(passages) == 1 else f"{template.passage_label} {i}"
        blocks.append(f"{label}: {text}")
    blocks.append(f"QUESTION: {question}")
    blocks.append(template.qa_instruction)
    blocks.append("ANSWER:")
    return "\n\n".join(blocks)


def mock_containment_score(passage: str, question: str, answer: str) -> float:
    """Fraction of distinct answer tokens present in the passage token set."""
    answer_tokens = set(tokenize(answer))
    if not answer_tokens:
        return 0.0
    passage_tokens = set(tokenize(passage))
    return len(answer_tokens & passage_tokens) / len(answer_tokens)


class HttpTransport:
    """POSTs JSON payloads with per-request retries and exponential backoff."""

    RETRYABLE_STATUS = {429, 500, 502, 503, 504}

    def __init__(self, config: EndpointConfig, backoff_s: float = 0.5):
        self.config = config
        self.backoff_s = backoff_s
        self._session = requests.Session()

    def __call__(self, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + "/v1/completions"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_error = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout_s
                )
                if resp.status_code in self.RETRYABLE_STATUS:
                    last_error = f"HTTP {resp.status_code}"
                elif resp.status_code != 200:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last_error = repr(exc)
            if attempt < self.config.retries:
                time.sleep(self.backoff_s * (2**attempt))
        raise TransportError(f"request failed after {self.config.retries + 1} attempts: {last_error}")


class CompletionClient:
    """Scores answer continuations and generates completions over one endpoint.

    Scores are cached on (model, prompt digest, answer); the cache can be
    persisted to a JSONL file so reruns are cheap and deterministic.
    Concurrency is bounded by the endpoint config and results are keyed
    by request index, never by completion order.
    """

    def __init__(self, config: EndpointConfig, transport=None):
        self.config = config
        self.transport = transport or HttpTransport(config)
        self._cache: dict[tuple[str, str, str], float] = {}
        self._cache_lock = threading.Lock()
        if config.cache_path and Path(config.cache_path).exists():
            with open(config.cache_path, encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    self._cache[(rec["model"], rec["prompt_sha"], rec["answer"])] = rec["score"]

    def answer_token_logprobs(self, prompt: str, answer: str) -> list[TokenLogProb]:
        """Echo-score prompt+answer and slice out the answer-span tokens."""
        if not answer:
            raise ValueError("answer must be non-empty")
        payload = {
            "model": self.config.model,
            "prompt": prompt + answer,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0,
        }
        response = self.transport(payload)
        try:
            lp = response["choices"][0]["logprobs"]
            tokens = lp["tokens"]
            logprobs = lp["token_logprobs"]
            offsets = lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ResponseFormatError("service response missing log-probabilities") from exc
        span = []
        for token, logprob, offset in zip(tokens, logprobs, offsets):
            if offset < len(prompt):
                continue
            if logprob is None:
                raise ResponseFormatError(f"missing log-probability for answer token {token!r}")
            span.append(TokenLogProb(token=token, logprob=float(logprob)))
        if not span:
            raise ResponseFormatError("service reported zero answer tokens")
        return span

    def score_answer_loglik(self, prompt: str, answer: str) -> float:
        """Mean per-token log-likelihood of the answer continuation."""
        key = (
            self.config.model,
            hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            answer,
        )
        with self._cache_lock:
            if key in self._cache:
                return self._cache[key]
        span = self.answer_token_logprobs(prompt, answer)
        score = sum(t.logprob for t in span) / len(span)
        with self._cache_lock:
            self._cache[key] = score
            if self.config.cache_path:
                rec = {"model": key[0], "prompt_sha": key[1], "answer": key[2], "score": score}
                with open(self.config.cache_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return score

    def score_answer_loglik_many(self, items: list[tuple[str, str]]) -> list[float]:
        """Score (prompt, answer) pairs concurrently; output order matches input order."""
        if len(items) <= 1 or self.config.max_in_flight == 1:
            return [self.score_answer_loglik(p, a) for p, a in items]
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            futures = [pool.submit(self.score_answer_loglik, p, a) for p, a in items]
            return [f.result() for f in futures]

    def generate(self, prompt: str, max_tokens: int = 20) -> str:
        """Greedy completion capped at max_tokens by the service."""
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0,
        }
        response = self.transport(payload)
        try:
            text = response["choices"][0]["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ResponseFormatError("service response missing completion text") from exc
        if not text.strip():
            raise ResponseFormatError("service returned an empty completion")
        return text.strip()


class FixtureTransport:
    """Replays recorded endpoint responses in order; for offline tests."""

    def __init__(self, responses: list[dict]):
        self.responses = list(responses)
        self.requests: list[dict] = []

    def __call__(self, payload: dict) -> dict:
        self.requests.append(payload)
        if not self.responses:
            raise TransportError("fixture exhausted")
        return self.responses.pop(0)


def echo_response_from_pairs(prompt: str, pairs: list[tuple[str, float]]) -> dict:
    """Build an echo-scoring response whose answer span matches `pairs`.

    `pairs` is the recorded-fixture format: a JSON-style array of
    [token, logprob] entries for the answer continuation.
    """
    tokens, logprobs, offsets = [], [], []
    offset = 0
    for chunk in prompt.split():  # prompt side: logprobs may be unknown (null)
        tokens.append(chunk + " ")
        logprobs.append(None)
        offsets.append(offset)
        offset += len(chunk) + 1
    offset = len(prompt)
    for token, logprob in pairs:
        tokens.append(token)
        logprobs.append(logprob)
        offsets.append(offset)
        offset += len(token)
    return {
        "choices": [
            {
                "text": prompt + "".join(t for t, _ in pairs),
                "logprobs": {
                    "tokens": tokens,
                    "token_logprobs": logprobs,
                    "text_offset": offsets,
                },
            }
        ]
    }


class MockLLMClient:
    """Deterministic offline stand-in for the generation side.

    ``generate`` echoes the first sentence of the first passage block in
    the prompt, truncated to ``max_tokens`` whitespace tokens; with no
    passage block it answers "unknown". Pure function of its inputs.
    """

    def __init__(self, template: PromptTemplate | None = None):
        self.template = template or PromptTemplate()

    def generate(self, prompt: str, max_tokens: int = 20) -> str:
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        label = self.template.passage_label
        for block in prompt.split("\n\n"):
            head, _, content = block.partition(":")
            if head == label or (head.startswith(label + " ") and head[len(label) + 1 :].isdigit()):
                sentence = content.strip().split(".")[0]
                words = sentence.split()
                if words:
                    return " ".join(words[:max_tokens])
        return "unknown"


class ContainmentScorer:
    """Oracle scorer: answer-token containment, in [0, 1]. Offline and pure."""

    name = "containment-oracle"

    def score(self, passage: str, question: str, answer: str) -> float:
        return mock_containment_score(passage, question, answer)

    def score_many(self, items: list[tuple[str, str, str]]) -> list[float]:
        return [self.score(p, q, a) for p, q, a in items]


class AnswerLikelihoodScorer:
    """Scores passages by the LLM's mean answer log-likelihood (always <= 0)."""

    def __init__(self, client: CompletionClient, template: PromptTemplate | None = None):
        self.client = client
        self.template = template or PromptTemplate()
        self.name = f"loglik:{client.config.model}:{self.template.digest()}"

    def _prompt_and_continuation(self, passage: str, question: str, answer: str):
        prompt = build_score_prompt(passage, question, self.template)
        return prompt, " " + answer

    def score(self, passage: str, question: str, answer: str) -> float:
        prompt, continuation = self._prompt_and_continuation(passage, question, answer)
        return self.client.score_answer_loglik(prompt, continuation)

    def score_many(self, items: list[tuple[str, str, str]]) -> list[float]:
        pairs = [self._prompt_and_continuation(p, q, a)[:2] for p, q, a in items]
        return self.client.score_answer_loglik_many(pairs)
