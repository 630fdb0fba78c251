import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragkit.llm import (
    AnswerLikelihoodScorer,
    CompletionClient,
    ContainmentScorer,
    EndpointConfig,
    FixtureTransport,
    MockLLMClient,
    PromptTemplate,
    ResponseFormatError,
    ScoreOrdering,
    TokenLogProb,
    TransportError,
    build_qa_prompt,
    build_score_prompt,
    echo_response_from_pairs,
    mock_containment_score,
)

FIXTURES = Path(__file__).parent / "fixtures"


def config(**kwargs):
    defaults = dict(base_url="http://llm.test", model="test-model", retries=0, timeout_s=5.0)
    defaults.update(kwargs)
    return EndpointConfig(**defaults)


class TestScorePrompt:
    def test_default_ordering_passage_question_instruction(self):
        t = PromptTemplate()
        prompt = build_score_prompt("some passage", "some question", t)
        assert prompt.index("DOCUMENT:") < prompt.index("QUESTION:") < prompt.index(
            t.score_instruction
        )
        assert prompt.rstrip().endswith("ANSWER:")

    def test_instruction_first_ordering(self):
        t = PromptTemplate(score_ordering=ScoreOrdering.INSTRUCTION_PASSAGE_QUESTION)
        prompt = build_score_prompt("p", "q", t)
        assert prompt.index(t.score_instruction) < prompt.index("DOCUMENT:")

    def test_label_override(self):
        t = PromptTemplate(passage_label="PASSAGE")
        prompt = build_score_prompt("p", "q", t)
        assert "PASSAGE:" in prompt and "DOCUMENT:" not in prompt

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            build_score_prompt("", "q", PromptTemplate())
        with pytest.raises(ValueError):
            build_score_prompt("p", "", PromptTemplate())

    def test_ordering_accepts_string_value(self):
        t = PromptTemplate(score_ordering="passage_instruction_question")
        assert t.score_ordering is ScoreOrdering.PASSAGE_INSTRUCTION_QUESTION


class TestQAPrompt:
    def test_single_passage_single_block(self):
        prompt = build_qa_prompt(["only passage"], "q", PromptTemplate())
        assert prompt.count("DOCUMENT:") == 1
        assert "DOCUMENT 1:" not in prompt

    def test_zero_passages_naive(self):
        t = PromptTemplate()
        prompt = build_qa_prompt([], "the question", t)
        assert "DOCUMENT" not in prompt
        assert "QUESTION: the question" in prompt
        assert t.qa_instruction in prompt

    def test_three_passages_rank_order(self):
        prompt = build_qa_prompt(["first", "second", "third"], "q", PromptTemplate())
        assert (
            prompt.index("DOCUMENT 1: first")
            < prompt.index("DOCUMENT 2: second")
            < prompt.index("DOCUMENT 3: third")
        )


class TestContainment:
    def test_full_containment(self):
        assert mock_containment_score("in 2018 something", "when", "2018") == 1.0

    def test_half(self):
        assert mock_containment_score("only alpha here", "q", "alpha beta") == 0.5

    def test_disjoint(self):
        assert mock_containment_score("nothing relevant", "q", "zebra") == 0.0

    @given(st.text(max_size=50), st.text(max_size=20), st.text(max_size=10))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_passage_tokens(self, passage, answer, extra):
        base = mock_containment_score(passage, "q", answer)
        grown = mock_containment_score(passage + " " + extra, "q", answer)
        assert grown >= base - 1e-12


class TestScoring:
    def test_certain_answer_scores_zero(self):
        prompt = "PROMPT:"
        transport = FixtureTransport(
            [echo_response_from_pairs(prompt, [("a", 0.0), ("b", 0.0)])]
        )
        client = CompletionClient(config(), transport=transport)
        assert client.score_answer_loglik(prompt, "ab") == 0.0

    def test_mean_is_forced(self):
        prompt = "P:"
        transport = FixtureTransport(
            [echo_response_from_pairs(prompt, [("x", -0.5), ("y", -1.5)])]
        )
        client = CompletionClient(config(), transport=transport)
        assert client.score_answer_loglik(prompt, "xy") == pytest.approx(-1.0, abs=1e-12)

    def test_fixture_replay_matches_hand_average(self):
        pairs = [tuple(p) for p in json.loads((FIXTURES / "answer_logprobs.json").read_text())]
        prompt = "DOCUMENT: d\n\nQUESTION: q\n\nanswer now\n\nANSWER:"
        answer = "".join(t for t, _ in pairs)
        transport = FixtureTransport([echo_response_from_pairs(prompt, pairs)])
        client = CompletionClient(config(), transport=transport)
        hand_mean = sum(lp for _, lp in pairs) / len(pairs)
        assert client.score_answer_loglik(prompt, answer) == pytest.approx(hand_mean, abs=1e-9)

    def test_missing_logprobs_rejected(self):
        transport = FixtureTransport([{"choices": [{"text": "x"}]}])
        client = CompletionClient(config(), transport=transport)
        with pytest.raises(ResponseFormatError, match="log-prob"):
            client.score_answer_loglik("p", "a")

    def test_zero_answer_tokens_rejected(self):
        prompt = "a long prompt"
        response = echo_response_from_pairs(prompt, [("x", -1.0)])
        # shift the answer token's offset back into the prompt span
        response["choices"][0]["logprobs"]["text_offset"][-1] = 0
        client = CompletionClient(config(), transport=FixtureTransport([response]))
        with pytest.raises(ResponseFormatError, match="zero answer tokens"):
            client.score_answer_loglik(prompt, "x")

    def test_positive_logprob_rejected(self):
        with pytest.raises(ResponseFormatError):
            TokenLogProb(token="x", logprob=0.5)

    def test_cache_avoids_second_request(self):
        prompt = "P:"
        transport = FixtureTransport([echo_response_from_pairs(prompt, [("x", -2.0)])])
        client = CompletionClient(config(), transport=transport)
        first = client.score_answer_loglik(prompt, "x")
        second = client.score_answer_loglik(prompt, "x")  # would raise if a request went out
        assert first == second == pytest.approx(-2.0)

    def test_cache_file_roundtrip(self, tmp_path):
        prompt = "P:"
        cache = tmp_path / "scores.jsonl"
        transport = FixtureTransport([echo_response_from_pairs(prompt, [("x", -2.0)])])
        client = CompletionClient(config(cache_path=str(cache)), transport=transport)
        client.score_answer_loglik(prompt, "x")
        fresh = CompletionClient(config(cache_path=str(cache)), transport=FixtureTransport([]))
        assert fresh.score_answer_loglik(prompt, "x") == pytest.approx(-2.0)

    def test_score_many_keyed_by_index(self):
        prompts = [f"P{i}:" for i in range(4)]
        responses = {
            p: echo_response_from_pairs(p, [("x", -float(i))]) for i, p in enumerate(prompts)
        }

        def transport(payload):
            for p in prompts:
                if payload["prompt"].startswith(p):
                    return responses[p]
            raise AssertionError

        client = CompletionClient(config(max_in_flight=3), transport=transport)
        scores = client.score_answer_loglik_many([(p, "x") for p in prompts])
        assert scores == [0.0, -1.0, -2.0, -3.0]


class TestGenerate:
    def test_request_carries_default_limit(self):
        transport = FixtureTransport([{"choices": [{"text": " an answer"}]}])
        client = CompletionClient(config(), transport=transport)
        assert client.generate("p") == "an answer"
        assert transport.requests[0]["max_tokens"] == 20
        assert transport.requests[0]["temperature"] == 0

    def test_zero_max_tokens_rejected(self):
        client = CompletionClient(config(), transport=FixtureTransport([]))
        with pytest.raises(ValueError):
            client.generate("p", max_tokens=0)

    def test_empty_completion_rejected(self):
        transport = FixtureTransport([{"choices": [{"text": "   "}]}])
        client = CompletionClient(config(), transport=transport)
        with pytest.raises(ResponseFormatError):
            client.generate("p")

    def test_transport_error_after_fixture_exhausted(self):
        client = CompletionClient(config(), transport=FixtureTransport([]))
        with pytest.raises(TransportError):
            client.generate("p")


class TestMockClient:
    def test_echoes_first_sentence_of_top_passage(self):
        template = PromptTemplate()
        prompt = build_qa_prompt(
            ["the answer is here. more text follows.", "second passage."], "q", template
        )
        client = MockLLMClient(template)
        assert client.generate(prompt) == "the answer is here"

    def test_truncates_to_max_tokens(self):
        template = PromptTemplate()
        prompt = build_qa_prompt(["one two three four five"], "q", template)
        assert MockLLMClient(template).generate(prompt, max_tokens=3) == "one two three"

    def test_no_passage_answers_unknown(self):
        template = PromptTemplate()
        prompt = build_qa_prompt([], "q", template)
        assert MockLLMClient(template).generate(prompt) == "unknown"

    def test_deterministic(self):
        template = PromptTemplate()
        prompt = build_qa_prompt(["alpha beta. gamma."], "q", template)
        outputs = {MockLLMClient(template).generate(prompt) for _ in range(5)}
        assert outputs == {"alpha beta"}


class TestScorers:
    def test_containment_scorer_name_and_contract(self):
        scorer = ContainmentScorer()
        assert scorer.name == "containment-oracle"
        assert 0.0 <= scorer.score("p has 2018", "q", "2018") <= 1.0

    def test_likelihood_scorer_builds_prompt_and_is_nonpositive(self):
        template = PromptTemplate()
        recorded = {}

        def transport(payload):
            recorded["prompt+answer"] = payload["prompt"]
            prompt = payload["prompt"][: -len(" 2018")]
            return echo_response_from_pairs(prompt, [(" 2018", -0.25)])

        client = CompletionClient(config(), transport=transport)
        scorer = AnswerLikelihoodScorer(client, template)
        score = scorer.score("passage text", "question text", "2018")
        assert score == pytest.approx(-0.25)
        assert score <= 0.0
        assert "DOCUMENT: passage text" in recorded["prompt+answer"]
        assert scorer.name.startswith("loglik:test-model:")

    def test_endpoint_config_invariants(self):
        with pytest.raises(ValueError):
            EndpointConfig(base_url="x", model="m", timeout_s=0)
        with pytest.raises(ValueError):
            EndpointConfig(base_url="x", model="m", max_in_flight=0)
