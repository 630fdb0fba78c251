import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ragkit.data import QAPair, RankedList
from ragkit.metrics import (
    MetricReport,
    bleu_1,
    evaluate_qa,
    mrr_at_k,
    paired_t_test,
    recall_at_k,
    rouge_l,
    token_f1,
)


def ranked(qid, pids):
    return RankedList(qid=qid, entries=tuple((p, float(len(pids) - i)) for i, p in enumerate(pids)))


class TestRecall:
    def test_single_relevant_present(self):
        run = [ranked("q1", ["a", "b", "c"])]
        assert recall_at_k(run, {"q1": {"b"}}, 3) == 1.0

    def test_two_relevant_one_found(self):
        run = [ranked("q1", ["a", "b", "c", "d", "e"])]
        assert recall_at_k(run, {"q1": {"a", "zzz"}}, 5) == 0.5

    def test_missing_qid(self):
        with pytest.raises(KeyError):
            recall_at_k([ranked("q9", ["a"])], {"q1": {"a"}}, 1)

    def test_matches_bruteforce_reimplementation(self):
        rng = np.random.default_rng(5)
        qrels = {}
        run = []
        for i in range(50):
            pids = [f"p{j}" for j in rng.permutation(40)[:20]]
            rel = set(rng.choice(pids, size=rng.integers(1, 4), replace=False))
            rel.add(f"x{i}")  # one relevant pid outside the ranking
            qrels[f"q{i}"] = rel
            run.append(ranked(f"q{i}", pids))
        for k in (1, 3, 10):
            # brute force: count by scanning prefixes
            total = 0.0
            for r in run:
                hits = len([p for p in [pp for pp, _ in r.entries][:k] if p in qrels[r.qid]])
                total += hits / len(qrels[r.qid])
            assert recall_at_k(run, qrels, k) == pytest.approx(total / len(run), abs=1e-12)


class TestMrr:
    def test_first_relevant_rank_three(self):
        run = [ranked("q1", ["a", "b", "c", "d", "e"])]
        assert mrr_at_k(run, {"q1": {"c"}}, 5) == pytest.approx(1 / 3)

    def test_no_relevant_in_topk(self):
        run = [ranked("q1", ["a", "b", "c"])]
        assert mrr_at_k(run, {"q1": {"z"}}, 3) == 0.0

    def test_rank_one(self):
        run = [ranked("q1", ["a"])]
        assert mrr_at_k(run, {"q1": {"a"}}, 5) == 1.0

    def test_monotone_in_k(self):
        run = [ranked("q1", ["a", "b", "c", "d"]), ranked("q2", ["d", "c", "b", "a"])]
        qrels = {"q1": {"c"}, "q2": {"a"}}
        values = [mrr_at_k(run, qrels, k) for k in (1, 2, 3, 4)]
        assert values == sorted(values)


class TestTokenF1:
    def test_worked_example(self):
        assert token_f1("2018 winter olympics", "2018") == pytest.approx(0.5)

    def test_identical(self):
        assert token_f1("a b c", "a b c") == 1.0

    def test_disjoint(self):
        assert token_f1("a b", "c d") == 0.0

    def test_empty(self):
        assert token_f1("", "a") == 0.0
        assert token_f1("a", "") == 0.0

    def test_multiset_clipping(self):
        # gen has "a" twice, ref once: overlap clipped to 1
        assert token_f1("a a", "a") == pytest.approx(2 * (1 / 2) * 1 / (1 / 2 + 1))


class TestRougeL:
    def test_worked_example(self):
        assert rouge_l("a b c", "a c") == pytest.approx(0.8)

    def test_identical(self):
        assert rouge_l("x y z", "x y z") == 1.0

    def test_disjoint(self):
        assert rouge_l("a b", "c d") == 0.0

    def test_order_sensitivity(self):
        # LCS of "a b" vs "b a" is 1 token
        assert rouge_l("a b", "b a") == pytest.approx(0.5)


class TestBleu1:
    def test_equal_lengths(self):
        assert bleu_1("a b", "a c") == pytest.approx(0.5)

    def test_brevity_penalty(self):
        assert bleu_1("a", "a c") == pytest.approx(math.exp(-1), abs=1e-6)

    def test_identical(self):
        assert bleu_1("a b c", "a b c") == 1.0

    def test_generation_longer_no_reward(self):
        assert bleu_1("a b c d", "a b") == pytest.approx(0.5)

    def test_empty_generation(self):
        assert bleu_1("", "a") == 0.0


@given(st.text(max_size=40), st.text(max_size=40))
@settings(max_examples=100, deadline=None)
def test_metrics_bounded(gen, ref):
    for metric in (token_f1, rouge_l, bleu_1):
        assert 0.0 <= metric(gen, ref) <= 1.0


class TestEvaluateQA:
    def test_best_answer_selected(self):
        pairs = [QAPair(qid="q1", question="when", answers=("2018", "february 2018"))]
        report = evaluate_qa({"q1": "2018"}, pairs)
        # "2018" scores cumulative 3.0 (all three metrics 1.0), beating "february 2018"
        assert report.per_question["f1"]["q1"] == 1.0
        assert report.per_question["rouge_l"]["q1"] == 1.0
        assert report.per_question["bleu_1"]["q1"] == 1.0

    def test_single_answer_is_direct_computation(self):
        pairs = [QAPair(qid="q1", question="x", answers=("alpha beta",))]
        report = evaluate_qa({"q1": "alpha"}, pairs)
        assert report.per_question["f1"]["q1"] == pytest.approx(token_f1("alpha", "alpha beta"))

    def test_empty_generation_scores_zero(self):
        pairs = [QAPair(qid="q1", question="x", answers=("alpha",))]
        report = evaluate_qa({"q1": ""}, pairs)
        assert all(report.per_question[m]["q1"] == 0.0 for m in report.metric_names)

    def test_missing_generation(self):
        pairs = [QAPair(qid="q1", question="x", answers=("a",))]
        with pytest.raises(KeyError):
            evaluate_qa({}, pairs)

    def test_means_are_arithmetic(self):
        pairs = [
            QAPair(qid="q1", question="x", answers=("a",)),
            QAPair(qid="q2", question="y", answers=("b",)),
        ]
        report = evaluate_qa({"q1": "a", "q2": "zzz"}, pairs)
        assert report.means["f1"] == pytest.approx(
            (report.per_question["f1"]["q1"] + report.per_question["f1"]["q2"]) / 2
        )


class TestPairedTTest:
    def test_zero_mean_differences(self):
        t, p = paired_t_test([1, 0, 1, 0], [0, 1, 0, 1])
        assert t == 0.0
        assert p == pytest.approx(1.0)

    def test_identical_samples_convention(self):
        t, p = paired_t_test([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])
        assert (t, p) == (0.0, 1.0)

    def test_worked_example(self):
        t, p = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        assert t == pytest.approx(4.242640687119285, abs=1e-9)
        assert p == pytest.approx(0.0132, abs=1e-3)

    def test_against_scipy_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(2, 40))
            a = rng.normal(size=n).tolist()
            b = rng.normal(size=n).tolist()
            t, p = paired_t_test(a, b)
            t_ref, p_ref = stats.ttest_rel(a, b)
            assert t == pytest.approx(float(t_ref), rel=1e-9, abs=1e-12)
            assert p == pytest.approx(float(p_ref), rel=1e-6, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            paired_t_test([1, 2], [1])

    def test_too_short(self):
        with pytest.raises(ValueError):
            paired_t_test([1], [2])

    def test_constant_nonzero_difference(self):
        t, p = paired_t_test([2, 2, 2], [1, 1, 1])
        assert math.isinf(t) and t > 0
        assert p == 0.0


class TestMetricReport:
    def test_tsv_and_json_serialization(self, tmp_path):
        pairs = [QAPair(qid="q1", question="x", answers=("a",))]
        report = evaluate_qa({"q1": "a"}, pairs)
        report.annotate_significance("f1", t=2.0, p=0.04, versus="naive")
        tsv = tmp_path / "r.tsv"
        report.save_tsv(tsv)
        text = tsv.read_text()
        assert "f1\t1.000000" in text and "vs naive" in text
        report.save_json(tmp_path / "r.json")
        import json

        payload = json.loads((tmp_path / "r.json").read_text())
        assert payload["means"]["f1"] == 1.0
        assert payload["significance"]["f1"]["p"] == 0.04

    def test_significance_p_validated(self):
        report = MetricReport(metric_names=("f1",), per_question={"f1": {}}, means={"f1": 0.0})
        with pytest.raises(ValueError):
            report.annotate_significance("f1", t=1.0, p=1.5, versus="x")
