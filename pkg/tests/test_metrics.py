import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from srb import metrics as MT
from srb.errors import DataError
from tests import oracles

tokens = st.lists(st.sampled_from("abcde"), max_size=12)


def random_corpus(n, seed, alphabet="abcdef", max_len=12):
    rng = random.Random(seed)
    return [[rng.choice(alphabet) for _ in range(rng.randint(0, max_len))] for _ in range(n)]


class TestRouge:
    def test_identical(self):
        s = "the cat sat".split()
        assert MT.rouge_n(s, s, 1) == MT.rouge_n(s, s, 2) == MT.rouge_l(s, s) == 1.0

    def test_disjoint(self):
        assert MT.rouge_n(["a", "b"], ["c", "d"], 1) == 0.0

    def test_unigram_example(self):
        cand, ref = "the cat".split(), "the cat sat".split()
        p, r = 1.0, 2 / 3
        assert MT.rouge_n(cand, ref, 1) == pytest.approx(2 * p * r / (p + r), abs=1e-12)
        assert MT.rouge_n(cand, ref, 1) == pytest.approx(0.8, abs=1e-9)

    def test_lcs_example(self):
        cand, ref = "police kill the gunman".split(), "police killed the gunman".split()
        assert MT.lcs_length(cand, ref) == oracles.lcs_brute(cand, ref) == 3
        assert MT.rouge_l(cand, ref) == pytest.approx(0.75, abs=1e-9)

    def test_empty_candidate(self):
        assert MT.rouge_l([], ["a"]) == 0.0
        assert MT.rouge_n([], [], 1) == 0.0

    def test_clipping(self):
        assert MT.rouge_n_counts(["a", "a", "a"], ["a", "b"], 1) == (1, 3, 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_oracle(self, seed):
        cands, refs = random_corpus(200, seed), random_corpus(200, seed + 100)
        for c, r in zip(cands, refs):
            assert MT.rouge_n(c, r, 1) == oracles.rouge_n(c, r, 1)
            assert MT.rouge_n(c, r, 2) == oracles.rouge_n(c, r, 2)
            assert MT.rouge_l(c, r) == oracles.rouge_l(c, r)

    @given(tokens, tokens)
    def test_bounded(self, c, r):
        for score in (MT.rouge_n(c, r, 1), MT.rouge_n(c, r, 2), MT.rouge_l(c, r)):
            assert 0.0 <= score <= 1.0

    def test_order_sensitivity(self):
        ref = list("abcdefg")
        shuffled = list("gfedcba")
        assert MT.rouge_n(shuffled, ref, 1) == MT.rouge_n(ref, ref, 1)
        assert MT.rouge_n(shuffled, ref, 2) < 1.0
        assert MT.rouge_l(shuffled, ref) < 1.0


class TestBleu:
    def test_identical(self):
        s = "a b c d e".split()
        assert MT.bleu([s, s[:4]], [[s], [["x"], s[:4]]]) == pytest.approx(1.0, abs=1e-15)

    def test_no_unigram_overlap(self):
        assert MT.bleu([["a", "b"]], [[["c", "d"]]]) == 0.0

    def test_hand_arithmetic(self):
        cand, ref = "a b c e".split(), "a b c d".split()
        stats = MT.bleu_stats(cand, [ref])
        assert stats.matches == [3, 2, 1, 0] and stats.totals == [4, 3, 2, 1]
        precisions = [3 / 4, 2 / 3, 1 / 2, 1 / 2]   # the zero 4-gram precision smoothed to 1/(1+1)
        expected = math.exp(sum(math.log(p) for p in precisions) / 4)   # brevity penalty 1
        assert MT.bleu([cand], [[ref]]) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.125 ** 0.25, abs=1e-12)

    def test_brevity_penalty(self):
        cand, ref = ["a", "b"], ["a", "b", "c", "d"]
        stats = MT.bleu_stats(cand, [ref])
        assert stats.ref_len == 4
        # every precision is 1 (orders 3 and 4 have no candidate n-grams and smooth to 1/1)
        assert MT.bleu([cand], [[ref]]) == pytest.approx(math.exp(1 - 4 / 2), abs=1e-12)

    def test_closest_reference_length_prefers_shorter_on_tie(self):
        stats = MT.bleu_stats(list("abc"), [list("abcde"), list("a")])
        assert stats.ref_len == 1

    def test_multi_reference_clipping_uses_max_count(self):
        stats = MT.bleu_stats(["a", "a", "a"], [["a"], ["a", "a", "b"]])
        assert stats.matches[0] == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            MT.bleu([["a"]], [])

    @pytest.mark.parametrize("seed", range(3))
    def test_agrees_with_oracle(self, seed):
        cands = random_corpus(300, seed, "abc")
        ref_sets = [random_corpus(3, seed * 1000 + i, "abc") for i in range(300)]
        for c, refs in zip(cands, ref_sets):
            assert MT.bleu([c], [refs]) == oracles.bleu([c], [refs])
        assert MT.bleu(cands, ref_sets) == oracles.bleu(cands, ref_sets)

    @given(st.lists(st.tuples(tokens, tokens), min_size=1, max_size=5))
    def test_bounded(self, pairs):
        score = MT.bleu([c for c, _ in pairs], [[r] for _, r in pairs])
        assert 0.0 <= score <= 1.0 + 1e-12


class TestCorpus:
    def test_identical(self):
        sents = [s.split() for s in ["the cat sat", "a dog ran off", "x y"]]
        report = MT.evaluate_corpus(sents, [[s] for s in sents])
        assert report.summary()["n"] == 3
        assert report.rouge1_f == report.rouge2_f == report.rougeL_f == 1.0
        assert report.bleu == pytest.approx(1.0, abs=1e-15)

    def test_single_pair_reduces(self):
        c, r = "a b c e".split(), "a b c d".split()
        report = MT.evaluate_corpus([c], [[r]])
        assert report.rouge1_f == MT.rouge_n(c, r, 1)
        assert report.rouge2_f == MT.rouge_n(c, r, 2)
        assert report.rougeL_f == MT.rouge_l(c, r)
        assert report.bleu == MT.bleu([c], [[r]])

    def test_random_corpus_against_oracle(self):
        cands, refs = random_corpus(20, 7), random_corpus(20, 8)
        report = MT.evaluate_corpus(cands, [[r] for r in refs])
        assert report.rouge1_f == sum(oracles.rouge_n(c, r, 1) for c, r in zip(cands, refs)) / 20
        assert report.rouge2_f == sum(oracles.rouge_n(c, r, 2) for c, r in zip(cands, refs)) / 20
        assert report.rougeL_f == sum(oracles.rouge_l(c, r) for c, r in zip(cands, refs)) / 20
        assert report.bleu == oracles.bleu(cands, [[r] for r in refs])

    def test_best_reference_for_rouge(self):
        report = MT.evaluate_corpus([["a", "b"]], [[["x"], ["a", "b"]]])
        assert report.rouge1_f == 1.0

    def test_recompute_is_exact(self, tmp_path):
        cands, refs = random_corpus(30, 1), random_corpus(30, 2)
        report = MT.evaluate_corpus(cands, [[r] for r in refs])
        again = report.recompute()
        assert (again.rouge1_f, again.rouge2_f, again.rougeL_f, again.bleu) == \
            (report.rouge1_f, report.rouge2_f, report.rougeL_f, report.bleu)
        report.write(tmp_path / "report.jsonl")
        loaded = MT.EvalReport.read(tmp_path / "report.jsonl")
        assert loaded == report
        assert loaded.recompute() == report

    def test_misaligned(self):
        with pytest.raises(DataError):
            MT.evaluate_corpus([["a"]], [])

    def test_files(self, tmp_path):
        (tmp_path / "dec.txt").write_text("the cat\na dog\n", encoding="utf-8")
        (tmp_path / "ref.txt").write_text("the cat sat\na dog\n", encoding="utf-8")
        report = MT.evaluate_files(tmp_path / "dec.txt", [tmp_path / "ref.txt"])
        assert report.rouge1_f == pytest.approx((0.8 + 1.0) / 2)
        (tmp_path / "short.txt").write_text("one line\n", encoding="utf-8")
        with pytest.raises(DataError):
            MT.evaluate_files(tmp_path / "dec.txt", [tmp_path / "short.txt"])

    def test_char_mode_files(self, tmp_path):
        (tmp_path / "dec.txt").write_text("北京\n", encoding="utf-8")
        (tmp_path / "ref.txt").write_text("北京市\n", encoding="utf-8")
        report = MT.evaluate_files(tmp_path / "dec.txt", [tmp_path / "ref.txt"], mode="char")
        assert report.rouge1_f == pytest.approx(0.8)

    def test_table(self):
        report = MT.evaluate_corpus([["a"]], [[["a"]]])
        table = report.table()
        assert "ROUGE-L F" in table and "100.00" in table
