from __future__ import annotations

import functools
import itertools
import json
import math
import random

import pytest

from unitprompt.errors import AlignmentError, ConfigError
from unitprompt.metrics import (
    MetricReport,
    NgramLM,
    auto_bleu,
    bleu,
    cer,
    corpus_bleu,
    edit_distance,
    evaluate_baselines,
    evaluate_run,
    perplexity,
    wer,
    write_report,
)


def _recursive_distance(a, b):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def _all_sequences(max_len, alphabet="abc"):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def _oracle_bleu(cand, ref, max_n):
    scores = []
    log_sum = 0.0
    dead = False
    for n in range(1, max_n + 1):
        cand_grams = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
        ref_grams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
        matched = 0
        for g in set(cand_grams):
            matched += min(cand_grams.count(g), ref_grams.count(g))
        if dead or matched == 0 or not cand_grams:
            dead = True
            scores.append(0.0)
            continue
        log_sum += math.log(matched / len(cand_grams))
        bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
        scores.append(100 * bp * math.exp(log_sum / n))
    return scores


# --- edit distance ---

def test_edit_distance_examples():
    assert edit_distance("abc", "axc") == (1, 1, 0, 0)
    assert wer("abc", "axc") == pytest.approx(1 / 3)
    assert edit_distance("abc", "") == (3, 0, 0, 3)
    assert wer("abc", "") == 1.0
    assert edit_distance("", "ab") == (2, 0, 2, 0)
    assert wer("", "ab") == 2.0


def _check_against_oracle(max_len):
    seqs = list(_all_sequences(max_len))
    for a in seqs:
        for b in seqs:
            ops = edit_distance(a, b)
            assert ops.distance == _recursive_distance(a, b)
            assert ops.substitutions + ops.insertions + ops.deletions == ops.distance
            assert ops.insertions - ops.deletions == len(b) - len(a)


def test_edit_distance_matches_oracle_short():
    _check_against_oracle(3)


@pytest.mark.slow
def test_edit_distance_matches_oracle_exhaustive():
    _check_against_oracle(5)


def test_edit_distance_is_a_metric():
    rng = random.Random(0)
    for _ in range(300):
        a, b, c = ([rng.randrange(3) for _ in range(rng.randrange(7))] for _ in range(3))
        dab = edit_distance(a, b).distance
        assert dab == edit_distance(b, a).distance
        assert edit_distance(a, a).distance == 0
        assert edit_distance(a, c).distance <= dab + edit_distance(b, c).distance


def test_wer_agrees_with_jiwer():
    jiwer = pytest.importorskip("jiwer", minversion="3.0")
    rng = random.Random(4)
    for _ in range(300):
        ref = [rng.randrange(6) for _ in range(rng.randrange(1, 12))]
        hyp = [rng.randrange(6) for _ in range(rng.randrange(1, 12))]
        ref_text = " ".join(map(str, ref))
        hyp_text = " ".join(map(str, hyp))
        aligned = jiwer.process_words(ref_text, hyp_text)
        assert edit_distance(ref, hyp).distance == aligned.substitutions + aligned.deletions + aligned.insertions
        assert wer(ref, hyp) == pytest.approx(jiwer.wer(ref_text, hyp_text))


def test_cer_counts_characters():
    assert cer("12 3", "12 4") == pytest.approx(1 / 4)


# --- BLEU ---

def test_bleu_perfect_and_disjoint():
    assert bleu((1, 2, 3, 4, 5), (1, 2, 3, 4, 5)) == [100.0] * 4
    assert bleu((1, 2), (3, 4))[0] == 0.0
    assert bleu((), (1, 2)) == [0.0] * 4


def test_bleu_short_candidate():
    got = bleu("the cat sat".split(), "the cat sat down".split())
    assert got == pytest.approx(_oracle_bleu("the cat sat".split(), "the cat sat down".split(), 4), abs=1e-9)
    assert got[0] == pytest.approx(100 * math.exp(-1 / 3))
    assert got[3] == 0.0


def test_bleu_matches_counting_oracle():
    rng = random.Random(1)
    for _ in range(1000):
        cand = [rng.randrange(4) for _ in range(rng.randrange(0, 9))]
        ref = [rng.randrange(4) for _ in range(rng.randrange(1, 9))]
        assert bleu(cand, ref) == pytest.approx(_oracle_bleu(cand, ref, 4), abs=1e-9)


def test_corpus_bleu_pools_counts():
    cands = [(1, 2, 3), (4, 5)]
    refs = [(1, 2, 3), (4, 6)]
    # unigram: 4 of 5 match; bigram: 2 of 3
    got = corpus_bleu(cands, refs, 2)
    assert got[0] == pytest.approx(80.0)
    assert got[1] == pytest.approx(100 * math.sqrt(0.8 * 2 / 3))


# --- auto-BLEU ---

@pytest.mark.parametrize(
    "sentence, n, expected",
    [((1, 2, 3, 4), 1, 0.0), ((7,) * 5, 1, 1.0), ((1, 2, 1, 3), 1, 0.5), ((1, 2, 1, 2), 2, 2 / 3)],
)
def test_auto_bleu_examples(sentence, n, expected):
    assert auto_bleu(sentence, n) == pytest.approx(expected)


def test_auto_bleu_short_sentence_and_relabelling():
    assert auto_bleu((1, 2), 3) is None
    rng = random.Random(2)
    for _ in range(100):
        s = [rng.randrange(5) for _ in range(rng.randrange(1, 12))]
        perm = list(range(5))
        rng.shuffle(perm)
        value = auto_bleu(s, 1)
        assert 0.0 <= value <= 1.0
        assert auto_bleu([perm[u] for u in s], 1) == value


# --- perplexity ---

def test_uniform_unigram_perplexity():
    lm = NgramLM(1, 7)
    assert perplexity(lm, (0, 3, 6, 1)) == pytest.approx(7.0)


def test_perplexity_matches_probability_product():
    rng = random.Random(3)
    for _ in range(100):
        v = rng.randrange(2, 6)
        corpus = [[rng.randrange(v) for _ in range(rng.randrange(1, 8))] for _ in range(rng.randrange(1, 6))]
        lm = NgramLM(2, v).fit(corpus)
        pairs, ctx = {}, {}
        for seq in corpus:
            prev = -1
            for u in seq:
                pairs[(prev, u)] = pairs.get((prev, u), 0) + 1
                ctx[prev] = ctx.get(prev, 0) + 1
                prev = u
        test = [rng.randrange(v) for _ in range(rng.randrange(1, 8))]
        prob, prev = 1.0, -1
        for u in test:
            prob *= (pairs.get((prev, u), 0) + 1) / (ctx.get(prev, 0) + v)
            prev = u
        expected = prob ** (-1 / len(test))
        assert perplexity(lm, test) == pytest.approx(expected, rel=1e-10)


def test_repeated_symbol_perplexity_near_one():
    lm = NgramLM(2, 4).fit([[2] * 500])
    assert 1.0 < perplexity(lm, [2] * 20) < 1.1


def test_perplexity_errors():
    with pytest.raises(ConfigError):
        perplexity(NgramLM(2, 3), ())
    with pytest.raises(ConfigError):
        NgramLM(0, 3)


# --- run evaluation ---

def test_perfect_run():
    refs = [(1, 2, 3, 4), (5, 6, 7, 8, 9)]
    report = evaluate_run(refs, refs)
    assert report.bleu_4 == pytest.approx(100.0)
    assert report.wer == 0.0 and report.cer == 0.0
    assert report.ppx is None
    assert report.n_samples == 2


def test_corpus_wer_is_pooled():
    refs = [(1,), (1, 2, 3, 4, 5, 6, 7, 8, 9)]
    hyps = [(2,), (1, 2, 3, 4, 5, 6, 7, 8, 9)]
    report = evaluate_run(refs, hyps)
    assert report.wer == pytest.approx(1 / 10)
    assert report.wer != pytest.approx((1.0 + 0.0) / 2)


def test_evaluate_alignment_errors():
    with pytest.raises(AlignmentError):
        evaluate_run([], [])
    with pytest.raises(AlignmentError):
        evaluate_run([(1,)], [(1,), (2,)])


def test_threaded_evaluation_matches_serial():
    rng = random.Random(4)
    refs = [tuple(rng.randrange(6) for _ in range(rng.randrange(1, 10))) for _ in range(30)]
    hyps = [tuple(rng.randrange(6) for _ in range(rng.randrange(0, 10))) for _ in range(30)]
    lm = NgramLM(2, 6).fit(refs)
    assert evaluate_run(refs, hyps, lm, num_workers=4) == evaluate_run(refs, hyps, lm)


def test_baselines():
    refs = [(1, 2, 3), (4, 5, 6)]
    out = evaluate_baselines([(1, 9, 3), (4, 9, 6)], refs)
    assert out["reference"].wer == 0.0
    assert out["corrupted"].wer == pytest.approx(2 / 6)


def test_report_file_fields(tmp_path):
    report = evaluate_run([(1, 2, 3)], [(1, 2)], NgramLM(2, 4).fit([(1, 2, 3)]))
    path = write_report(tmp_path / "r.json", report)
    data = json.loads(path.read_text())
    assert list(data) == sorted(MetricReport.__dataclass_fields__)
    assert data["n_samples"] == 1
