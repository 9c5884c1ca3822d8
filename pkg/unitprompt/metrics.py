"""Evaluation metrics: BLEU, auto-BLEU, edit distance (WER/CER) and n-gram perplexity."""
from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Hashable, Iterable, NamedTuple, Sequence

from .errors import AlignmentError, ConfigError
from .units import format_units_line
from .utils import atomic_write_text, dump_json

log = logging.getLogger(__name__)

Token = Hashable
Ngram = tuple


def ngrams(tokens: Sequence[Token], n: int) -> list[Ngram]:
    if n < 1:
        raise ConfigError(f"n-gram order must be >= 1, got {n}")
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


# --- BLEU ---

def _clipped(candidate: Sequence[Token], reference: Sequence[Token], n: int) -> tuple[int, int]:
    cand = Counter(ngrams(candidate, n))
    ref = Counter(ngrams(reference, n))
    return sum(min(c, ref[g]) for g, c in cand.items()), sum(cand.values())


def _bleu_from_stats(matches: Sequence[int], totals: Sequence[int], c: int, r: int) -> list[float]:
    if c == 0:
        return [0.0] * len(matches)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    scores = []
    log_sum = 0.0
    for k, (m, t) in enumerate(zip(matches, totals), start=1):
        if m == 0 or t == 0 or log_sum == -math.inf:
            log_sum = -math.inf
            scores.append(0.0)
            continue
        log_sum += math.log(m / t)
        scores.append(100.0 * bp * math.exp(log_sum / k))
    return scores


def bleu(candidate: Sequence[Token], reference: Sequence[Token], max_n: int = 4) -> list[float]:
    """Sentence BLEU-1..max_n in [0, 100]: clipped precisions, geometric mean, brevity penalty."""

    if max_n < 1:
        raise ConfigError(f"max_n must be >= 1, got {max_n}")
    stats = [_clipped(candidate, reference, n) for n in range(1, max_n + 1)]
    return _bleu_from_stats([m for m, _ in stats], [t for _, t in stats], len(candidate), len(reference))


def corpus_bleu(
    candidates: Sequence[Sequence[Token]],
    references: Sequence[Sequence[Token]],
    max_n: int = 4,
) -> list[float]:
    """Counts are pooled over the corpus before the geometric mean."""

    _check_aligned(candidates, references)
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for cand, ref in zip(candidates, references):
        c += len(cand)
        r += len(ref)
        for n in range(1, max_n + 1):
            m, t = _clipped(cand, ref, n)
            matches[n - 1] += m
            totals[n - 1] += t
    return _bleu_from_stats(matches, totals, c, r)


def auto_bleu(sentence: Sequence[Token], n: int) -> float | None:
    """Share of n-gram occurrences whose n-gram occurs again elsewhere in the sentence.

    None when the sentence is shorter than ``n``.
    """

    grams = ngrams(sentence, n)
    if not grams:
        return None
    counts = Counter(grams)
    return sum(1 for g in grams if counts[g] > 1) / len(grams)


# --- Edit distance ---

class EditOps(NamedTuple):
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(ref: Sequence[Token], hyp: Sequence[Token]) -> EditOps:
    """Levenshtein alignment of ``hyp`` against ``ref`` with unit costs."""

    n, m = len(ref), len(hyp)
    # each cell: (distance, subs, ins, dels); ties prefer substitution, then deletion, then insertion
    prev = [(j, 0, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0, i)]
        for j in range(1, m + 1):
            d, s, ins, dl = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (d, s, ins, dl)
            else:
                best = (d + 1, s + 1, ins, dl)
            d, s, ins, dl = prev[j]
            if d + 1 < best[0]:
                best = (d + 1, s, ins, dl + 1)
            d, s, ins, dl = cur[j - 1]
            if d + 1 < best[0]:
                best = (d + 1, s, ins + 1, dl)
            cur.append(best)
        prev = cur
    return EditOps(*prev[m])


def wer(ref: Sequence[Token], hyp: Sequence[Token]) -> float:
    return edit_distance(ref, hyp).distance / max(len(ref), 1)


def cer(ref: str, hyp: str) -> float:
    return edit_distance(ref, hyp).distance / max(len(ref), 1)


# --- n-gram LM ---

class NgramLM:
    """Add-one smoothed n-gram model over a closed vocabulary ``0..vocab_size-1``.

    Contexts are left-padded with a BOS sentinel outside the vocabulary; no
    end-of-sentence event is modelled.
    """

    BOS = -1

    def __init__(self, order: int, vocab_size: int) -> None:
        if order < 1:
            raise ConfigError(f"LM order must be >= 1, got {order}")
        if vocab_size < 1:
            raise ConfigError(f"LM vocabulary must be non-empty, got {vocab_size}")
        self.order = order
        self.vocab_size = vocab_size
        self._ngram: Counter = Counter()
        self._context: Counter = Counter()

    def _events(self, seq: Sequence[int]) -> Iterable[tuple[tuple, int]]:
        padded = (self.BOS,) * (self.order - 1) + tuple(int(u) for u in seq)
        for i in range(self.order - 1, len(padded)):
            yield padded[i - self.order + 1 : i], padded[i]

    def fit(self, corpus: Iterable[Sequence[int]]) -> "NgramLM":
        for seq in corpus:
            for ctx, unit in self._events(seq):
                self._ngram[ctx + (unit,)] += 1
                self._context[ctx] += 1
        return self

    def prob(self, context: Sequence[int], unit: int) -> float:
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        return (self._ngram[ctx + (unit,)] + 1) / (self._context[ctx] + self.vocab_size)

    def log_prob(self, seq: Sequence[int]) -> float:
        return sum(math.log(self.prob(ctx, unit)) for ctx, unit in self._events(seq))


def perplexity(lm: NgramLM, seq: Sequence[int]) -> float:
    if not len(seq):
        raise ConfigError("perplexity of an empty sequence is undefined")
    return math.exp(-lm.log_prob(seq) / len(seq))


# --- Run evaluation ---

@dataclass(frozen=True)
class EvalConfig:
    lm_order: int = 2
    lm_source: str = "train"
    baselines: bool = False
    num_workers: int = 0

    def __post_init__(self) -> None:
        if self.lm_order < 1:
            raise ConfigError("eval.lm_order must be >= 1")
        if self.lm_source not in ("train", "references"):
            raise ConfigError("eval.lm_source must be train or references")


@dataclass(frozen=True)
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    auto_bleu_1: float | None
    auto_bleu_2: float | None
    auto_bleu_3: float | None
    wer: float
    cer: float
    ppx: float | None
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return dump_json(self.to_dict())


def write_report(path: str | Path, report: MetricReport) -> Path:
    return atomic_write_text(path, report.to_json())


def _check_aligned(hyps: Sequence, refs: Sequence) -> None:
    if len(hyps) != len(refs):
        raise AlignmentError(f"{len(hyps)} hypotheses for {len(refs)} references")
    if not refs:
        raise AlignmentError("nothing to evaluate: empty hypothesis set")


def _sentence_stats(pair: tuple[Sequence[int], Sequence[int]], lm: NgramLM | None) -> dict:
    ref, hyp = pair
    ref_line, hyp_line = format_units_line(ref), format_units_line(hyp)
    return {
        "words": edit_distance(ref, hyp).distance,
        "ref_words": len(ref),
        "chars": edit_distance(ref_line, hyp_line).distance,
        "ref_chars": len(ref_line),
        "auto": [auto_bleu(hyp, n) for n in (1, 2, 3)],
        "ppx": perplexity(lm, hyp) if lm is not None and len(hyp) else None,
    }


def _mean(values: Iterable[float | None]) -> float | None:
    kept = [v for v in values if v is not None]
    return sum(kept) / len(kept) if kept else None


def evaluate_run(
    references: Sequence[Sequence[int]],
    hypotheses: Sequence[Sequence[int]],
    lm: NgramLM | None = None,
    num_workers: int = 0,
) -> MetricReport:
    """Corpus BLEU, mean auto-BLEU, pooled WER/CER and mean perplexity."""

    _check_aligned(hypotheses, references)
    pairs = list(zip(references, hypotheses))
    if num_workers > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            stats = list(pool.map(lambda p: _sentence_stats(p, lm), pairs))
    else:
        stats = [_sentence_stats(p, lm) for p in pairs]
    b = corpus_bleu(hypotheses, references, 4)
    return MetricReport(
        bleu_1=b[0],
        bleu_2=b[1],
        bleu_3=b[2],
        bleu_4=b[3],
        auto_bleu_1=_mean(s["auto"][0] for s in stats),
        auto_bleu_2=_mean(s["auto"][1] for s in stats),
        auto_bleu_3=_mean(s["auto"][2] for s in stats),
        wer=sum(s["words"] for s in stats) / max(sum(s["ref_words"] for s in stats), 1),
        cer=sum(s["chars"] for s in stats) / max(sum(s["ref_chars"] for s in stats), 1),
        ppx=_mean(s["ppx"] for s in stats),
        n_samples=len(pairs),
    )


def evaluate_baselines(
    sources: Sequence[Sequence[int]],
    references: Sequence[Sequence[int]],
    lm: NgramLM | None = None,
    num_workers: int = 0,
) -> dict[str, MetricReport]:
    """``corrupted``: the task inputs scored as outputs; ``reference``: the references against themselves."""

    return {
        "corrupted": evaluate_run(references, sources, lm, num_workers),
        "reference": evaluate_run(references, references, lm, num_workers),
    }


__all__ = [
    "EditOps",
    "EvalConfig",
    "MetricReport",
    "NgramLM",
    "auto_bleu",
    "bleu",
    "cer",
    "corpus_bleu",
    "edit_distance",
    "evaluate_baselines",
    "evaluate_run",
    "ngrams",
    "perplexity",
    "wer",
]
