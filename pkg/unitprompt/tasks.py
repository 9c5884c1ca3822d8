"""Seedable task generators and the corpus builder.

Three task families share one sample type: cipher translation (a fixed
bijection over content units), inpainting (a contiguous span corrupted with
MASK units or deleted) and continuation (seed prefix -> remaining units).
The ``utterances`` task writes clean speaker utterances for pretraining.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, CorpusIOError, InputPathError, SplitError
from .units import (
    ManifestRow,
    UnitSequence,
    Vocabulary,
    dedup,
    read_manifest,
    read_units_file,
    write_manifest,
    write_units_file,
)
from .utils import atomic_write_text, dump_json

log = logging.getLogger(__name__)

TASKS = ("translation", "inpainting", "continuation", "utterances")
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class TaskSample:
    id: str
    src: UnitSequence
    tgt: UnitSequence
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CorpusSplit:
    train: list[tuple[str, UnitSequence]]
    valid: list[tuple[str, UnitSequence]]
    test: list[tuple[str, UnitSequence]]

    def parts(self) -> tuple[list[tuple[str, UnitSequence]], ...]:
        return (self.train, self.valid, self.test)

    def speakers(self, name: str) -> set[str]:
        return {spk for spk, _ in getattr(self, name)}


# --- Configs ---

@dataclass(frozen=True)
class SpeakerConfig:
    """Synthetic speakers: per-speaker Markov chains with sticky frames."""

    self_loop: float = 0.6
    concentration: float = 0.3
    min_frames: int = 60
    max_frames: int = 200

    def __post_init__(self) -> None:
        if not 0.0 <= self.self_loop < 1.0:
            raise ConfigError("corpus.speaker.self_loop must be in [0, 1)")
        if self.concentration <= 0:
            raise ConfigError("corpus.speaker.concentration must be positive")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError("corpus.speaker needs 1 <= min_frames <= max_frames")


@dataclass(frozen=True)
class CipherConfig:
    mapping_seed: int = 1234
    mapping: tuple[int, ...] | None = None
    swap_adjacent: bool = False
    min_len: int = 6
    max_len: int = 12

    def __post_init__(self) -> None:
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("corpus.cipher needs 1 <= min_len <= max_len")


@dataclass(frozen=True)
class InpaintingConfig:
    span_min_frac: float = 0.32
    span_max_frac: float = 0.48
    min_len: int = 25
    corruption: str = "mask"

    def __post_init__(self) -> None:
        if not 0.0 < self.span_min_frac <= self.span_max_frac < 1.0:
            raise ConfigError("corpus.inpainting needs 0 < span_min_frac <= span_max_frac < 1")
        if self.corruption not in ("mask", "delete"):
            raise ConfigError(f"corpus.inpainting.corruption must be mask or delete, got {self.corruption!r}")
        if self.min_len < 1:
            raise ConfigError("corpus.inpainting.min_len must be >= 1")


@dataclass(frozen=True)
class CorpusConfig:
    task: str = "translation"
    seed: int = 0
    sizes: tuple[int, int, int] = (2000, 200, 200)
    vocab_size: int = 32
    n_speakers: int = 20
    utterances_per_speaker: int = 50
    ratios: tuple[float, float, float] = (0.9, 0.05, 0.05)
    conditional_ratio: float = 0.5
    speaker: SpeakerConfig = field(default_factory=SpeakerConfig)
    cipher: CipherConfig = field(default_factory=CipherConfig)
    inpainting: InpaintingConfig = field(default_factory=InpaintingConfig)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"corpus.task must be one of {', '.join(TASKS)}; got {self.task!r}")
        if len(self.sizes) != 3 or any(n < 0 for n in self.sizes):
            raise ConfigError("corpus.sizes must be three non-negative counts")
        _check_ratios(self.ratios)
        if not 0.0 < self.conditional_ratio < 1.0:
            raise ConfigError("corpus.conditional_ratio must be in (0, 1)")
        Vocabulary(self.vocab_size)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {tuple(ratios)}")


# --- Synthetic utterances ---

@dataclass(frozen=True)
class Speaker:
    id: str
    initial: np.ndarray
    transitions: np.ndarray


def make_speaker(speaker_id: str, rng: np.random.Generator, vocab: Vocabulary, cfg: SpeakerConfig) -> Speaker:
    k = vocab.content_size
    initial = rng.dirichlet(np.full(k, cfg.concentration))
    transitions = np.eye(k)
    if k > 1:
        for i in range(k):
            jumps = rng.dirichlet(np.full(k - 1, cfg.concentration))
            transitions[i] = np.insert((1.0 - cfg.self_loop) * jumps, i, cfg.self_loop)
    return Speaker(speaker_id, initial, transitions)


def _draw(cumulative: np.ndarray, rng: np.random.Generator) -> int:
    return min(int(np.searchsorted(cumulative, rng.random(), side="right")), len(cumulative) - 1)


def sample_frames(speaker: Speaker, rng: np.random.Generator, cfg: SpeakerConfig) -> UnitSequence:
    n = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
    rows = np.cumsum(speaker.transitions, axis=1)
    unit = _draw(np.cumsum(speaker.initial), rng)
    frames = [unit]
    for _ in range(n - 1):
        unit = _draw(rows[unit], rng)
        frames.append(unit)
    return tuple(frames)


def sample_utterance(speaker: Speaker, rng: np.random.Generator, cfg: SpeakerConfig) -> UnitSequence:
    return dedup(sample_frames(speaker, rng, cfg))


def speaker_records(
    n_speakers: int,
    per_speaker: int,
    rng: np.random.Generator,
    vocab: Vocabulary,
    cfg: SpeakerConfig,
) -> list[tuple[str, UnitSequence]]:
    records: list[tuple[str, UnitSequence]] = []
    for s in range(n_speakers):
        speaker = make_speaker(f"spk{s:03d}", rng, vocab, cfg)
        records.extend((speaker.id, sample_utterance(speaker, rng, cfg)) for _ in range(per_speaker))
    return records


# --- Translation ---

def cipher_mapping(cfg: CipherConfig, vocab: Vocabulary) -> tuple[int, ...]:
    k = vocab.content_size
    if cfg.mapping is not None:
        if sorted(cfg.mapping) != list(range(k)):
            raise ConfigError(f"corpus.cipher.mapping must be a permutation of 0..{k - 1}")
        return tuple(cfg.mapping)
    return tuple(int(u) for u in np.random.default_rng(cfg.mapping_seed).permutation(k))


def apply_cipher(seq: Sequence[int], mapping: Sequence[int], swap_adjacent: bool = False) -> UnitSequence:
    out = [mapping[u] for u in seq]
    if swap_adjacent:
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
    return tuple(out)


def gen_translation_pair(
    rng: np.random.Generator,
    cfg: CipherConfig,
    vocab: Vocabulary,
    sample_id: str = "",
) -> TaskSample:
    """Random condensed source; target is the cipher applied to it."""

    k = vocab.content_size
    n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    src = [int(rng.integers(0, k))]
    while len(src) < n and k > 1:
        nxt = int(rng.integers(0, k - 1))
        src.append(nxt if nxt < src[-1] else nxt + 1)
    src_t = tuple(src)
    mapping = cipher_mapping(cfg, vocab)
    return TaskSample(sample_id, src_t, apply_cipher(src_t, mapping, cfg.swap_adjacent), {})


# --- Inpainting ---

def span_bounds(n: int, cfg: InpaintingConfig) -> tuple[int, int]:
    lo = math.ceil(Decimal(str(cfg.span_min_frac)) * n)
    hi = math.floor(Decimal(str(cfg.span_max_frac)) * n)
    return max(lo, 1), hi


def gen_inpainting_sample(
    clean: Sequence[int],
    rng: np.random.Generator,
    cfg: InpaintingConfig,
    vocab: Vocabulary,
    sample_id: str = "",
) -> TaskSample | None:
    """Corrupt one contiguous span of ``clean``; None when the utterance is too short."""

    clean = tuple(clean)
    n = len(clean)
    if n < cfg.min_len:
        return None
    lo, hi = span_bounds(n, cfg)
    if lo > hi:
        return None
    span_len = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, n - span_len + 1))
    if cfg.corruption == "mask":
        src = clean[:start] + (vocab.mask,) * span_len + clean[start + span_len:]
    else:
        src = clean[:start] + clean[start + span_len:]
    meta = {"span_start": start, "span_len": span_len, "corruption": cfg.corruption}
    return TaskSample(sample_id, src, clean, meta)


def validate_inpainting_sample(sample: TaskSample, cfg: InpaintingConfig, vocab: Vocabulary) -> list[str]:
    problems: list[str] = []
    n = len(sample.tgt)
    start = sample.meta.get("span_start")
    span = sample.meta.get("span_len")
    if start is None or span is None:
        return [f"{sample.id}: missing span metadata"]
    lo, hi = span_bounds(n, cfg)
    if n < cfg.min_len:
        problems.append(f"{sample.id}: clean length {n} below min_len {cfg.min_len}")
    if not lo <= span <= hi:
        problems.append(f"{sample.id}: span_len {span} outside [{lo}, {hi}] for length {n}")
    if not 0 <= start <= n - span:
        problems.append(f"{sample.id}: span {start}+{span} outside length {n}")
    corruption = sample.meta.get("corruption", cfg.corruption)
    if corruption == "mask":
        expected = sample.tgt[:start] + (vocab.mask,) * span + sample.tgt[start + span:]
    else:
        expected = sample.tgt[:start] + sample.tgt[start + span:]
    if sample.src != expected:
        problems.append(f"{sample.id}: source differs from target outside the span")
    return problems


def split_speaker_disjoint(
    records: Sequence[tuple[str, UnitSequence]],
    rng: np.random.Generator,
    ratios: Sequence[float] = (0.9, 0.05, 0.05),
) -> CorpusSplit:
    """Assign whole speakers to train/valid/test, chasing ``ratios`` by utterance count.

    After shuffling, the first three speakers seed one split each; every later
    speaker goes to the split with the largest deficit (lowest index on ties).
    """

    _check_ratios(ratios)
    counts: dict[str, int] = {}
    for spk, _ in records:
        counts[spk] = counts.get(spk, 0) + 1
    speakers = sorted(counts)
    if len(speakers) < 3:
        raise SplitError(f"need at least 3 speakers for a disjoint split, got {len(speakers)}")
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    total = sum(counts.values())
    assigned = [0, 0, 0]
    where: dict[str, int] = {}
    for pos, spk in enumerate(order):
        if pos < 3:
            k = pos
        else:
            deficits = [ratios[i] * total - assigned[i] for i in range(3)]
            k = max(range(3), key=lambda i: (deficits[i], -i))
        where[spk] = k
        assigned[k] += counts[spk]
    parts: tuple[list, list, list] = ([], [], [])
    for spk, utt in records:
        parts[where[spk]].append((spk, utt))
    return CorpusSplit(*parts)


# --- Continuation ---

def seed_length(total: int, ratio: float) -> int:
    raw = (Decimal(str(ratio)) * total).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return min(max(int(raw), 1), total - 1)


def gen_continuation_sample(utterance: Sequence[int], ratio: float, sample_id: str = "") -> TaskSample | None:
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"conditional ratio must be in (0, 1), got {ratio}")
    utterance = tuple(utterance)
    if len(utterance) < 2:
        return None
    k = seed_length(len(utterance), ratio)
    return TaskSample(sample_id, utterance[:k], utterance[k:], {"ratio": ratio, "seed_len": k})


# --- Corpus files ---

def _split_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _translation_split(cfg: CorpusConfig, index: int, size: int) -> list[TaskSample]:
    rng = _split_rng(cfg.seed, index)
    out = []
    for i in range(size):
        s = gen_translation_pair(rng, cfg.cipher, cfg.vocab, f"{SPLITS[index]}-{i:06d}")
        # stored targets are condensed; with swap_adjacent this can shorten them
        out.append(TaskSample(s.id, s.src, dedup(s.tgt), s.meta))
    return out


def _inpainting_splits(cfg: CorpusConfig) -> list[list[TaskSample]]:
    vocab = cfg.vocab
    pool_rng = np.random.default_rng(cfg.seed)
    records = speaker_records(cfg.n_speakers, cfg.utterances_per_speaker, pool_rng, vocab, cfg.speaker)
    split = split_speaker_disjoint(records, pool_rng, cfg.ratios)
    result = []
    for index, (part, size) in enumerate(zip(split.parts(), cfg.sizes)):
        usable = [(spk, u) for spk, u in part if len(u) >= cfg.inpainting.min_len]
        if size and not usable:
            raise SplitError(
                f"{SPLITS[index]} split has no utterance of length >= {cfg.inpainting.min_len}"
            )
        rng = _split_rng(cfg.seed, index)
        samples: list[TaskSample] = []
        pos = 0
        while len(samples) < size:
            spk, utt = usable[pos % len(usable)]
            pos += 1
            s = gen_inpainting_sample(utt, rng, cfg.inpainting, vocab, f"{SPLITS[index]}-{len(samples):06d}")
            if s is None:
                continue
            samples.append(TaskSample(s.id, s.src, s.tgt, {**s.meta, "speaker": spk}))
        log.info("inpainting %s: %d samples from %d speakers", SPLITS[index], len(samples), len({spk for spk, _ in part}))
        result.append(samples)
    return result


def _continuation_split(cfg: CorpusConfig, index: int, size: int) -> list[TaskSample]:
    vocab = cfg.vocab
    speaker = make_speaker("spk000", np.random.default_rng(cfg.seed), vocab, cfg.speaker)
    rng = _split_rng(cfg.seed, index)
    out: list[TaskSample] = []
    while len(out) < size:
        s = gen_continuation_sample(
            sample_utterance(speaker, rng, cfg.speaker), cfg.conditional_ratio, f"{SPLITS[index]}-{len(out):06d}"
        )
        if s is not None:
            out.append(TaskSample(s.id, s.src, s.tgt, {**s.meta, "speaker": speaker.id}))
    return out


def _utterance_split(cfg: CorpusConfig, index: int, size: int) -> list[TaskSample]:
    vocab = cfg.vocab
    speaker_rng = np.random.default_rng(cfg.seed)
    speakers = [make_speaker(f"spk{s:03d}", speaker_rng, vocab, cfg.speaker) for s in range(cfg.n_speakers)]
    rng = _split_rng(cfg.seed, index)
    out = []
    for i in range(size):
        speaker = speakers[int(rng.integers(0, len(speakers)))]
        utt = sample_utterance(speaker, rng, cfg.speaker)
        out.append(TaskSample(f"{SPLITS[index]}-{i:06d}", utt, utt, {"speaker": speaker.id}))
    return out


def generate_task_splits(cfg: CorpusConfig) -> dict[str, list[TaskSample]]:
    if cfg.task == "inpainting":
        parts = _inpainting_splits(cfg)
    else:
        build = {
            "translation": _translation_split,
            "continuation": _continuation_split,
            "utterances": _utterance_split,
        }[cfg.task]
        parts = [build(cfg, i, size) for i, size in enumerate(cfg.sizes)]
    return dict(zip(SPLITS, parts))


def build_corpus(cfg: CorpusConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write ``<split>.src/.tgt/.tsv/.meta.jsonl`` per split plus ``corpus.json``."""

    out_dir = Path(out_dir)
    manifests: dict[str, Path] = {}
    for name, samples in generate_task_splits(cfg).items():
        write_units_file(out_dir / f"{name}.src", (s.src for s in samples))
        write_units_file(out_dir / f"{name}.tgt", (s.tgt for s in samples))
        atomic_write_text(
            out_dir / f"{name}.meta.jsonl",
            "".join(json.dumps({"id": s.id, **s.meta}, sort_keys=True) + "\n" for s in samples),
        )
        manifests[name] = write_manifest(
            out_dir / f"{name}.tsv",
            (ManifestRow(s.id, f"{name}.src", f"{name}.tgt") for s in samples),
        )
        log.info("wrote %s split: %d samples", name, len(samples))
    atomic_write_text(out_dir / "corpus.json", dump_json(cfg.to_dict()))
    return manifests


def read_split(corpus_dir: str | Path, split: str, vocab: Vocabulary | None = None) -> list[TaskSample]:
    """Samples of one split in manifest order; row i refers to line i of its unit files."""

    corpus_dir = Path(corpus_dir)
    rows = read_manifest(corpus_dir / f"{split}.tsv")
    cache: dict[str, list[UnitSequence]] = {}

    def lines(rel: str) -> list[UnitSequence]:
        if rel not in cache:
            cache[rel] = read_units_file(corpus_dir / rel, vocab)
        return cache[rel]

    metas: list[dict[str, Any]] = []
    meta_path = corpus_dir / f"{split}.meta.jsonl"
    if meta_path.is_file():
        try:
            metas = [json.loads(line) for line in meta_path.read_text(encoding="utf-8").splitlines() if line]
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusIOError(meta_path, exc) from exc

    samples: list[TaskSample] = []
    seen: dict[tuple[str, str], int] = {}
    for i, row in enumerate(rows):
        key = (row.src_path, row.tgt_path)
        line = seen.get(key, 0)
        seen[key] = line + 1
        src_lines, tgt_lines = lines(row.src_path), lines(row.tgt_path)
        if line >= len(src_lines) or line >= len(tgt_lines):
            raise AlignmentError(
                f"{split}.tsv row {i + 1} ({row.id}) has no matching line in {row.src_path}/{row.tgt_path}"
            )
        meta = {k: v for k, v in metas[i].items() if k != "id"} if i < len(metas) else {}
        samples.append(TaskSample(row.id, src_lines[line], tgt_lines[line], meta))
    return samples


def corpus_vocab(corpus_dir: str | Path) -> Vocabulary:
    path = Path(corpus_dir) / "corpus.json"
    if not path.is_file():
        raise InputPathError(path, "corpus description not found")
    try:
        vocab_size = int(json.loads(path.read_text(encoding="utf-8"))["vocab_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusIOError(path, ValueError(f"no usable vocab_size ({exc!r})")) from exc
    return Vocabulary(vocab_size)


__all__ = [
    "SPLITS",
    "TASKS",
    "CipherConfig",
    "CorpusConfig",
    "CorpusSplit",
    "InpaintingConfig",
    "Speaker",
    "SpeakerConfig",
    "TaskSample",
    "apply_cipher",
    "build_corpus",
    "cipher_mapping",
    "corpus_vocab",
    "gen_continuation_sample",
    "gen_inpainting_sample",
    "gen_translation_pair",
    "generate_task_splits",
    "make_speaker",
    "read_split",
    "sample_frames",
    "sample_utterance",
    "seed_length",
    "speaker_records",
    "span_bounds",
    "split_speaker_disjoint",
    "validate_inpainting_sample",
]
