from __future__ import annotations

import numpy as np
import pytest

from unitprompt.errors import AlignmentError, ConfigError, CorpusIOError, InputPathError, SplitError
from unitprompt.tasks import (
    SPLITS,
    CipherConfig,
    CorpusConfig,
    InpaintingConfig,
    SpeakerConfig,
    apply_cipher,
    build_corpus,
    cipher_mapping,
    corpus_vocab,
    gen_continuation_sample,
    gen_inpainting_sample,
    gen_translation_pair,
    generate_task_splits,
    read_split,
    seed_length,
    span_bounds,
    speaker_records,
    split_speaker_disjoint,
    validate_inpainting_sample,
)
from unitprompt.units import Vocabulary, dedup

VOCAB = Vocabulary(32)


# --- translation ---

def test_identity_cipher():
    k = VOCAB.content_size
    mapping = cipher_mapping(CipherConfig(mapping=tuple(range(k))), VOCAB)
    seq = (3, 1, 4, 1, 5)
    assert apply_cipher(seq, mapping) == seq


def test_involution_cipher_twice_is_identity():
    k = VOCAB.content_size
    mapping = tuple(i + 1 if i % 2 == 0 else i - 1 for i in range(k))
    rng = np.random.default_rng(0)
    for _ in range(50):
        seq = tuple(int(u) for u in rng.integers(0, k, size=9))
        assert apply_cipher(apply_cipher(seq, mapping), mapping) == seq


def test_cipher_mapping_is_a_seeded_permutation():
    m = cipher_mapping(CipherConfig(), VOCAB)
    assert sorted(m) == list(range(VOCAB.content_size))
    assert m == cipher_mapping(CipherConfig(), VOCAB)
    with pytest.raises(ConfigError):
        cipher_mapping(CipherConfig(mapping=(0, 0, 1)), VOCAB)


def test_translation_pairs():
    cfg = CipherConfig()
    rng = np.random.default_rng(1)
    mapping = cipher_mapping(cfg, VOCAB)
    for _ in range(200):
        s = gen_translation_pair(rng, cfg, VOCAB)
        assert cfg.min_len <= len(s.src) <= cfg.max_len
        assert all(a != b for a, b in zip(s.src, s.src[1:]))
        assert s.tgt == apply_cipher(s.src, mapping)


def test_swapped_pairs_keep_length_until_the_corpus_condenses_them():
    cipher = CipherConfig(swap_adjacent=True)
    mapping = cipher_mapping(cipher, VOCAB)
    rng = np.random.default_rng(2)
    for _ in range(200):
        s = gen_translation_pair(rng, cipher, VOCAB)
        assert s.tgt == apply_cipher(s.src, mapping, swap_adjacent=True)
        assert len(s.tgt) == len(s.src)
    train = generate_task_splits(CorpusConfig(sizes=(300, 0, 0), cipher=cipher))["train"]
    for s in train:
        assert s.tgt == dedup(apply_cipher(s.src, mapping, swap_adjacent=True))
    assert any(len(s.tgt) < len(s.src) for s in train)


# --- inpainting ---

def test_span_bounds_for_length_100():
    assert span_bounds(100, InpaintingConfig()) == (32, 48)


def test_inpainting_spans_stay_in_bounds():
    cfg = InpaintingConfig()
    rng = np.random.default_rng(2)
    clean = tuple(int(u) for u in rng.integers(0, VOCAB.content_size, size=100))
    for i in range(10_000):
        s = gen_inpainting_sample(clean, rng, cfg, VOCAB, f"s{i}")
        assert 32 <= s.meta["span_len"] <= 48
        assert s.src.count(VOCAB.mask) == s.meta["span_len"]
        assert validate_inpainting_sample(s, cfg, VOCAB) == []


def test_inpainting_length_threshold():
    cfg = InpaintingConfig()
    rng = np.random.default_rng(0)
    assert gen_inpainting_sample((1,) * (cfg.min_len - 1), rng, cfg, VOCAB) is None
    assert gen_inpainting_sample(tuple(range(cfg.min_len)), rng, cfg, VOCAB) is not None


def test_inpainting_deletion():
    cfg = InpaintingConfig(corruption="delete")
    rng = np.random.default_rng(4)
    clean = tuple(i % 20 for i in range(60))
    s = gen_inpainting_sample(clean, rng, cfg, VOCAB)
    assert len(s.src) == len(clean) - s.meta["span_len"]
    assert VOCAB.mask not in s.src
    assert validate_inpainting_sample(s, cfg, VOCAB) == []


def test_validation_flags_tampered_source():
    cfg = InpaintingConfig()
    s = gen_inpainting_sample(tuple(i % 20 for i in range(50)), np.random.default_rng(0), cfg, VOCAB, "x")
    bad = type(s)(s.id, (s.src[0] + 1,) + s.src[1:], s.tgt, s.meta)
    if s.meta["span_start"] == 0:
        bad = type(s)(s.id, s.src[:-1] + (s.src[-1] + 1,), s.tgt, s.meta)
    assert validate_inpainting_sample(bad, cfg, VOCAB)


# --- speaker splits ---

def _records(n_speakers, per_speaker):
    return [(f"spk{s:02d}", (s, s + 1)) for s in range(n_speakers) for _ in range(per_speaker)]


def test_split_counts_twenty_speakers():
    split = split_speaker_disjoint(_records(20, 50), np.random.default_rng(0), (0.9, 0.05, 0.05))
    assert [len(split.speakers(name)) for name in SPLITS] == [18, 1, 1]


def test_split_three_speakers():
    split = split_speaker_disjoint(_records(3, 5), np.random.default_rng(0))
    assert [len(split.speakers(name)) for name in SPLITS] == [1, 1, 1]


def test_split_errors():
    with pytest.raises(SplitError):
        split_speaker_disjoint(_records(2, 5), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        split_speaker_disjoint(_records(5, 5), np.random.default_rng(0), (0.5, 0.5, 0.5))


def test_splits_are_speaker_disjoint():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 10, size=int(rng.integers(3, 12)))
        records = [(f"s{i}", (i,)) for i, c in enumerate(counts) for _ in range(int(c))]
        split = split_speaker_disjoint(records, rng)
        train, valid, test = (split.speakers(name) for name in SPLITS)
        assert not train & valid and not train & test and not valid & test
        assert sum(len(p) for p in split.parts()) == len(records)


def test_speaker_utterances_have_no_repeats():
    records = speaker_records(2, 5, np.random.default_rng(0), VOCAB, SpeakerConfig())
    assert len(records) == 10
    for _, utt in records:
        assert all(a != b for a, b in zip(utt, utt[1:]))


# --- continuation ---

@pytest.mark.parametrize("total, ratio, expected", [(10, 0.5, 5), (10, 0.25, 3), (2, 0.1, 1), (3, 0.9, 2)])
def test_seed_length(total, ratio, expected):
    assert seed_length(total, ratio) == expected


@pytest.mark.parametrize("ratio", [0.25, 0.5, 0.75])
def test_seed_length_grid(ratio):
    for total in range(2, 60):
        assert seed_length(total, ratio) == min(max(int(ratio * total + 0.5), 1), total - 1)


def test_continuation_samples():
    s = gen_continuation_sample(tuple(range(10)), 0.25)
    assert s.src == (0, 1, 2)
    assert s.src + s.tgt == tuple(range(10))
    assert gen_continuation_sample((4,), 0.5) is None
    with pytest.raises(ConfigError):
        gen_continuation_sample((1, 2, 3), 1.0)


# --- corpus files ---

def _small(task, **kw):
    kw.setdefault("sizes", (20, 5, 5))
    return CorpusConfig(task=task, n_speakers=6, utterances_per_speaker=10, **kw)


@pytest.mark.parametrize("task", ["translation", "continuation", "utterances"])
def test_build_corpus_rows_and_reruns(tmp_path, task):
    cfg = _small(task)
    first = build_corpus(cfg, tmp_path / "a")
    build_corpus(cfg, tmp_path / "b")
    for name, size in zip(SPLITS, cfg.sizes):
        assert len(read_split(tmp_path / "a", name)) == size
        assert len(first[name].read_text().splitlines()) == size + 1
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_read_split_matches_generated(tmp_path):
    cfg = _small("translation")
    build_corpus(cfg, tmp_path)
    generated = generate_task_splits(cfg)
    loaded = read_split(tmp_path, "valid", corpus_vocab(tmp_path))
    assert [(s.id, s.src, s.tgt) for s in loaded] == [(s.id, s.src, s.tgt) for s in generated["valid"]]


def test_inpainting_corpus_revalidates(tmp_path):
    cfg = _small("inpainting", sizes=(10, 3, 3))
    build_corpus(cfg, tmp_path)
    vocab = corpus_vocab(tmp_path)
    speakers = {}
    for name in SPLITS:
        samples = read_split(tmp_path, name, vocab)
        assert len(samples) == dict(zip(SPLITS, cfg.sizes))[name]
        for s in samples:
            assert validate_inpainting_sample(s, cfg.inpainting, vocab) == []
        speakers[name] = {s.meta["speaker"] for s in samples}
    assert not speakers["train"] & speakers["valid"]
    assert not speakers["train"] & speakers["test"]
    assert not speakers["valid"] & speakers["test"]


def test_read_split_detects_missing_lines(tmp_path):
    build_corpus(_small("translation"), tmp_path)
    src = tmp_path / "test.src"
    src.write_text("".join(src.read_text().splitlines(keepends=True)[:-1]))
    with pytest.raises(AlignmentError):
        read_split(tmp_path, "test")


def test_corpus_vocab_missing(tmp_path):
    with pytest.raises(InputPathError):
        corpus_vocab(tmp_path)


@pytest.mark.parametrize("text", ["{}", "not json", '{"vocab_size": "many"}'])
def test_corpus_vocab_unreadable(tmp_path, text):
    (tmp_path / "corpus.json").write_text(text)
    with pytest.raises(CorpusIOError):
        corpus_vocab(tmp_path)


def test_corpus_config_validation():
    with pytest.raises(ConfigError):
        CorpusConfig(task="summarise")
    with pytest.raises(ConfigError):
        CorpusConfig(ratios=(0.8, 0.1, 0.2))
