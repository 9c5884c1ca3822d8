"""Deep prompts: the trainable vectors that steer a frozen backbone.

A prompt set of length L holds embedding-level prompts prepended to the
encoder and decoder inputs (``enc_embed``, ``dec_embed``) and, per layer,
key/value prompts that replace the first L rows of that layer's attention
key/value input (``enc.{j}.k/v``, ``dec.{j}.k/v`` and, when the layout
enables it, ``cross.{j}.k/v`` over the encoder memory).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .backbone import (
    BackboneConfig,
    BackboneModel,
    decode as decode_logits,
    encode,
    frame_source,
    prompt_length,
)
from .batching import batch, batch_loss, iterate_batches
from .errors import ConfigError, DegenerateBatchError, FrozenBackboneError, TrainingError
from .numerics import Tape
from .optim import Adam, clip_grad_norm
from .tasks import TaskSample
from .units import UnitSequence

log = logging.getLogger(__name__)

DECODE_MODES = ("greedy", "sample", "beam")


@dataclass(frozen=True)
class PromptLayout:
    cross_attention: bool = True

    def describe(self) -> str:
        return "embed+self+cross" if self.cross_attention else "embed+self"

    @classmethod
    def parse(cls, text: str) -> "PromptLayout":
        if text not in ("embed+self+cross", "embed+self"):
            raise ConfigError(f"unknown prompt layout {text!r}")
        return cls(cross_attention=text.endswith("+cross"))


def prompt_keys(n_enc_layers: int, n_dec_layers: int, layout: PromptLayout) -> list[str]:
    keys = ["enc_embed", "dec_embed"]
    keys += [f"enc.{j}.{kv}" for j in range(n_enc_layers) for kv in ("k", "v")]
    keys += [f"dec.{j}.{kv}" for j in range(n_dec_layers) for kv in ("k", "v")]
    if layout.cross_attention:
        keys += [f"cross.{j}.{kv}" for j in range(n_dec_layers) for kv in ("k", "v")]
    return keys


@dataclass(eq=False)
class PromptSet:
    length: int
    d_model: int
    n_enc_layers: int
    n_dec_layers: int
    layout: PromptLayout = field(default_factory=PromptLayout)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def parameter_count(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())

    def copy(self) -> "PromptSet":
        return PromptSet(
            self.length,
            self.d_model,
            self.n_enc_layers,
            self.n_dec_layers,
            self.layout,
            {k: np.array(v) for k, v in self.arrays.items()},
        )

    def equals(self, other: "PromptSet") -> bool:
        """Bitwise equality of shapes, layout and every array."""

        if (self.length, self.d_model, self.n_enc_layers, self.n_dec_layers, self.layout) != (
            other.length,
            other.d_model,
            other.n_enc_layers,
            other.n_dec_layers,
            other.layout,
        ):
            return False
        if set(self.arrays) != set(other.arrays):
            return False
        return all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())


def prompt_param_count(cfg: BackboneConfig, length: int, layout: PromptLayout | None = None) -> int:
    layout = layout or PromptLayout()
    d = cfg.d_model
    count = 2 * length * d + 2 * length * d * (cfg.n_enc_layers + cfg.n_dec_layers)
    if layout.cross_attention:
        count += 2 * length * d * cfg.n_dec_layers
    return count


def init_prompts(
    cfg: BackboneConfig,
    length: int,
    seed: int = 0,
    *,
    scale: float = 0.02,
    layout: PromptLayout | None = None,
) -> PromptSet:
    if length < 0:
        raise ConfigError(f"prompt length must be >= 0, got {length}")
    layout = layout or PromptLayout()
    rng = np.random.default_rng(seed)
    arrays = {
        key: rng.normal(0.0, scale, size=(length, cfg.d_model))
        for key in prompt_keys(cfg.n_enc_layers, cfg.n_dec_layers, layout)
    }
    return PromptSet(length, cfg.d_model, cfg.n_enc_layers, cfg.n_dec_layers, layout, arrays)


# --- Tuning ---

@dataclass(frozen=True)
class TuneConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 500
    batch_size: int = 16
    seed: int = 0
    init_scale: float = 0.02
    prompt_length: int = 8
    cross_attention: bool = True
    grad_clip: float | None = 1.0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError("tune.lr must be > 0")
        if self.steps < 0:
            raise ConfigError("tune.steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("tune.batch_size must be >= 1")
        if self.prompt_length < 0:
            raise ConfigError("tune.prompt_length must be >= 0")

    @property
    def layout(self) -> PromptLayout:
        return PromptLayout(self.cross_attention)


def tune(
    model: BackboneModel,
    prompts: PromptSet,
    data: Sequence[TaskSample],
    cfg: TuneConfig,
    *,
    on_step: Callable[[int, float], None] | None = None,
) -> PromptSet:
    """Adam on the prompt arrays only; the backbone must be frozen and stays bit-identical."""

    if not model.frozen:
        raise FrozenBackboneError("prompt tuning needs a frozen backbone; call freeze() first")
    before = model.checksum()
    tuned = prompts.copy()
    if cfg.steps == 0:
        return tuned
    if not data:
        raise DegenerateBatchError("no tuning samples")
    if tuned.length == 0:
        log.warning("prompt length is 0; nothing to tune")
        return tuned

    vocab = model.config.vocab
    opt = Adam(
        {f"prompt.{k}": v for k, v in tuned.arrays.items()},
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
    )
    rng = np.random.default_rng(cfg.seed)
    batches = iterate_batches(len(data), cfg.batch_size, rng)
    for step in range(cfg.steps):
        b = batch([data[int(i)] for i in next(batches)], vocab, tuned.length)
        tape = Tape()
        loss = batch_loss(model, b, tuned, tape=tape)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(step, f"non-finite loss {value}")
        tape.backward(loss)
        grads = {name: np.array(g) for name, g in tape.leaf_grads().items()}
        norm = clip_grad_norm(grads, cfg.grad_clip)
        opt.step(grads)
        if on_step is not None:
            on_step(step, value)
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.info("tune step %d loss %.4f grad_norm %.3f", step, value, norm)

    if model.checksum() != before:
        raise FrozenBackboneError("backbone parameters changed during prompt tuning")
    return tuned


# --- Decoding ---

@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "greedy"
    temperature: float = 1.0
    max_len: int = 64
    seed: int = 0
    beam_size: int = 4
    length_penalty: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in DECODE_MODES:
            raise ConfigError(f"decode.mode must be one of {', '.join(DECODE_MODES)}; got {self.mode!r}")
        if not self.temperature > 0:
            raise ConfigError(f"decode.temperature must be > 0, got {self.temperature}")
        if self.max_len < 0:
            raise ConfigError("decode.max_len must be >= 0")
        if self.beam_size < 1:
            raise ConfigError("decode.beam_size must be >= 1")


def _next_log_probs(model, memory, memory_mask, prefix, prompts, banned) -> np.ndarray:
    vocab = model.config.vocab
    logits = decode_logits(model, memory, memory_mask, (vocab.bos,) + prefix, prompts)
    row = np.array(logits.value[-1])
    row[banned] = -np.inf
    mx = row.max()
    return row - (mx + np.log(np.exp(row - mx).sum()))


def _beam_search(model, memory, memory_mask, prompts, cfg: DecodeConfig, banned) -> UnitSequence:
    eos = model.config.vocab.eos
    beams: list[tuple[UnitSequence, float]] = [((), 0.0)]
    finished: list[tuple[UnitSequence, float, int]] = []
    for _ in range(cfg.max_len):
        candidates: list[tuple[UnitSequence, float]] = []
        for tokens, score in beams:
            logp = _next_log_probs(model, memory, memory_mask, tokens, prompts, banned)
            for u in np.argsort(-logp, kind="stable")[: cfg.beam_size]:
                if np.isfinite(logp[u]):
                    candidates.append((tokens + (int(u),), score + float(logp[u])))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        beams = []
        for tokens, score in candidates[: cfg.beam_size]:
            if tokens[-1] == eos:
                finished.append((tokens[:-1], score, len(tokens)))
            else:
                beams.append((tokens, score))
        if not beams or len(finished) >= cfg.beam_size:
            break
    pool = finished + [(tokens, score, len(tokens)) for tokens, score in beams]
    if not pool:
        return ()
    best = min(pool, key=lambda c: (-c[1] / max(c[2], 1) ** cfg.length_penalty, c[0]))
    return best[0]


def generate(
    model: BackboneModel,
    prompts: PromptSet | None,
    src: Sequence[int],
    decode: DecodeConfig,
    *,
    rng: np.random.Generator | None = None,
) -> UnitSequence:
    """Autoregressive decoding from [p^D; BOS] over the encoded [p^E; src]; stops at EOS or max_len."""

    if decode.max_len == 0:
        return ()
    vocab = model.config.vocab
    if prompts is not None and prompts.length == 0:
        prompts = None
    memory, memory_mask = encode(model, frame_source(vocab.validate(src), vocab), prompts)
    banned = [vocab.pad, vocab.bos, vocab.mask]
    if decode.mode == "beam":
        return _beam_search(model, memory, memory_mask, prompts, decode, banned)
    rng = rng if rng is not None else np.random.default_rng(decode.seed)
    out: list[int] = []
    for _ in range(decode.max_len):
        logp = _next_log_probs(model, memory, memory_mask, tuple(out), prompts, banned)
        if decode.mode == "greedy":
            unit = int(np.argmax(logp))
        else:
            z = logp / decode.temperature
            p = np.exp(z - z.max())
            unit = int(rng.choice(len(p), p=p / p.sum()))
        if unit == vocab.eos:
            break
        out.append(unit)
    return tuple(out)


def generate_many(
    model: BackboneModel,
    prompt_bank: Mapping[str, PromptSet | None],
    requests: Sequence[tuple[str, Sequence[int]]],
    decode: DecodeConfig,
    num_workers: int = 1,
) -> list[UnitSequence]:
    """Serve several tasks from one frozen backbone; results follow request order.

    Request ``i`` samples with ``default_rng([decode.seed, i])``.
    """

    for task, _ in requests:
        if task not in prompt_bank:
            raise ConfigError(f"no prompt set named {task!r} in the prompt bank")

    def one(item: tuple[int, tuple[str, Sequence[int]]]) -> UnitSequence:
        i, (task, src) = item
        return generate(model, prompt_bank[task], src, decode, rng=np.random.default_rng([decode.seed, i]))

    items = list(enumerate(requests))
    if num_workers <= 1:
        return [one(item) for item in items]
    with ThreadPoolExecutor(max_workers=num_workers) as pool:
        return list(pool.map(one, items))


__all__ = [
    "DECODE_MODES",
    "DecodeConfig",
    "PromptLayout",
    "PromptSet",
    "TuneConfig",
    "generate",
    "generate_many",
    "init_prompts",
    "prompt_keys",
    "prompt_length",
    "prompt_param_count",
    "tune",
]
