"""Span-denoising pretraining of the backbone."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .backbone import BackboneConfig, BackboneModel, init_backbone
from .batching import batch, batch_loss, iterate_batches
from .errors import ConfigError, DegenerateBatchError, FrozenBackboneError, TrainingError
from .numerics import Tape
from .optim import Adam, clip_grad_norm
from .tasks import TaskSample
from .units import UnitSequence, Vocabulary

log = logging.getLogger(__name__)

OBJECTIVES = ("denoise", "copy")


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = 1.0
    seed: int = 0
    objective: str = "denoise"
    mask_frac_min: float = 0.15
    mask_frac_max: float = 0.35
    log_every: int = 100
    save_every: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError("pretrain.steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("pretrain.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("pretrain.lr must be > 0")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"pretrain.objective must be one of {', '.join(OBJECTIVES)}")
        if not 0.0 < self.mask_frac_min <= self.mask_frac_max <= 1.0:
            raise ConfigError("pretrain needs 0 < mask_frac_min <= mask_frac_max <= 1")


def span_mask(
    seq: Sequence[int],
    rng: np.random.Generator,
    vocab: Vocabulary,
    frac_min: float = 0.15,
    frac_max: float = 0.35,
) -> UnitSequence:
    """Replace one contiguous span (at least one unit) with MASK units."""

    seq = tuple(seq)
    n = len(seq)
    if n == 0:
        return seq
    span = min(n, max(1, int(round(rng.uniform(frac_min, frac_max) * n))))
    start = int(rng.integers(0, n - span + 1))
    return seq[:start] + (vocab.mask,) * span + seq[start + span:]


def pretrain_backbone(
    corpus: Sequence[UnitSequence],
    cfg: PretrainConfig,
    backbone: BackboneConfig,
    *,
    model: BackboneModel | None = None,
    on_step: Callable[[int, float], None] | None = None,
    on_checkpoint: Callable[[BackboneModel], None] | None = None,
) -> BackboneModel:
    """Train a fresh (or given, unfrozen) backbone for ``cfg.steps`` Adam steps."""

    if not corpus:
        raise DegenerateBatchError("pretraining corpus is empty")
    if model is None:
        model = init_backbone(backbone, seed=cfg.seed)
    elif model.frozen:
        raise FrozenBackboneError("cannot pretrain a frozen backbone; unfreeze() it first")
    vocab = model.config.vocab
    corpus = [vocab.validate(seq) for seq in corpus]
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    batches = iterate_batches(len(corpus), cfg.batch_size, rng)
    for step in range(cfg.steps):
        idx = next(batches)
        samples = []
        for i in idx:
            clean = corpus[int(i)]
            src = clean if cfg.objective == "copy" else span_mask(
                clean, rng, vocab, cfg.mask_frac_min, cfg.mask_frac_max
            )
            samples.append(TaskSample(f"pretrain-{int(i)}", src, clean))
        tape = Tape()
        loss = batch_loss(model, batch(samples, vocab), tape=tape)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(step, f"non-finite loss {value}")
        tape.backward(loss)
        grads = {name: np.array(g) for name, g in tape.leaf_grads().items()}
        norm = clip_grad_norm(grads, cfg.grad_clip)
        opt.step(grads)
        model.step += 1
        if on_step is not None:
            on_step(step, value)
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.info("pretrain step %d loss %.4f grad_norm %.3f", step, value, norm)
        if on_checkpoint is not None and cfg.save_every and (step + 1) % cfg.save_every == 0:
            on_checkpoint(model)
    return model


__all__ = ["OBJECTIVES", "PretrainConfig", "pretrain_backbone", "span_mask"]
