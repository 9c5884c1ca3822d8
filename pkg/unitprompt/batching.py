from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .backbone import BackboneModel, frame_source, frame_target, loss_from_ids
from .errors import DegenerateBatchError
from .numerics import Matrix, Tape, mean
from .tasks import TaskSample
from .units import Vocabulary


@dataclass(frozen=True)
class Batch:
    """Right-padded framed samples.

    ``src`` is B x S (source + EOS), ``dec_in`` is B x T (BOS + target),
    ``targets``/``mask`` are B x (L + T); the mask is False on the L
    decoder-prompt rows and on PAD.
    """

    src: np.ndarray
    dec_in: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    prompt_length: int

    def __len__(self) -> int:
        return self.src.shape[0]


def _pad(rows: Sequence[Sequence[int]], pad: int) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def batch(samples: Sequence[TaskSample], vocab: Vocabulary, prompt_length: int = 0) -> Batch:
    if not samples:
        raise DegenerateBatchError("cannot batch zero samples")
    srcs = [frame_source(vocab.validate(s.src), vocab) for s in samples]
    framed = [frame_target(vocab.validate(s.tgt), vocab) for s in samples]
    dec_in = _pad([d for d, _ in framed], vocab.pad)
    outs = _pad([o for _, o in framed], vocab.pad)
    lengths = np.array([len(o) for _, o in framed])
    b, t = outs.shape
    targets = np.full((b, prompt_length + t), vocab.pad, dtype=np.int64)
    targets[:, prompt_length:] = outs
    mask = np.zeros((b, prompt_length + t), dtype=bool)
    mask[:, prompt_length:] = np.arange(t)[None, :] < lengths[:, None]
    return Batch(_pad(srcs, vocab.pad), dec_in, targets, mask, prompt_length)


def batch_loss(
    model: BackboneModel,
    b: Batch,
    prompts=None,
    *,
    tape: Tape | None = None,
    bound: Mapping[str, Matrix] | None = None,
) -> Matrix:
    """Mean over rows of each row's masked cross-entropy."""

    losses = [
        loss_from_ids(
            model, b.src[i], b.dec_in[i], b.targets[i], b.mask[i], prompts, tape=tape, bound=bound
        )
        for i in range(len(b))
    ]
    return mean(losses)


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless index batches; each epoch is a fresh permutation of ``range(n)``."""

    if n <= 0:
        raise DegenerateBatchError("no samples to draw batches from")
    size = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for lo in range(0, n - size + 1, size):
            yield order[lo : lo + size]


__all__ = ["Batch", "batch", "batch_loss", "iterate_batches"]
