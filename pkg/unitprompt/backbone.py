"""Encoder-decoder transformer over unit sequences (pre-layer-norm blocks)."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, LengthError, PromptLengthError, ShapeError
from .numerics import (
    Matrix,
    Tape,
    add,
    concat_cols,
    concat_rows,
    cross_entropy,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    scale,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose,
)
from .units import UnitSequence, Vocabulary

if TYPE_CHECKING:
    from .prompts import PromptSet

PromptPair = tuple[Matrix, Matrix]


@dataclass(frozen=True)
class BackboneConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 128
    vocab_size: int = 32
    max_positions: int = 256
    init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        for name in ("d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff", "max_positions"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"backbone.{name} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"backbone.d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        Vocabulary(self.vocab_size)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(cfg: BackboneConfig) -> dict[str, tuple[int, int]]:
    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[int, int]] = {"emb.tokens": (v, d)}

    def attn(prefix: str) -> None:
        for w in ("w_q", "w_k", "w_v", "w_o"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def norm(prefix: str) -> None:
        shapes[f"{prefix}.g"] = (1, d)
        shapes[f"{prefix}.b"] = (1, d)

    def feed_forward(prefix: str) -> None:
        shapes[f"{prefix}.w1"] = (d, ff)
        shapes[f"{prefix}.b1"] = (1, ff)
        shapes[f"{prefix}.w2"] = (ff, d)
        shapes[f"{prefix}.b2"] = (1, d)

    for j in range(cfg.n_enc_layers):
        norm(f"enc.{j}.ln1")
        attn(f"enc.{j}.attn")
        norm(f"enc.{j}.ln2")
        feed_forward(f"enc.{j}.ff")
    norm("enc.ln")
    for j in range(cfg.n_dec_layers):
        norm(f"dec.{j}.ln1")
        attn(f"dec.{j}.self_attn")
        norm(f"dec.{j}.ln2")
        attn(f"dec.{j}.cross_attn")
        norm(f"dec.{j}.ln3")
        feed_forward(f"dec.{j}.ff")
    norm("dec.ln")
    shapes["out.w"] = (d, v)
    shapes["out.b"] = (1, v)
    return shapes


def backbone_param_count(cfg: BackboneConfig) -> int:
    """Closed form of ``sum(prod(shape))`` over :func:`parameter_shapes`."""

    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    feed_forward = 2 * d * ff + ff + d
    enc_layer = 4 * d * d + feed_forward + 2 * (2 * d)
    dec_layer = 8 * d * d + feed_forward + 3 * (2 * d)
    return (
        v * d
        + cfg.n_enc_layers * enc_layer
        + cfg.n_dec_layers * dec_layer
        + 2 * (2 * d)
        + d * v
        + v
    )


@dataclass(eq=False)
class BackboneModel:
    config: BackboneConfig
    params: dict[str, np.ndarray]
    frozen: bool = False
    step: int = 0

    def freeze(self) -> "BackboneModel":
        for arr in self.params.values():
            arr.flags.writeable = False
        self.frozen = True
        return self

    def unfreeze(self) -> "BackboneModel":
        return BackboneModel(
            self.config, {k: np.array(v) for k, v in self.params.items()}, False, self.step
        )

    def copy(self) -> "BackboneModel":
        clone = self.unfreeze()
        return clone.freeze() if self.frozen else clone

    def parameter_count(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            arr = self.params[name]
            h.update(name.encode())
            h.update(repr(arr.shape).encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def init_backbone(cfg: BackboneConfig, seed: int = 0) -> BackboneModel:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.endswith((".b", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, cfg.init_std, size=shape)
    return BackboneModel(cfg, params)


class Weights:
    """Resolves parameter names to matrices for one forward pass.

    Backbone arrays become tape leaves only when a tape is given and the model
    is not frozen; prompt arrays (``prompt.<key>``) whenever a tape is given.
    ``bound`` supplies ready-made matrices that take precedence.
    """

    def __init__(
        self,
        model: BackboneModel,
        prompts: "PromptSet | None" = None,
        tape: Tape | None = None,
        bound: Mapping[str, Matrix] | None = None,
    ) -> None:
        self.model = model
        self.prompts = prompts
        self.tape = tape
        self.bound = bound or {}
        self._cache: dict[str, Matrix] = {}

    def __call__(self, name: str) -> Matrix:
        m = self._cache.get(name)
        if m is not None:
            return m
        if name in self.bound:
            m = self.bound[name]
        else:
            if name.startswith("prompt."):
                if self.prompts is None:
                    raise ShapeError(f"no prompt set bound for {name}")
                arr = self.prompts.arrays[name[len("prompt."):]]
                trainable = True
            else:
                arr = self.model.params[name]
                trainable = not self.model.frozen
            if self.tape is not None and trainable:
                m = self.tape.leaf(name, arr)
            else:
                m = Matrix(arr)
        self._cache[name] = m
        return m


@dataclass(frozen=True)
class AttentionWeights:
    w_q: Matrix
    w_k: Matrix
    w_v: Matrix
    w_o: Matrix

    @classmethod
    def bind(cls, weights: Weights, prefix: str) -> "AttentionWeights":
        return cls(*(weights(f"{prefix}.{w}") for w in ("w_q", "w_k", "w_v", "w_o")))


def sinusoid_table(offset: int, length: int, d_model: int) -> np.ndarray:
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)[:, : d_model // 2]
    return table


def embed_scale(cfg: BackboneConfig) -> float:
    return math.sqrt(cfg.d_model)


def embed(
    model: BackboneModel,
    seq: Sequence[int],
    offset: int = 0,
    *,
    weights: Weights | None = None,
) -> Matrix:
    """Token embedding (scaled by sqrt(d_model)) plus sinusoidal positions from ``offset``."""

    cfg = model.config
    ids = cfg.vocab.validate(seq)
    if offset < 0 or offset + len(ids) > cfg.max_positions:
        raise LengthError(
            f"positions {offset}..{offset + len(ids)} exceed max_positions={cfg.max_positions}"
        )
    w = weights or Weights(model)
    tokens = scale(gather_rows(w("emb.tokens"), ids), embed_scale(cfg))
    return add(tokens, Matrix(sinusoid_table(offset, len(ids), cfg.d_model)))


def attention_layer(
    x: Matrix,
    layer: AttentionWeights,
    n_heads: int,
    *,
    causal: bool = False,
    kv_override: PromptPair | None = None,
    memory: Matrix | None = None,
    key_mask: np.ndarray | None = None,
) -> Matrix:
    """Multi-head attention of ``x`` over itself (or over ``memory``).

    With ``kv_override = (p_k, p_v)`` of length L, the first L rows of the key
    input and of the value input are replaced by ``p_k`` and ``p_v`` before the
    W^K / W^V projections; queries are untouched.
    """

    kv_in = memory if memory is not None else x
    k_in = v_in = kv_in
    if kv_override is not None:
        p_k, p_v = kv_override
        n = p_k.rows
        if p_v.rows != n:
            raise PromptLengthError(f"key prompt has {n} rows, value prompt {p_v.rows}")
        if n > kv_in.rows:
            raise PromptLengthError(f"prompt length {n} exceeds {kv_in.rows} key/value rows")
        rest = slice_rows(kv_in, n, kv_in.rows)
        k_in = concat_rows([p_k, rest])
        v_in = concat_rows([p_v, rest])

    nq, nk = x.rows, kv_in.rows
    allowed = np.ones((nq, nk), dtype=bool)
    if key_mask is not None:
        allowed &= np.asarray(key_mask, dtype=bool)[None, :]
    if causal:
        if nq != nk:
            raise ShapeError(f"causal attention needs square scores, got {nq}x{nk}")
        allowed &= np.tri(nq, nk, dtype=bool)

    q = matmul(x, layer.w_q)
    k = matmul(k_in, layer.w_k)
    v = matmul(v_in, layer.w_v)
    d_model = q.cols
    d_head = d_model // n_heads
    inv = 1.0 / math.sqrt(d_head)
    heads = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        scores = scale(matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi))), inv)
        heads.append(matmul(softmax_rows(scores, allowed), slice_cols(v, lo, hi)))
    merged = heads[0] if n_heads == 1 else concat_cols(heads)
    return matmul(merged, layer.w_o)


def _feed_forward(x: Matrix, w: Weights, prefix: str) -> Matrix:
    hidden = gelu(add(matmul(x, w(f"{prefix}.w1")), w(f"{prefix}.b1")))
    return add(matmul(hidden, w(f"{prefix}.w2")), w(f"{prefix}.b2"))


def _norm(x: Matrix, w: Weights, prefix: str, eps: float) -> Matrix:
    return layer_norm(x, w(f"{prefix}.g"), w(f"{prefix}.b"), eps)


def prompt_length(prompts: "PromptSet | None") -> int:
    return 0 if prompts is None else prompts.length


def _check_prompts(cfg: BackboneConfig, prompts: "PromptSet | None") -> "PromptSet | None":
    if prompts is None or prompts.length == 0:
        return None
    if (prompts.d_model, prompts.n_enc_layers, prompts.n_dec_layers) != (
        cfg.d_model,
        cfg.n_enc_layers,
        cfg.n_dec_layers,
    ):
        raise ShapeError(
            f"prompt set (d_model={prompts.d_model}, layers={prompts.n_enc_layers}+{prompts.n_dec_layers}) "
            f"does not fit backbone (d_model={cfg.d_model}, layers={cfg.n_enc_layers}+{cfg.n_dec_layers})"
        )
    return prompts


def encode(
    model: BackboneModel,
    src: Sequence[int],
    prompts: "PromptSet | None" = None,
    *,
    weights: Weights | None = None,
) -> tuple[Matrix, np.ndarray]:
    """Encoder memory ([p^E; src] rows) and its key mask (False on PAD)."""

    cfg = model.config
    prompts = _check_prompts(cfg, prompts)
    w = weights or Weights(model, prompts)
    n_prompt = prompt_length(prompts)
    pad = cfg.vocab.pad
    x = embed(model, src, n_prompt, weights=w)
    if n_prompt:
        x = concat_rows([w("prompt.enc_embed"), x])
    key_mask = np.array([True] * n_prompt + [u != pad for u in src], dtype=bool)
    for j in range(cfg.n_enc_layers):
        p = f"enc.{j}"
        kv = (w(f"prompt.enc.{j}.k"), w(f"prompt.enc.{j}.v")) if n_prompt else None
        h = _norm(x, w, f"{p}.ln1", cfg.ln_eps)
        x = add(
            x,
            attention_layer(
                h, AttentionWeights.bind(w, f"{p}.attn"), cfg.n_heads, kv_override=kv, key_mask=key_mask
            ),
        )
        x = add(x, _feed_forward(_norm(x, w, f"{p}.ln2", cfg.ln_eps), w, f"{p}.ff"))
    return _norm(x, w, "enc.ln", cfg.ln_eps), key_mask


def decode(
    model: BackboneModel,
    memory: Matrix,
    memory_mask: np.ndarray,
    tgt_in: Sequence[int],
    prompts: "PromptSet | None" = None,
    *,
    weights: Weights | None = None,
) -> Matrix:
    """Next-unit logits for every row of [p^D; tgt_in]."""

    cfg = model.config
    prompts = _check_prompts(cfg, prompts)
    w = weights or Weights(model, prompts)
    n_prompt = prompt_length(prompts)
    pad = cfg.vocab.pad
    cross = n_prompt > 0 and prompts.layout.cross_attention
    y = embed(model, tgt_in, n_prompt, weights=w)
    if n_prompt:
        y = concat_rows([w("prompt.dec_embed"), y])
    self_mask = np.array([True] * n_prompt + [u != pad for u in tgt_in], dtype=bool)
    for j in range(cfg.n_dec_layers):
        p = f"dec.{j}"
        kv = (w(f"prompt.dec.{j}.k"), w(f"prompt.dec.{j}.v")) if n_prompt else None
        h = _norm(y, w, f"{p}.ln1", cfg.ln_eps)
        y = add(
            y,
            attention_layer(
                h,
                AttentionWeights.bind(w, f"{p}.self_attn"),
                cfg.n_heads,
                causal=True,
                kv_override=kv,
                key_mask=self_mask,
            ),
        )
        ckv = (w(f"prompt.cross.{j}.k"), w(f"prompt.cross.{j}.v")) if cross else None
        h = _norm(y, w, f"{p}.ln2", cfg.ln_eps)
        y = add(
            y,
            attention_layer(
                h,
                AttentionWeights.bind(w, f"{p}.cross_attn"),
                cfg.n_heads,
                kv_override=ckv,
                memory=memory,
                key_mask=memory_mask,
            ),
        )
        y = add(y, _feed_forward(_norm(y, w, f"{p}.ln3", cfg.ln_eps), w, f"{p}.ff"))
    h = _norm(y, w, "dec.ln", cfg.ln_eps)
    return add(matmul(h, w("out.w")), w("out.b"))


def forward(
    model: BackboneModel,
    src: Sequence[int],
    tgt_in: Sequence[int],
    prompts: "PromptSet | None" = None,
    *,
    tape: Tape | None = None,
    bound: Mapping[str, Matrix] | None = None,
) -> Matrix:
    """Logits of shape (L + |tgt_in|) x vocab; the last |tgt_in| rows are scored."""

    if not len(src) or not len(tgt_in):
        raise LengthError("source and decoder input must be non-empty after framing")
    prompts = _check_prompts(model.config, prompts)
    w = Weights(model, prompts, tape, bound)
    memory, memory_mask = encode(model, src, prompts, weights=w)
    return decode(model, memory, memory_mask, tgt_in, prompts, weights=w)


def target_logits(logits: Matrix, n_prompt: int) -> Matrix:
    return slice_rows(logits, n_prompt, logits.rows)


# ---- framing and losses ----

def frame_source(src: Sequence[int], vocab: Vocabulary) -> UnitSequence:
    return tuple(src) + (vocab.eos,)


def frame_target(tgt: Sequence[int], vocab: Vocabulary) -> tuple[UnitSequence, UnitSequence]:
    """Decoder input [BOS, y...] and next-unit targets [y..., EOS]."""

    tgt = tuple(tgt)
    return (vocab.bos,) + tgt, tgt + (vocab.eos,)


def loss_from_ids(
    model: BackboneModel,
    src: Sequence[int],
    dec_in: Sequence[int],
    targets: Sequence[int],
    mask: Sequence[bool],
    prompts: "PromptSet | None" = None,
    *,
    tape: Tape | None = None,
    bound: Mapping[str, Matrix] | None = None,
) -> Matrix:
    """Masked cross-entropy; ``targets``/``mask`` cover all L + |dec_in| decoder rows."""

    logits = forward(model, src, dec_in, prompts, tape=tape, bound=bound)
    return cross_entropy(logits, targets, mask)


def sequence_loss(
    model: BackboneModel,
    src: Sequence[int],
    tgt: Sequence[int],
    prompts: "PromptSet | None" = None,
    *,
    tape: Tape | None = None,
    bound: Mapping[str, Matrix] | None = None,
) -> Matrix:
    vocab = model.config.vocab
    n_prompt = prompt_length(_check_prompts(model.config, prompts))
    dec_in, dec_out = frame_target(tgt, vocab)
    targets = (vocab.pad,) * n_prompt + dec_out
    mask = [False] * n_prompt + [True] * len(dec_out)
    return loss_from_ids(
        model, frame_source(src, vocab), dec_in, targets, mask, prompts, tape=tape, bound=bound
    )


def next_unit_accuracy(
    model: BackboneModel,
    pairs: Iterable[tuple[Sequence[int], Sequence[int]]],
    prompts: "PromptSet | None" = None,
) -> float:
    """Teacher-forced argmax accuracy over target positions (EOS included)."""

    vocab = model.config.vocab
    n_prompt = prompt_length(_check_prompts(model.config, prompts))
    hits = total = 0
    for src, tgt in pairs:
        dec_in, dec_out = frame_target(tgt, vocab)
        logits = forward(model, frame_source(src, vocab), dec_in, prompts)
        pred = logits.value[n_prompt:].argmax(axis=1)
        hits += int((pred == np.asarray(dec_out)).sum())
        total += len(dec_out)
    return hits / total if total else 0.0


__all__ = [
    "AttentionWeights",
    "BackboneConfig",
    "BackboneModel",
    "PromptPair",
    "Weights",
    "attention_layer",
    "backbone_param_count",
    "decode",
    "embed",
    "embed_scale",
    "encode",
    "forward",
    "frame_source",
    "frame_target",
    "init_backbone",
    "loss_from_ids",
    "next_unit_accuracy",
    "parameter_shapes",
    "prompt_length",
    "sequence_loss",
    "sinusoid_table",
    "target_logits",
]
