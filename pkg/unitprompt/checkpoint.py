"""Binary checkpoint container for backbones and prompt sets.

Layout: ``b"UNPK"``, uint16 format version, uint32 header length, a
sorted-key JSON header, then every array as row-major little-endian float64
in header order. Nothing time-dependent is stored, so identical parameters
give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .backbone import BackboneConfig, BackboneModel, parameter_shapes
from .errors import CheckpointError, CheckpointMismatchError, CorpusIOError, InputPathError
from .prompts import PromptLayout, PromptSet, prompt_keys
from .utils import atomic_write_bytes

MAGIC = b"UNPK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def pack(kind: str, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def unpack(data: bytes, expected_kind: str) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a unitprompt checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("kind") != expected_kind:
        raise CheckpointMismatchError(
            f"expected a {expected_kind} checkpoint, found {header.get('kind')!r}"
        )
    body = memoryview(data)[start + header_len :]
    arrays: dict[str, np.ndarray] = {}
    try:
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            lo = entry["offset"]
            hi = lo + 8 * count
            if hi > len(body):
                raise CheckpointError(f"checkpoint is truncated inside {entry['name']}")
            arr = np.frombuffer(body[lo:hi], dtype="<f8").astype(np.float64).reshape(shape)
            arrays[entry["name"]] = arr
        return header["meta"], arrays
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc!r}") from exc


def _read(path: str | Path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise InputPathError(path, "checkpoint not found")
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CorpusIOError(path, exc) from exc


# --- Backbones ---

def backbone_bytes(model: BackboneModel) -> bytes:
    meta = {"config": model.config.to_dict(), "frozen": model.frozen, "step": model.step}
    return pack("backbone", meta, model.params)


def save_backbone(path: str | Path, model: BackboneModel) -> Path:
    return atomic_write_bytes(path, backbone_bytes(model))


def load_backbone(path: str | Path) -> BackboneModel:
    meta, arrays = unpack(_read(path), "backbone")
    try:
        cfg = BackboneConfig(**meta["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad backbone config in checkpoint ({exc})") from exc
    expected = parameter_shapes(cfg)
    if set(arrays) != set(expected) or any(arrays[k].shape != s for k, s in expected.items()):
        raise CheckpointError(f"{path}: parameter arrays do not match the stored config")
    model = BackboneModel(cfg, {k: arrays[k] for k in expected}, False, int(meta.get("step", 0)))
    return model.freeze() if meta.get("frozen") else model


# --- Prompt sets ---

def prompt_bytes(prompts: PromptSet) -> bytes:
    meta = {
        "length": prompts.length,
        "d_model": prompts.d_model,
        "n_enc_layers": prompts.n_enc_layers,
        "n_dec_layers": prompts.n_dec_layers,
        "layout": prompts.layout.describe(),
    }
    return pack("prompts", meta, prompts.arrays)


def save_prompts(path: str | Path, prompts: PromptSet) -> Path:
    return atomic_write_bytes(path, prompt_bytes(prompts))


def load_prompts(path: str | Path, backbone: BackboneConfig | None = None) -> PromptSet:
    """Load a prompt set; with ``backbone`` given, refuse one built for another shape."""

    meta, arrays = unpack(_read(path), "prompts")
    try:
        layout = PromptLayout.parse(meta["layout"])
        prompts = PromptSet(
            int(meta["length"]),
            int(meta["d_model"]),
            int(meta["n_enc_layers"]),
            int(meta["n_dec_layers"]),
            layout,
            arrays,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad prompt metadata in checkpoint ({exc!r})") from exc
    keys = prompt_keys(prompts.n_enc_layers, prompts.n_dec_layers, layout)
    shape = (prompts.length, prompts.d_model)
    if set(arrays) != set(keys) or any(a.shape != shape for a in arrays.values()):
        raise CheckpointError(f"{path}: prompt arrays do not match the stored layout")
    prompts.arrays = {k: arrays[k] for k in keys}
    if backbone is not None:
        problems = [
            f"{name} {have} != backbone {want}"
            for name, have, want in (
                ("d_model", prompts.d_model, backbone.d_model),
                ("n_enc_layers", prompts.n_enc_layers, backbone.n_enc_layers),
                ("n_dec_layers", prompts.n_dec_layers, backbone.n_dec_layers),
            )
            if have != want
        ]
        if problems:
            raise CheckpointMismatchError(f"{path}: prompt set does not fit backbone: " + "; ".join(problems))
    return prompts


__all__ = [
    "MAGIC",
    "VERSION",
    "backbone_bytes",
    "load_backbone",
    "load_prompts",
    "pack",
    "prompt_bytes",
    "save_backbone",
    "save_prompts",
    "unpack",
]
