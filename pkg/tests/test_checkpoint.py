from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from unitprompt.backbone import BackboneConfig, forward, init_backbone
from unitprompt.checkpoint import (
    MAGIC,
    VERSION,
    backbone_bytes,
    load_backbone,
    load_prompts,
    pack,
    prompt_bytes,
    save_backbone,
    save_prompts,
    unpack,
)
from unitprompt.errors import CheckpointError, CheckpointMismatchError, InputPathError
from unitprompt.prompts import PromptLayout, init_prompts


def test_backbone_round_trip_is_bitwise(tmp_path, tiny_model):
    tiny_model.step = 17
    path = save_backbone(tmp_path / "b.ckpt", tiny_model)
    loaded = load_backbone(path)
    assert loaded.config == tiny_model.config
    assert loaded.step == 17
    assert not loaded.frozen
    assert loaded.checksum() == tiny_model.checksum()
    assert backbone_bytes(loaded) == path.read_bytes()
    np.testing.assert_array_equal(
        forward(loaded, (1, 2), (9, 3)).value, forward(tiny_model, (1, 2), (9, 3)).value
    )


def test_frozen_flag_survives(tmp_path, frozen_model):
    loaded = load_backbone(save_backbone(tmp_path / "b.ckpt", frozen_model))
    assert loaded.frozen
    with pytest.raises(ValueError):
        loaded.params["out.w"][0, 0] = 1.0


def test_same_parameters_same_bytes(tiny_cfg):
    assert backbone_bytes(init_backbone(tiny_cfg, 5)) == backbone_bytes(init_backbone(tiny_cfg, 5))


@pytest.mark.parametrize("cross", [True, False])
def test_prompt_round_trip(tmp_path, tiny_cfg, cross):
    prompts = init_prompts(tiny_cfg, 3, seed=2, layout=PromptLayout(cross))
    path = save_prompts(tmp_path / "p.ckpt", prompts)
    loaded = load_prompts(path, tiny_cfg)
    assert loaded.equals(prompts)
    assert prompt_bytes(loaded) == path.read_bytes()


def test_prompt_backbone_mismatch(tmp_path, tiny_cfg):
    path = save_prompts(tmp_path / "p.ckpt", init_prompts(tiny_cfg, 3))
    other = BackboneConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=2, vocab_size=12)
    with pytest.raises(CheckpointMismatchError, match="d_model.*n_enc_layers"):
        load_prompts(path, other)


def test_kind_mismatch(tmp_path, tiny_model, tiny_cfg):
    backbone = save_backbone(tmp_path / "b.ckpt", tiny_model)
    prompts = save_prompts(tmp_path / "p.ckpt", init_prompts(tiny_cfg, 2))
    with pytest.raises(CheckpointMismatchError):
        load_prompts(backbone)
    with pytest.raises(CheckpointMismatchError):
        load_backbone(prompts)


def test_bad_magic_and_truncation(tmp_path, tiny_model):
    data = backbone_bytes(tiny_model)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_backbone(bad)
    short = tmp_path / "short.ckpt"
    short.write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_backbone(short)
    with pytest.raises(InputPathError):
        load_backbone(tmp_path / "missing.ckpt")


def test_prompt_checkpoint_missing_metadata(tmp_path, tiny_cfg):
    prompts = init_prompts(tiny_cfg, 2)
    path = tmp_path / "p.ckpt"
    path.write_bytes(pack("prompts", {"layout": prompts.layout.describe()}, prompts.arrays))
    with pytest.raises(CheckpointError, match="length"):
        load_prompts(path)


def test_checkpoint_header_without_entries(tmp_path):
    path = tmp_path / "b.ckpt"
    header = json.dumps({"kind": "backbone", "meta": {}}).encode("utf-8")
    path.write_bytes(struct.pack("<4sHI", MAGIC, VERSION, len(header)) + header)
    with pytest.raises(CheckpointError, match="corrupt"):
        load_backbone(path)


def test_pack_unpack_layout():
    arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones((1, 2))}
    data = pack("thing", {"x": 1}, arrays)
    assert data[:4] == MAGIC
    meta, out = unpack(data, "thing")
    assert meta == {"x": 1}
    assert list(out) == ["a", "b"]
    np.testing.assert_array_equal(out["b"], arrays["b"])
