from __future__ import annotations

import pytest

from unitprompt.config import apply_overrides, dataclass_from_dict, parse_override, read_config_file
from unitprompt.errors import ConfigError, InputPathError
from unitprompt.prompts import DecodeConfig, TuneConfig
from unitprompt.tasks import CorpusConfig


def test_parse_override_values():
    assert parse_override("tune.lr=0.01") == (["tune", "lr"], 0.01)
    assert parse_override("decode.mode=beam") == (["decode", "mode"], "beam")
    assert parse_override("corpus.sizes=[4,2,2]") == (["corpus", "sizes"], [4, 2, 2])
    with pytest.raises(ConfigError):
        parse_override("no-equals")


def test_apply_overrides_creates_nested_objects():
    data = apply_overrides({"tune": {"steps": 5}}, ["tune.steps=9", "decode.max_len=3"])
    assert data == {"tune": {"steps": 9}, "decode": {"max_len": 3}}
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 1}, ["seed.value=2"])


def test_dataclass_types_are_checked():
    assert dataclass_from_dict(TuneConfig, {"lr": 1}).lr == 1.0
    with pytest.raises(ConfigError, match="tune.steps"):
        dataclass_from_dict(TuneConfig, {"steps": "many"}, prefix="tune")
    with pytest.raises(ConfigError):
        dataclass_from_dict(TuneConfig, {"cross_attention": 1})
    with pytest.raises(ConfigError):
        dataclass_from_dict(DecodeConfig, {"temperature": 0})


def test_nested_dataclasses_and_tuples():
    cfg = dataclass_from_dict(CorpusConfig, {"sizes": [3, 1, 1], "inpainting": {"corruption": "delete"}})
    assert cfg.sizes == (3, 1, 1)
    assert cfg.inpainting.corruption == "delete"
    with pytest.raises(ConfigError, match="unknown config key: inpainting.span"):
        dataclass_from_dict(CorpusConfig, {"inpainting": {"span": 3}})


def test_read_config_file_errors(tmp_path):
    with pytest.raises(InputPathError):
        read_config_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        read_config_file(listed)
