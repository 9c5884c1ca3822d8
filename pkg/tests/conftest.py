from __future__ import annotations

import pytest

from unitprompt.backbone import BackboneConfig, init_backbone


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="slow; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_cfg() -> BackboneConfig:
    return BackboneConfig(
        d_model=16, n_heads=2, n_enc_layers=2, n_dec_layers=2, d_ff=32, vocab_size=12, max_positions=64
    )


@pytest.fixture
def tiny_model(tiny_cfg):
    return init_backbone(tiny_cfg, seed=0)


@pytest.fixture
def frozen_model(tiny_cfg):
    return init_backbone(tiny_cfg, seed=0).freeze()
