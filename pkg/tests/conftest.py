"""Shared fixtures: a tiny N = 2 model, the default toy model and the noise schedule."""

import numpy as np
import pytest

from dit_cache.tools.DiT_Model.Core import DiTConfig, DiTModel
from dit_cache.tools.Router_Trainer.Dataset import SyntheticDataset
from dit_cache.tools.Router_Trainer.Pretrain import PretrainOptions, pretrain_teacher
from dit_cache.tools.Sampler.Core import SamplerConfig, make_schedule

TINY_CONFIG = dict(image_size=4, channels=1, patch_size=2, d_model=8, n_heads=2, depth=1, n_classes=2)


@pytest.fixture(scope="session")
def schedule():
    return make_schedule(1000)


@pytest.fixture
def tiny_model():
    """N = 2 blocks (one attention, one FFN), non-zero output head"""
    return DiTModel.initialize(DiTConfig(**TINY_CONFIG, seed=3), zero_final=False).requires_grad_(False)


@pytest.fixture
def toy_model():
    """Default toy configuration (N = 8) with random, non-zero weights"""
    return DiTModel.initialize(DiTConfig(seed=7), zero_final=False).requires_grad_(False)


@pytest.fixture
def sampler4():
    return SamplerConfig(kind="ddim", T=4, cfg_scale=1.0)


@pytest.fixture
def sampler8():
    return SamplerConfig(kind="ddim", T=8, cfg_scale=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pretrained_teacher(schedule):
    """Toy teacher pretrained with the default options; used by slow acceptance tests"""
    config = DiTConfig(seed=0)
    dataset = SyntheticDataset.for_model(config, seed=0)
    model = pretrain_teacher(config, dataset, schedule, PretrainOptions(), progress=False)
    return model.requires_grad_(False)
