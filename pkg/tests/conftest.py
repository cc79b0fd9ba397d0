import numpy as np
import pytest

from tsreprogram.backbone import BackboneConfig
from tsreprogram.patcher import PatchConfig
from tsreprogram.promptgen import PromptStats, render_prompt, tokenize
from tsreprogram.reprogrammer import AttentionConfig
from tsreprogram.trainer import TrainConfig

TINY_CONTEXT = "Solar power at five-minute resolution."


def make_tiny_config(horizon=4, input_len=12, seed=0, use_prompt=True,
                     standardize=False, **over) -> TrainConfig:
    """Smallest forecaster that still exercises every module."""
    patch = PatchConfig(m=4, s_d=2, d_model=6)
    attention = AttentionConfig(heads=2, d_h=4, d_llm=16, d_model=6)
    k = patch.patch_count(input_len)
    worst = PromptStats(min_val=0.8888, max_val=0.9999, median_val=0.9999,
                        trend="downward",
                        top_lags=tuple(range(max(1, input_len - 5), input_len)))
    longest = len(tokenize(render_prompt(TINY_CONTEXT, horizon, input_len, worst)))
    backbone = BackboneConfig(layers=1, heads=2, d_llm=16, d_ff=24,
                              max_seq=longest + k + 16, seed=0)
    defaults = dict(horizon=horizon, input_len=input_len, max_epochs=2,
                    batch_size=4, lr=1e-3, patience=2, seed=seed,
                    standardize=standardize, use_prompt=use_prompt,
                    dataset_context=TINY_CONTEXT, v_prime=8,
                    patch=patch, attention=attention, backbone=backbone)
    defaults.update(over)
    return TrainConfig(**defaults)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return make_tiny_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)
