"""Shared builders for the test suite: tiny cells, models, datasets."""

from __future__ import annotations

import numpy as np

from modernn.cell import ModeCellConfig, ModeCellParams
from modernn.datagen import Dataset, SpriteSequenceSpec, generate_dataset
from modernn.network import FramePredictor, ModeRNNConfig


def make_cell(seed=0, d_x=3, d_h=5, height=3, width=4, num_slots=2,
              ffn_hidden=4, fusion_mode="adaptive"):
    cfg = ModeCellConfig(d_x=d_x, d_h=d_h, height=height, width=width,
                         num_slots=num_slots, ffn_hidden=ffn_hidden,
                         fusion_mode=fusion_mode)
    params = ModeCellParams(cfg, np.random.default_rng(seed))
    return cfg, params


def param_dict(params):
    """Plain {name: ndarray} view of a parameter set, for the oracles."""
    return {name: t.data for name, t in params.named_parameters()}


def random_states(cfg, batch, rng):
    x = rng.standard_normal((batch, cfg.d_x, cfg.height, cfg.width))
    h = rng.standard_normal((batch, cfg.d_h, cfg.height, cfg.width))
    bus = rng.standard_normal((batch, cfg.channels, cfg.height, cfg.width))
    return x, h, bus


def tiny_model(seed=0, **overrides):
    kw = dict(layers=1, channels=4, patch=2, input_len=2, pred_len=2,
              image_size=8, num_slots=2, ffn_hidden=4)
    kw.update(overrides)
    cfg = ModeRNNConfig(**kw)
    return cfg, FramePredictor(cfg, np.random.default_rng(seed))


def tiny_spec(**overrides):
    kw = dict(frame_size=16, seq_len=4, modes=(1, 2), sprite_size=7,
              speed_range=(1.0, 2.0), seed=0)
    kw.update(overrides)
    return SpriteSequenceSpec(**kw)


def tiny_dataset(count=6, **overrides) -> Dataset:
    return generate_dataset(tiny_spec(**overrides), count)
