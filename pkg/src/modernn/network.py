"""Stacked recurrent frame predictor.

Frames are rearranged space-to-depth into patch tokens, run through L
stacked cells (layer l consumes layer l-1's hidden state), and the top
hidden state is decoded back to a frame by a 1x1 convolution plus
depth-to-space.  Rollout is teacher-forced over the observed frames and
closed-loop afterwards: beyond the observation horizon the model consumes
its own previous output, and ground truth within the horizon-to-predict is
only ever touched by the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .cell import CellStep, ModeCellConfig, ModeCellParams, init_slot_bus, modecell_step
from .engine import Tensor
from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class ModeRNNConfig:
    layers: int = 4
    channels: int = 64
    patch: int = 4
    input_len: int = 10
    pred_len: int = 10
    image_size: int = 64
    image_channels: int = 1
    num_slots: int = 4
    ffn_hidden: int = 16
    fusion_mode: str = "adaptive"

    def __post_init__(self):
        if min(self.layers, self.channels, self.patch, self.input_len,
               self.pred_len, self.image_size, self.image_channels) < 1:
            raise ConfigError("network config extents must be positive")
        if self.image_size % self.patch != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch {self.patch}")
        for cfg in self.cell_configs():
            cfg  # construction alone validates slot divisibility

    @property
    def encoded_channels(self) -> int:
        return self.image_channels * self.patch * self.patch

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def seq_len(self) -> int:
        return self.input_len + self.pred_len

    def cell_configs(self) -> list[ModeCellConfig]:
        configs = []
        for layer in range(self.layers):
            d_x = self.encoded_channels if layer == 0 else self.channels
            configs.append(ModeCellConfig(
                d_x=d_x, d_h=self.channels, height=self.grid, width=self.grid,
                num_slots=self.num_slots, ffn_hidden=self.ffn_hidden,
                fusion_mode=self.fusion_mode))
        return configs


class FramePredictor:
    """L stacked cells plus the 1x1 decoder convolution."""

    def __init__(self, config: ModeRNNConfig, rng: np.random.Generator):
        self.config = config
        self.cells = [ModeCellParams(cfg, rng) for cfg in config.cell_configs()]
        dec_out = config.encoded_channels
        bound = 1.0 / np.sqrt(config.channels)
        self.decoder_k = E.parameter(rng.uniform(-bound, bound, (dec_out, config.channels, 1, 1)))
        self.decoder_b = E.parameter(np.zeros(dec_out))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, cell in enumerate(self.cells):
            out.extend((f"cell{i}.{name}", t) for name, t in cell.named_parameters())
        out.append(("decoder.k", self.decoder_k))
        out.append(("decoder.b", self.decoder_b))
        return out

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.zero_grad()

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())


def encode_frame(frame: Tensor, patch: int) -> Tensor:
    """Lossless space-to-depth rearrangement of [B,c,H,W] into patch tokens."""
    return E.space_to_depth(frame, patch)


def decode_frame(hidden: Tensor, model: FramePredictor, clamp: bool = False) -> Tensor:
    """1x1 conv + depth-to-space back to image resolution.

    ``clamp`` snaps the result into [0,1] off the tape; evaluation wants
    that, training does not.
    """
    frame = E.depth_to_space(E.conv2d(hidden, model.decoder_k, model.decoder_b),
                             model.config.patch)
    if clamp:
        return E.constant(np.clip(frame.data, 0.0, 1.0))
    return frame


@dataclass
class SequenceResult:
    predictions: np.ndarray          # [B, pred_len, c, H, W], raw decoder output
    loss: Tensor                     # scalar, mean squared error over predicted frames
    steps: list[list[CellStep]] = field(default_factory=list)  # [t][layer] when collected


def forward_sequence(model: FramePredictor, seq: np.ndarray,
                     rng: np.random.Generator | None, deterministic: bool,
                     collect_steps: bool = False) -> SequenceResult:
    """Run one batch of sequences through the rollout and the L2 loss.

    ``seq`` is [B, T, c, H, W] with values in [0,1] and T = input_len +
    pred_len.  States are initialized once per sequence; the loss averages
    over batch, predicted frames and pixels.
    """
    cfg = model.config
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 5 or seq.shape[2:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
        raise ShapeError(f"sequence batch shape {seq.shape} does not match config")
    if seq.shape[1] != cfg.seq_len:
        raise ContractError(
            f"sequence length {seq.shape[1]} != input_len + pred_len = {cfg.seq_len}")

    batch = seq.shape[0]
    hidden = [E.constant(np.zeros((batch, cfg.channels, cfg.grid, cfg.grid)))
              for _ in range(cfg.layers)]
    bus = [init_slot_bus(cell, batch, rng, deterministic) for cell in model.cells]

    predictions: list[Tensor] = []
    collected: list[list[CellStep]] = []
    prev_pred: Tensor | None = None
    for t in range(cfg.seq_len - 1):
        if t < cfg.input_len:
            frame = E.constant(seq[:, t])
        else:
            frame = prev_pred
        x = encode_frame(frame, cfg.patch)
        layer_steps = []
        for layer in range(cfg.layers):
            step = modecell_step(model.cells[layer], x, hidden[layer], bus[layer])
            hidden[layer], bus[layer] = step.h_next, step.bus_next
            x = step.h_next
            layer_steps.append(step)
        if collect_steps:
            collected.append(layer_steps)
        prev_pred = decode_frame(hidden[-1], model)
        if t + 1 >= cfg.input_len:
            predictions.append(prev_pred)

    loss = None
    for offset, pred in enumerate(predictions):
        target = E.constant(seq[:, cfg.input_len + offset])
        diff = E.sub(pred, target)
        frame_loss = E.mean_all(E.mul_elementwise(diff, diff))
        loss = frame_loss if loss is None else E.add(loss, frame_loss)
    loss = E.scale(loss, 1.0 / cfg.pred_len)

    stacked = np.stack([p.data for p in predictions], axis=1)
    return SequenceResult(predictions=stacked, loss=loss, steps=collected)
