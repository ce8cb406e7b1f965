"""The slot-based recurrent cell.

One step runs three stages over the cell's long-term memory, the slot bus:

1. Slot binding.  The previous bus is projected to queries, the concatenated
   input/hidden state ``i_t = [x, h_prev]`` to keys and values, each through
   a stack of two depthwise-separable 3x3 convolutions.  Multi-head attention
   over the H*W spatial tokens (one head per slot, head width (d_x+d_h)/N)
   produces N slot features, which then pass through per-slot conv-relu-conv
   networks with independent parameters.

2. Adaptive slot fusion.  Global average pooling compresses ``i_t`` to a
   vector, a shared reduction layer plus per-gate per-slot linear layers turn
   it into channel-wise importance weights, and the slots are recombined as a
   sigmoid-gated residual on ``i_t`` plus sigmoid(weight * i_t)-gated conv
   projections of each slot.  Four independent fusion paths feed the four
   gates.  The ``equal`` fusion mode replaces the learned slot gates with a
   constant 0.5, which is the no-adaptive-fusion ablation arm.

3. Gated bus transition.  LSTM-style gates computed from the fused features
   and ``i_t`` update the bus, and the output gate reads the hidden portion
   of the new bus out through a tanh.

The bus starts each sequence from a learnable per-channel Gaussian, sampled
by reparameterization during training and collapsed to its mean when
deterministic behavior is requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import ConfigError, ContractError, ShapeError

GATES = ("i", "f", "o", "g")
FUSION_MODES = ("adaptive", "equal")


@dataclass(frozen=True)
class ModeCellConfig:
    d_x: int
    d_h: int
    height: int
    width: int
    num_slots: int = 4
    ffn_hidden: int = 16
    fusion_mode: str = "adaptive"

    def __post_init__(self):
        if min(self.d_x, self.d_h, self.height, self.width, self.num_slots, self.ffn_hidden) < 1:
            raise ConfigError("cell config extents must be positive")
        if self.channels % self.num_slots != 0:
            raise ConfigError(
                f"d_x + d_h = {self.channels} is not divisible by num_slots = {self.num_slots}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")

    @property
    def channels(self) -> int:
        return self.d_x + self.d_h

    @property
    def head_dim(self) -> int:
        return self.channels // self.num_slots


@dataclass
class CellStep:
    """Everything one cell step produces, including diagnostic intermediates."""
    h_next: Tensor
    bus_next: Tensor
    slots: list[Tensor]
    omega: list[list[Tensor]] | None   # [gate][slot] -> [B, channels], None in equal mode
    attn: list[Tensor]                 # per head, [B, HW, HW]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ModeCellParams:
    """All learnable tensors of one cell, registered under stable names."""

    def __init__(self, config: ModeCellConfig, rng: np.random.Generator):
        self.config = config
        self._params: dict[str, Tensor] = {}
        c, d, n = config.channels, config.head_dim, config.num_slots

        def reg(name, value):
            t = E.parameter(value)
            self._params[name] = t
            return t

        def ds_stack(prefix):
            # two depthwise-separable 3x3 convolutions, no bias
            stack = []
            for i in range(2):
                dw = reg(f"{prefix}.{i}.dw", _uniform(rng, (c, 1, 3, 3), 9))
                pw = reg(f"{prefix}.{i}.pw", _uniform(rng, (c, c, 1, 1), c))
                stack.append((dw, pw))
            return stack

        def conv(name, cout, cin, k=3, bias_init=0.0):
            kern = reg(f"{name}.k", _uniform(rng, (cout, cin, k, k), cin * k * k))
            bias = reg(f"{name}.b", np.full(cout, bias_init, dtype=np.float64))
            return kern, bias

        self.wq = ds_stack("wq")
        self.wk = ds_stack("wk")
        self.wv = ds_stack("wv")

        self.ffn_bind = [
            (conv(f"bind.{i}.c1", d, d), conv(f"bind.{i}.c2", d, d))
            for i in range(n)
        ]

        self.fuse_reduce_w = reg("fuse.reduce.w", _uniform(rng, (config.ffn_hidden, c), c))
        self.fuse_reduce_b = reg("fuse.reduce.b", np.zeros(config.ffn_hidden))
        self.fuse_w = [
            [reg(f"fuse.{g}.{i}.w", _uniform(rng, (c, config.ffn_hidden), config.ffn_hidden))
             for i in range(n)]
            for g in GATES
        ]
        self.fuse_b = [
            [reg(f"fuse.{g}.{i}.b", np.zeros(c)) for i in range(n)]
            for g in GATES
        ]

        # w_fuse[gate][0] projects the residual path, [gate][1..N] the slots
        self.w_fuse = [
            [conv(f"wfuse.{g}.0", c, c)] + [conv(f"wfuse.{g}.{i + 1}", c, d) for i in range(n)]
            for g in GATES
        ]

        # gate convolutions; the output gate maps to d_h, the rest stay at c
        self.gate_from_fused = []
        self.gate_from_input = []
        for g in GATES:
            cout = config.d_h if g == "o" else c
            bias_init = 1.0 if g == "f" else 0.0
            self.gate_from_fused.append(conv(f"gate.{g}.f", cout, c, bias_init=bias_init))
            self.gate_from_input.append(conv(f"gate.{g}.i", cout, c))

        self.bus_mean = reg("bus.mean", np.zeros(c))
        self.bus_logvar = reg("bus.logvar", np.full(c, -6.0))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()


def _check_state(config: ModeCellConfig, x: Tensor, h_prev: Tensor, bus: Tensor) -> None:
    b = x.shape[0]
    hw = (config.height, config.width)
    if x.shape != (b, config.d_x) + hw:
        raise ShapeError(f"input state shape {x.shape} does not match config")
    if h_prev.shape != (b, config.d_h) + hw:
        raise ShapeError(f"hidden state shape {h_prev.shape} does not match config")
    if bus.shape != (b, config.channels) + hw:
        raise ShapeError(f"slot bus shape {bus.shape} does not match config")


def init_slot_bus(params: ModeCellParams, batch: int,
                  rng: np.random.Generator | None, deterministic: bool) -> Tensor:
    """Draw the initial bus from the learnable per-channel Gaussian.

    Deterministic mode returns the mean; otherwise the reparameterized sample
    mean + exp(logvar/2) * eps keeps the distribution parameters on the tape.
    """
    cfg = params.config
    mean = E.expand_channel_vector(params.bus_mean, batch, cfg.height, cfg.width)
    if deterministic:
        return mean
    if rng is None:
        raise ContractError("stochastic bus init needs an rng")
    eps = rng.standard_normal((batch, cfg.channels, cfg.height, cfg.width))
    std = E.expand_channel_vector(
        E.exp_op(E.scale(params.bus_logvar, 0.5)), batch, cfg.height, cfg.width)
    return E.add(mean, E.mul_elementwise(std, E.constant(eps)))


def _tokens(x: Tensor, head_dim: int, hw: int) -> Tensor:
    # [B, d, H, W] -> [B, HW, d]
    return E.transpose_last2(E.reshape(x, (x.shape[0], head_dim, hw)))


def _ds_project(x: Tensor, stack) -> Tensor:
    for dw, pw in stack:
        x = E.depthwise_separable_conv2d(x, dw, pw)
    return x


def bind_slots(params: ModeCellParams, bus: Tensor, x: Tensor,
               h_prev: Tensor) -> tuple[list[Tensor], Tensor, list[Tensor]]:
    """Stage 1: attention over spatial tokens, then per-slot conv FFNs.

    Returns (slots, i_t, attention maps).  Head n attends with the bus
    projection's n-th channel block as queries against keys/values computed
    from i_t; rows of every attention map sum to one.
    """
    cfg = params.config
    _check_state(cfg, x, h_prev, bus)
    n, d, hw = cfg.num_slots, cfg.head_dim, cfg.height * cfg.width

    i_t = E.concat_channels([x, h_prev])
    q_heads = E.split_channels(_ds_project(bus, params.wq), n)
    k_heads = E.split_channels(_ds_project(i_t, params.wk), n)
    v_heads = E.split_channels(_ds_project(i_t, params.wv), n)

    slots, attns = [], []
    for head in range(n):
        q = _tokens(q_heads[head], d, hw)
        k = _tokens(k_heads[head], d, hw)
        v = _tokens(v_heads[head], d, hw)
        attn = E.softmax_lastdim(E.scale(E.matmul(q, E.transpose_last2(k)), 1.0 / np.sqrt(d)))
        mixed = E.reshape(E.transpose_last2(E.matmul(attn, v)),
                          (x.shape[0], d, cfg.height, cfg.width))
        (k1, b1), (k2, b2) = params.ffn_bind[head]
        slots.append(E.conv2d(E.relu(E.conv2d(mixed, k1, b1)), k2, b2))
        attns.append(attn)
    return slots, i_t, attns


def compute_importance_weights(params: ModeCellParams, i_t: Tensor) -> list[list[Tensor]]:
    """Stage 2a: pooled context -> shared reduction -> per-gate per-slot weights."""
    reduced = E.relu(E.linear(E.global_avg_pool(i_t), params.fuse_reduce_w, params.fuse_reduce_b))
    return [
        [E.linear(reduced, params.fuse_w[g][i], params.fuse_b[g][i])
         for i in range(params.config.num_slots)]
        for g in range(len(GATES))
    ]


def adaptive_fuse(params: ModeCellParams, gate: int, i_t: Tensor,
                  slots: list[Tensor], omega: list[list[Tensor]] | None) -> Tensor:
    """Stage 2b: gated residual on i_t plus importance-gated slot projections."""
    if not 0 <= gate < len(GATES):
        raise ShapeError(f"gate index {gate} out of range")
    k0, b0 = params.w_fuse[gate][0]
    fused = E.mul_elementwise(E.sigmoid(i_t), E.conv2d(i_t, k0, b0))
    for n, slot in enumerate(slots):
        kn, bn = params.w_fuse[gate][n + 1]
        projected = E.conv2d(slot, kn, bn)
        if params.config.fusion_mode == "equal":
            term = E.scale(projected, 0.5)
        else:
            slot_gate = E.sigmoid(E.mul_channelwise(i_t, omega[gate][n]))
            term = E.mul_elementwise(slot_gate, projected)
        fused = E.add(fused, term)
    return fused


def gate_and_transition(params: ModeCellParams, fused: list[Tensor], i_t: Tensor,
                        bus_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Stage 3: LSTM-style update of the bus, tanh readout of the hidden part."""
    if len(fused) != len(GATES):
        raise ShapeError(f"expected {len(GATES)} fused tensors, got {len(fused)}")
    cfg = params.config
    pre = []
    for g in range(len(GATES)):
        kf, bf = params.gate_from_fused[g]
        ki, bi = params.gate_from_input[g]
        pre.append(E.add(E.conv2d(fused[g], kf, bf), E.conv2d(i_t, ki, bi)))
    gate_i = E.sigmoid(pre[0])
    gate_f = E.sigmoid(pre[1])
    gate_o = E.sigmoid(pre[2])
    gate_g = E.tanh_op(pre[3])
    bus_next = E.add(E.mul_elementwise(gate_f, bus_prev), E.mul_elementwise(gate_i, gate_g))
    hidden_part = E.slice_channels(bus_next, cfg.d_x, cfg.channels)
    h_next = E.mul_elementwise(gate_o, E.tanh_op(hidden_part))
    return bus_next, h_next


def modecell_step(params: ModeCellParams, x: Tensor, h_prev: Tensor,
                  bus_prev: Tensor) -> CellStep:
    """One full recurrence step: bind, fuse per gate, transition."""
    slots, i_t, attns = bind_slots(params, bus_prev, x, h_prev)
    if params.config.fusion_mode == "equal":
        omega = None
    else:
        omega = compute_importance_weights(params, i_t)
    fused = [adaptive_fuse(params, g, i_t, slots, omega) for g in range(len(GATES))]
    bus_next, h_next = gate_and_transition(params, fused, i_t, bus_prev)
    return CellStep(h_next=h_next, bus_next=bus_next, slots=slots, omega=omega, attn=attns)
