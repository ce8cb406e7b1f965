"""Training loop, evaluation, checkpointing, and the ablation harness.

Reproducibility model: every random draw the trainer makes is a pure
function of (seed, iteration).  Batch order comes from a per-epoch
permutation derived from the seed and epoch index; slot-bus sampling noise
comes from a per-iteration stream.  A checkpoint therefore only needs the
seed and the iteration counter to resume bitwise-identically, and two arms
of an ablation that share a seed see exactly the same data order.
"""

from __future__ import annotations

import dataclasses
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .datagen import Dataset
from .errors import ConfigError, ContractError, FormatError, ShapeError, TrainingDiverged
from .metrics import MetricReport, compute_report
from .network import FramePredictor, ModeRNNConfig, forward_sequence

CKPT_MAGIC = b"MCKP"
CKPT_VERSION = 1

FUSION_MODES = ("adaptive", "equal")
BINDING_MODES = ("on", "n1")


@dataclass(frozen=True)
class AblationSpec:
    """Overrides applied to a base model config to build one ablation arm.

    binding="n1" collapses slot binding to a single slot regardless of
    num_slots, the N=1 baseline row of the slot-count sweep.
    """

    num_slots: int | None = None
    fusion_mode: str | None = None
    binding: str = "on"

    def __post_init__(self):
        if self.fusion_mode is not None and self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.binding not in BINDING_MODES:
            raise ConfigError(f"binding must be one of {BINDING_MODES}")


def apply_ablation(cfg: ModeRNNConfig, ablation: AblationSpec) -> ModeRNNConfig:
    changes = {}
    if ablation.num_slots is not None:
        changes["num_slots"] = ablation.num_slots
    if ablation.fusion_mode is not None:
        changes["fusion_mode"] = ablation.fusion_mode
    if ablation.binding == "n1":
        changes["num_slots"] = 1
    return dataclasses.replace(cfg, **changes) if changes else cfg


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 8
    max_iters: int = 1000
    eval_every: int = 0
    seed: int = 0
    clip_norm: float | None = 10.0
    deterministic: bool = False
    ablation: AblationSpec = field(default_factory=AblationSpec)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"betas must be in (0,1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0 or None, got {self.clip_norm}")


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_adam(model: FramePredictor) -> AdamState:
    m = {name: np.zeros_like(t.data) for name, t in model.named_parameters()}
    v = {name: np.zeros_like(t.data) for name, t in model.named_parameters()}
    return AdamState(step=0, m=m, v=v)


def adam_step(named_params, state: AdamState, cfg: TrainConfig) -> None:
    """Standard bias-corrected Adam update, in place.  Missing grads count as zero."""
    state.step += 1
    t = state.step
    b1c = 1.0 - cfg.beta1 ** t
    b2c = 1.0 - cfg.beta2 ** t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.data.shape:
            raise ShapeError(
                f"optimizer state for {name} has shape {m.shape}, parameter {p.data.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)


def clip_gradients(named_params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    grads = []
    for _, p in named_params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
            grads.append(p.grad)
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        s = max_norm / norm
        for g in grads:
            g *= s
    return norm


def _epoch_perm(seed: int, epoch: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, epoch)))
    return rng.permutation(count)


def _bus_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, iteration)))


def batch_indices(seed: int, iteration: int, count: int, batch: int) -> np.ndarray:
    """Deterministic mini-batch for a given iteration.

    Epoch-shuffled without replacement; the final batch of an epoch may be
    short when batch does not divide count.
    """
    per_epoch = (count + batch - 1) // batch
    epoch, slot = divmod(iteration, per_epoch)
    perm = _epoch_perm(seed, epoch, count)
    return perm[slot * batch:(slot + 1) * batch]


@dataclass
class TrainResult:
    loss_trace: list[float]
    iterations: int
    checkpoint_paths: list[str]


def _dump_divergence(out_dir, model, iteration: int, trace: list[float]) -> str | None:
    if out_dir is None:
        return None
    path = os.path.join(out_dir, "diverged.txt")
    tail = trace[-20:]
    with open(path, "w") as f:
        f.write(f"iteration={iteration}\n")
        for i, v in enumerate(tail):
            f.write(f"loss[-{len(tail) - i}]={v!r}\n")
        for name, p in model.named_parameters():
            gnorm = float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0
            f.write(f"param.{name}: |p|={float(np.linalg.norm(p.data))!r} |g|={gnorm!r}\n")
    return path


def train(model: FramePredictor, dataset: Dataset, cfg: TrainConfig,
          out_dir=None, start_iteration: int = 0, adam: AdamState | None = None,
          log=None) -> TrainResult:
    """Run Adam on the L2 rollout loss from start_iteration to max_iters.

    Writes a checkpoint every eval_every iterations (and at the end) when
    out_dir is given.  Raises TrainingDiverged on the first non-finite loss,
    after dumping diagnostics next to the checkpoints.
    """
    if dataset.count == 0:
        raise ContractError("dataset is empty")
    if dataset.seq_len != model.config.seq_len:
        raise ContractError(
            f"dataset seq_len {dataset.seq_len} != model input_len + pred_len "
            f"= {model.config.seq_len}")
    if adam is None:
        adam = init_adam(model)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    params = model.named_parameters()
    trace: list[float] = []
    paths: list[str] = []

    def save(iteration: int, name: str) -> None:
        if out_dir is None:
            return
        path = os.path.join(out_dir, name)
        save_checkpoint(path, model, adam, iteration, cfg)
        paths.append(path)

    for it in range(start_iteration, cfg.max_iters):
        idx = batch_indices(cfg.seed, it, dataset.count, cfg.batch)
        seq = dataset.frames[idx].astype(np.float64) / 255.0
        result = forward_sequence(
            model, seq,
            rng=None if cfg.deterministic else _bus_rng(cfg.seed, it),
            deterministic=cfg.deterministic)
        loss = float(result.loss.data)
        trace.append(loss)
        if not math.isfinite(loss):
            dump = _dump_divergence(out_dir, model, it, trace)
            where = f", diagnostics in {dump}" if dump else ""
            raise TrainingDiverged(f"non-finite loss {loss} at iteration {it}{where}")
        E.backward(result.loss)
        if cfg.clip_norm is not None:
            clip_gradients(params, cfg.clip_norm)
        adam_step(params, adam, cfg)
        model.zero_grad()
        if log is not None:
            log(it, loss)
        if cfg.eval_every and (it + 1) % cfg.eval_every == 0 and (it + 1) < cfg.max_iters:
            save(it + 1, f"ckpt_{it + 1:06d}.mckp")
    save(cfg.max_iters, "ckpt_final.mckp")
    return TrainResult(loss_trace=trace, iterations=cfg.max_iters, checkpoint_paths=paths)


def predict_dataset(model: FramePredictor, dataset: Dataset,
                    batch_size: int = 8) -> np.ndarray:
    """Deterministic closed-loop predictions, on the 0..255 scale, clipped."""
    preds = []
    for start in range(0, dataset.count, batch_size):
        seq = dataset.frames[start:start + batch_size].astype(np.float64) / 255.0
        result = forward_sequence(model, seq, rng=None, deterministic=True)
        preds.append(np.clip(result.predictions, 0.0, 1.0) * 255.0)
    return np.concatenate(preds) if preds else np.zeros((0,))


def evaluate(model: FramePredictor, dataset: Dataset, batch_size: int = 8,
             csi_threshold: float = 128.0, ssim_window: int = 11):
    """Per-mode and overall MetricReports from deterministic rollouts.

    Returns (overall, {mode_label: report}).
    """
    if dataset.count == 0:
        raise ContractError("dataset is empty")
    pred = predict_dataset(model, dataset, batch_size)
    target = dataset.frames[:, model.config.input_len:].astype(np.float64)
    overall = compute_report(pred, target, csi_threshold=csi_threshold,
                             window=ssim_window)
    by_mode: dict[int, MetricReport] = {}
    for mode in sorted(set(dataset.labels.tolist())):
        sel = dataset.labels == mode
        by_mode[int(mode)] = compute_report(pred[sel], target[sel],
                                            csi_threshold=csi_threshold,
                                            window=ssim_window)
    return overall, by_mode


# checkpoint format: little-endian, fixed field order, so identical state
# always produces identical bytes

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_HDR = struct.Struct("<4sIQQ")  # magic, version, iteration, seed


@dataclass
class Checkpoint:
    version: int
    iteration: int
    seed: int
    config_text: str
    params: dict[str, np.ndarray]
    adam_step: int
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]


def _config_text(model_cfg: ModeRNNConfig, train_cfg: TrainConfig) -> str:
    lines = []
    for prefix, cfg in (("model", model_cfg), ("train", train_cfg)):
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, AblationSpec):
                for af in dataclasses.fields(v):
                    lines.append(f"{prefix}.{f.name}.{af.name}={getattr(v, af.name)!r}")
            else:
                lines.append(f"{prefix}.{f.name}={v!r}")
    return "\n".join(lines) + "\n"


def _write_array(f, arr: np.ndarray) -> None:
    f.write(_U8.pack(arr.ndim))
    for d in arr.shape:
        f.write(_U32.pack(d))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(f, path) -> np.ndarray:
    ndim = _read(f, _U8.size, path)[0]
    shape = tuple(_U32.unpack(_read(f, 4, path))[0] for _ in range(ndim))
    n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    data = _read(f, 8 * n, path)
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def _read(f, n: int, path) -> bytes:
    raw = f.read(n)
    if len(raw) < n:
        raise FormatError(f"{path}: truncated checkpoint at byte offset "
                          f"{f.tell()}, need {n - len(raw)} more bytes")
    return raw


def save_checkpoint(path, model: FramePredictor, adam: AdamState, iteration: int,
                    train_cfg: TrainConfig) -> None:
    named = model.named_parameters()
    text = _config_text(model.config, train_cfg).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HDR.pack(CKPT_MAGIC, CKPT_VERSION, iteration, train_cfg.seed))
        f.write(_U32.pack(len(text)))
        f.write(text)
        f.write(_U32.pack(len(named)))
        for name, p in named:
            nb = name.encode("utf-8")
            f.write(_U16.pack(len(nb)))
            f.write(nb)
            _write_array(f, p.data)
        f.write(_U64.pack(adam.step))
        for name, _ in named:
            _write_array(f, adam.m[name])
            _write_array(f, adam.v[name])


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = _read(f, _HDR.size, path)
        magic, version, iteration, seed = _HDR.unpack(raw)
        if magic != CKPT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
        text_len = _U32.unpack(_read(f, 4, path))[0]
        text = _read(f, text_len, path).decode("utf-8")
        n_params = _U32.unpack(_read(f, 4, path))[0]
        params: dict[str, np.ndarray] = {}
        order = []
        for _ in range(n_params):
            name_len = _U16.unpack(_read(f, 2, path))[0]
            name = _read(f, name_len, path).decode("utf-8")
            params[name] = _read_array(f, path)
            order.append(name)
        step = _U64.unpack(_read(f, 8, path))[0]
        m = {}
        v = {}
        for name in order:
            m[name] = _read_array(f, path)
            v[name] = _read_array(f, path)
        if f.read(1):
            raise FormatError(f"{path}: trailing data at byte offset {f.tell() - 1}")
    return Checkpoint(version=version, iteration=iteration, seed=seed,
                      config_text=text, params=params, adam_step=step,
                      adam_m=m, adam_v=v)


def parse_config_text(text: str) -> dict[str, object]:
    """Invert _config_text: dotted keys to python values."""
    import ast

    out: dict[str, object] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            raise FormatError(f"unparseable checkpoint config line {line!r}") from None
    return out


def model_config_from_checkpoint(ckpt: Checkpoint) -> ModeRNNConfig:
    kv = parse_config_text(ckpt.config_text)
    kwargs = {}
    for f in dataclasses.fields(ModeRNNConfig):
        key = f"model.{f.name}"
        if key not in kv:
            raise FormatError(f"checkpoint config missing {key}")
        kwargs[f.name] = kv[key]
    return ModeRNNConfig(**kwargs)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[FramePredictor, AdamState]:
    cfg = model_config_from_checkpoint(ckpt)
    model = FramePredictor(cfg, np.random.default_rng(0))
    adam = restore_model(model, ckpt)
    return model, adam


def restore_model(model: FramePredictor, ckpt: Checkpoint) -> AdamState:
    """Load checkpoint parameters and optimizer state into a model."""
    named = model.named_parameters()
    names = [n for n, _ in named]
    if set(names) != set(ckpt.params):
        missing = set(names) - set(ckpt.params)
        extra = set(ckpt.params) - set(names)
        raise ContractError(
            f"checkpoint parameters do not match model (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, p in named:
        if p.data.shape != ckpt.params[name].shape:
            raise ContractError(
                f"checkpoint parameter {name} has shape {ckpt.params[name].shape}, "
                f"model expects {p.data.shape}")
        p.data[...] = ckpt.params[name]
    return AdamState(step=ckpt.adam_step,
                     m={k: v.copy() for k, v in ckpt.adam_m.items()},
                     v={k: v.copy() for k, v in ckpt.adam_v.items()})
