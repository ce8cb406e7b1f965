"""Flat key=value run configuration.

One file format covers data generation, model shape, training, and
diagnostics.  Lines are ``key=value``, UTF-8, ``#`` starts a comment,
unknown keys are hard errors so typos surface immediately.  Command-line
flags override file values, and every run writes its fully-resolved
configuration next to its outputs so experiments stay diffable.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


def _int(s: str) -> int:
    return int(s, 10)


def _float(s: str) -> float:
    return float(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s: str) -> str:
    return s


def _int_list(s: str):
    if not s.strip():
        return ()
    return tuple(int(p.strip(), 10) for p in s.split(","))


def _float_list_or_none(s: str):
    if not s.strip():
        return None
    return tuple(float(p.strip()) for p in s.split(","))


def _float_or_none(s: str):
    if s.strip().lower() in ("none", ""):
        return None
    return float(s)


@dataclass
class RunConfig:
    """Every tunable of the pipeline, with paper-protocol defaults."""

    # dataset generation
    frame_size: int = 64
    seq_len: int = 20
    modes: tuple = (1, 2, 3)
    proportions: tuple | None = None
    sprite_size: int = 28
    speed_min: float = 2.0
    speed_max: float = 4.0
    count: int = 100
    # model
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
    # training
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 8
    max_iters: int = 1000
    eval_every: int = 0
    seed: int = 0
    clip_norm: float | None = 10.0
    binding: str = "on"
    deterministic: bool = False
    # evaluation and diagnostics
    csi_threshold: float = 128.0
    ssim_window: int = 11
    diag_kind: str = "bus"
    diag_layer: int = -1
    # runtime
    threads: int = 0


_CASTERS = {
    "frame_size": _int, "seq_len": _int, "modes": _int_list,
    "proportions": _float_list_or_none, "sprite_size": _int,
    "speed_min": _float, "speed_max": _float, "count": _int,
    "layers": _int, "channels": _int, "patch": _int, "input_len": _int,
    "pred_len": _int, "image_size": _int, "image_channels": _int,
    "num_slots": _int, "ffn_hidden": _int, "fusion_mode": _str,
    "lr": _float, "beta1": _float, "beta2": _float, "eps": _float,
    "batch": _int, "max_iters": _int, "eval_every": _int, "seed": _int,
    "clip_norm": _float_or_none, "binding": _str, "deterministic": _bool,
    "csi_threshold": _float, "ssim_window": _int, "diag_kind": _str,
    "diag_layer": _int, "threads": _int,
}

assert set(_CASTERS) == {f.name for f in fields(RunConfig)}


def parse_config_file(path) -> dict[str, str]:
    """Read raw key=value pairs; no typing or validation yet."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def apply_pairs(cfg: RunConfig, pairs: dict[str, str], origin: str) -> None:
    """Set raw string pairs onto cfg, casting per key.  Unknown keys raise."""
    for key, value in pairs.items():
        caster = _CASTERS.get(key)
        if caster is None:
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        try:
            setattr(cfg, key, caster(value))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{origin}: bad value for {key!r}: {e}") from None


def resolve(file_path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if file_path is not None:
        apply_pairs(cfg, parse_config_file(file_path), str(file_path))
    if overrides:
        apply_pairs(cfg, overrides, "command line")
    return cfg


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: RunConfig) -> str:
    lines = [f"{f.name}={_render(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def write_resolved(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_config(cfg))


def sprite_spec(cfg: RunConfig):
    from .datagen import SpriteSequenceSpec
    return SpriteSequenceSpec(
        frame_size=cfg.frame_size, seq_len=cfg.seq_len, modes=tuple(cfg.modes),
        proportions=None if cfg.proportions is None else tuple(cfg.proportions),
        sprite_size=cfg.sprite_size, speed_range=(cfg.speed_min, cfg.speed_max),
        seed=cfg.seed)


def model_config(cfg: RunConfig):
    from .network import ModeRNNConfig
    from .trainer import AblationSpec, apply_ablation
    base = ModeRNNConfig(
        layers=cfg.layers, channels=cfg.channels, patch=cfg.patch,
        input_len=cfg.input_len, pred_len=cfg.pred_len, image_size=cfg.image_size,
        image_channels=cfg.image_channels, num_slots=cfg.num_slots,
        ffn_hidden=cfg.ffn_hidden, fusion_mode=cfg.fusion_mode)
    return apply_ablation(base, AblationSpec(binding=cfg.binding))


def train_config(cfg: RunConfig):
    from .trainer import AblationSpec, TrainConfig
    return TrainConfig(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, batch=cfg.batch,
        max_iters=cfg.max_iters, eval_every=cfg.eval_every, seed=cfg.seed,
        clip_norm=cfg.clip_norm, deterministic=cfg.deterministic,
        ablation=AblationSpec(binding=cfg.binding, fusion_mode=cfg.fusion_mode,
                              num_slots=cfg.num_slots))
