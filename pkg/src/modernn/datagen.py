"""Bouncing-sprite sequence generator and dataset file I/O.

Sequences emulate the mixed Moving MNIST regime: each clip contains a
mode-dependent number of sprites flying with constant velocity, bouncing
elastically off the frame walls, composited by per-pixel max so overlaps read
as occlusion.  Sprites are procedurally rendered glyphs (a fixed pool of
seven-segment digit shapes) rather than real MNIST digits, which keeps
generation self-contained; the mode structure, sprite count per clip, is what
the rest of the pipeline cares about.

Generation is a pure function of (spec, seed).  Every sequence draws from its
own seed derived from the dataset seed and sequence index, so generating in
parallel or resuming mid-file yields byte-identical output.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, FormatError

MAGIC = b"MSEQ"
VERSION = 1
_HEADER = struct.Struct("<4sIIHHHB")  # magic, version, count, T, H, W, channels

GLYPH_COUNT = 10
_GLYPH_GRID = 12

# seven-segment strokes on the 12x12 glyph grid, as (row slice, col slice)
_SEGMENTS = (
    (slice(0, 2), slice(1, 11)),    # top
    (slice(0, 6), slice(0, 2)),     # upper left
    (slice(0, 6), slice(10, 12)),   # upper right
    (slice(5, 7), slice(1, 11)),    # middle
    (slice(6, 12), slice(0, 2)),    # lower left
    (slice(6, 12), slice(10, 12)),  # lower right
    (slice(10, 12), slice(1, 11)),  # bottom
)
_DIGIT_SEGMENTS = (
    (0, 1, 2, 4, 5, 6),
    (2, 5),
    (0, 2, 3, 4, 6),
    (0, 2, 3, 5, 6),
    (1, 2, 3, 5),
    (0, 1, 3, 5, 6),
    (0, 1, 3, 4, 5, 6),
    (0, 2, 5),
    (0, 1, 2, 3, 4, 5, 6),
    (0, 1, 2, 3, 5, 6),
)


def _make_glyphs() -> np.ndarray:
    glyphs = np.zeros((GLYPH_COUNT, _GLYPH_GRID, _GLYPH_GRID), dtype=np.uint8)
    for digit, segs in enumerate(_DIGIT_SEGMENTS):
        for s in segs:
            rows, cols = _SEGMENTS[s]
            glyphs[digit, rows, cols] = 1
    return glyphs


_GLYPHS = _make_glyphs()


def render_glyph(glyph_id: int, size: int) -> np.ndarray:
    """Rasterize glyph ``glyph_id`` at ``size``x``size``, values 0 or 255."""
    if not 0 <= glyph_id < GLYPH_COUNT:
        raise ContractError(f"glyph_id {glyph_id} outside 0..{GLYPH_COUNT - 1}")
    idx = (np.arange(size) * _GLYPH_GRID) // size
    return _GLYPHS[glyph_id][np.ix_(idx, idx)] * np.uint8(255)


@dataclass(frozen=True)
class SpriteSequenceSpec:
    """Everything that determines a dataset, including its seed.

    ``modes`` lists the sprite counts in the mixture; ``proportions`` gives
    their sampling weights (uniform when None).
    """

    frame_size: int = 64
    seq_len: int = 20
    modes: tuple[int, ...] = (1, 2, 3)
    proportions: tuple[float, ...] | None = None
    sprite_size: int = 28
    speed_range: tuple[float, float] = (2.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        if self.frame_size < 2:
            raise ConfigError(f"frame_size must be >= 2, got {self.frame_size}")
        if not 0 < self.sprite_size < self.frame_size:
            raise ConfigError(
                f"sprite_size must be in 1..{self.frame_size - 1}, got {self.sprite_size}")
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be >= 1, got {self.seq_len}")
        if not self.modes:
            raise ConfigError("modes must be nonempty")
        for m in self.modes:
            if m < 1:
                raise ConfigError(f"every mode must be >= 1 sprite, got {m}")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ConfigError(f"speed_range must satisfy 0 < min <= max, got {self.speed_range}")
        if self.proportions is not None:
            if len(self.proportions) != len(self.modes):
                raise ConfigError(
                    f"proportions has {len(self.proportions)} entries for {len(self.modes)} modes")
            if min(self.proportions) < 0:
                raise ConfigError("proportions must be nonnegative")
            if abs(sum(self.proportions) - 1.0) > 1e-9:
                raise ConfigError(f"proportions must sum to 1, got {sum(self.proportions)}")

    def mixture(self) -> np.ndarray:
        if self.proportions is None:
            return np.full(len(self.modes), 1.0 / len(self.modes))
        return np.asarray(self.proportions, dtype=np.float64)


def step_sprite(pos, vel, bounds):
    """Advance one time step with elastic reflection off the walls.

    ``pos`` is the sprite's top-left corner, valid per axis in [0, bound].
    Reflection is mirror arithmetic on the doubled interval, so arbitrarily
    large steps fold back correctly and speed magnitude is preserved.
    """
    new_pos = []
    new_vel = []
    for p, v, hi in zip(pos, vel, bounds):
        if not 0.0 <= p <= hi:
            raise ContractError(f"position {p} outside [0, {hi}]")
        q = (p + v) % (2.0 * hi)
        if q > hi:
            q = 2.0 * hi - q
            v = -v
        new_pos.append(q)
        new_vel.append(v)
    return tuple(new_pos), tuple(new_vel)


def generate_sequence(spec: SpriteSequenceSpec, mode: int, rng: np.random.Generator):
    """Generate one clip with ``mode`` sprites.

    Returns (frames, label): frames uint8 [T, 1, H, W], label = sprite count.
    Each sprite gets an independent random glyph, start position, and
    velocity (uniform speed in spec.speed_range, uniform direction).
    """
    if mode not in spec.modes:
        raise ContractError(f"mode {mode} not in spec.modes {spec.modes}")
    size = spec.sprite_size
    hi = float(spec.frame_size - size)
    bounds = (hi, hi)

    sprites = []
    for _ in range(mode):
        glyph = render_glyph(int(rng.integers(0, GLYPH_COUNT)), size)
        pos = (rng.uniform(0.0, hi), rng.uniform(0.0, hi))
        speed = rng.uniform(spec.speed_range[0], spec.speed_range[1])
        ang = rng.uniform(0.0, 2.0 * np.pi)
        vel = (speed * np.sin(ang), speed * np.cos(ang))
        sprites.append([glyph, pos, vel])

    frames = np.zeros((spec.seq_len, 1, spec.frame_size, spec.frame_size), dtype=np.uint8)
    for t in range(spec.seq_len):
        for sp in sprites:
            glyph, pos, vel = sp
            r = min(int(round(pos[0])), int(hi))
            c = min(int(round(pos[1])), int(hi))
            region = frames[t, 0, r:r + size, c:c + size]
            np.maximum(region, glyph, out=region)
            sp[1], sp[2] = step_sprite(pos, vel, bounds)
    return frames, mode


@dataclass
class Dataset:
    """In-memory dataset: frames uint8 [count, T, C, H, W], labels = sprite counts."""

    frames: np.ndarray
    labels: np.ndarray

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def seq_len(self) -> int:
        return self.frames.shape[1]

    def __post_init__(self):
        if self.frames.ndim != 5:
            raise ContractError(f"frames must be 5-d, got shape {self.frames.shape}")
        if self.labels.shape != (self.frames.shape[0],):
            raise ContractError(
                f"labels shape {self.labels.shape} does not match {self.frames.shape[0]} sequences")


def _label_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def _sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def _draw_mode_indices(spec: SpriteSequenceSpec, count: int) -> np.ndarray:
    return _label_rng(spec.seed).choice(len(spec.modes), size=count, p=spec.mixture())


def generate_dataset(spec: SpriteSequenceSpec, count: int) -> Dataset:
    """Generate ``count`` sequences with modes drawn from the spec's mixture."""
    if count < 0:
        raise ContractError(f"count must be >= 0, got {count}")
    idx = _draw_mode_indices(spec, count)
    frames = np.zeros(
        (count, spec.seq_len, 1, spec.frame_size, spec.frame_size), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.int64)
    for i in range(count):
        frames[i], labels[i] = generate_sequence(
            spec, spec.modes[idx[i]], _sequence_rng(spec.seed, i))
    return Dataset(frames=frames, labels=labels)


def save_dataset(dataset: Dataset, path) -> None:
    count, t, c, h, w = dataset.frames.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, count, t, h, w, c))
        for i in range(count):
            f.write(bytes([int(dataset.labels[i])]))
            f.write(dataset.frames[i].tobytes())


def write_dataset(path, spec: SpriteSequenceSpec, count: int) -> None:
    """Generate and write a dataset without holding all frames in memory."""
    if count < 0:
        raise ContractError(f"count must be >= 0, got {count}")
    idx = _draw_mode_indices(spec, count)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, count, spec.seq_len,
                             spec.frame_size, spec.frame_size, 1))
        for i in range(count):
            frames, label = generate_sequence(
                spec, spec.modes[idx[i]], _sequence_rng(spec.seed, i))
            f.write(bytes([label]))
            f.write(frames.tobytes())


def _parse_header(raw: bytes, path) -> tuple[int, int, int, int, int]:
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"{path}: truncated header at byte offset {len(raw)}, "
            f"need {_HEADER.size} bytes")
    magic, version, count, t, h, w, c = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    if min(t, h, w, c) == 0:
        raise FormatError(
            f"{path}: zero dimension in header (T={t} H={h} W={w} C={c}) "
            f"at byte offset 8")
    return count, t, h, w, c


def iter_dataset(path) -> Iterator[tuple[np.ndarray, int]]:
    """Stream (frames uint8 [T, C, H, W], label) pairs from a dataset file.

    Raises FormatError with the byte offset of the problem on bad magic,
    unsupported version, truncation, or trailing garbage.
    """
    with open(path, "rb") as f:
        count, t, h, w, c = _parse_header(f.read(_HEADER.size), path)
        seq_bytes = 1 + t * h * w * c
        for i in range(count):
            offset = _HEADER.size + i * seq_bytes
            raw = f.read(seq_bytes)
            if len(raw) < seq_bytes:
                raise FormatError(
                    f"{path}: truncated sequence {i} at byte offset "
                    f"{offset + len(raw)}, need {seq_bytes - len(raw)} more bytes")
            frames = np.frombuffer(raw, dtype=np.uint8, offset=1)
            yield frames.reshape(t, c, h, w).copy(), raw[0]
        extra = f.read(1)
        if extra:
            raise FormatError(
                f"{path}: trailing data at byte offset {_HEADER.size + count * seq_bytes}")


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        count, t, h, w, c = _parse_header(f.read(_HEADER.size), path)
        f.seek(0, 2)
        actual = f.tell()
    expected = _HEADER.size + count * (1 + t * h * w * c)
    if actual != expected:
        # walk the file so the error carries the exact offset
        for _ in iter_dataset(path):
            pass
        raise FormatError(f"{path}: expected {expected} bytes, found {actual}")
    frames = np.zeros((count, t, c, h, w), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.int64)
    for i, (seq, label) in enumerate(iter_dataset(path)):
        frames[i] = seq
        labels[i] = label
    return Dataset(frames=frames, labels=labels)
