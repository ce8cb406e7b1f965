"""Mode-collapse measurement.

Extracts per-step cell states (slot features, slot bus, importance weights)
as GAP-pooled vectors tagged with the sequence's mode label, and measures how
separable two modes' state populations are with a linear domain probe.  The
separability score is the proxy A-distance d_a = 2(1 - 2 eps), where eps is
the probe's held-out error rate: d_a near 2 means the modes occupy cleanly
separated regions of state space, d_a near 0 means they have collapsed onto
each other.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .engine import Tensor
from .errors import ContractError, FormatError
from .network import FramePredictor, forward_sequence

PROBE_EPOCHS = 500
PROBE_LR = 0.1


@dataclass(frozen=True)
class FeatureRecord:
    """One GAP-pooled state vector from one cell step.

    kind is "slot{n}", "bus", or "omega{n}"; omega vectors concatenate the
    per-gate importance weights for that slot.
    """

    sequence_id: int
    mode_label: int
    layer: int
    time: int
    kind: str
    vector: np.ndarray


@dataclass(frozen=True)
class ADistanceResult:
    raw_epsilon: float
    epsilon: float
    d_a: float


def a_distance_from_error(eps: float) -> float:
    """d_a = 2(1 - 2 eps) with eps symmetrized into [0, 0.5]."""
    if not 0.0 <= eps <= 1.0:
        raise ContractError(f"error rate must be in [0, 1], got {eps}")
    eps = min(eps, 1.0 - eps)
    return 2.0 * (1.0 - 2.0 * eps)


def extract_states(model: FramePredictor, dataset, batch_size: int = 8,
                   scale: float = 255.0) -> list[FeatureRecord]:
    """Run deterministic rollouts over a dataset and pool every cell state.

    Traversal order is fixed: sequences in file order; per sequence, time
    ascending, layer ascending, then slot0..slotN-1, bus, omega0..omegaN-1.
    Record count per sequence = layers x steps x (2N + 1) in adaptive mode
    (omega records are absent in equal mode).
    """
    records: list[FeatureRecord] = []
    count = dataset.count
    for start in range(0, count, batch_size):
        frames = dataset.frames[start:start + batch_size]
        labels = dataset.labels[start:start + batch_size]
        seq = frames.astype(np.float64) / scale
        result = forward_sequence(model, seq, rng=None, deterministic=True,
                                  collect_steps=True)
        for b in range(frames.shape[0]):
            sid = start + b
            label = int(labels[b])
            for t, layer_steps in enumerate(result.steps):
                for layer, step in enumerate(layer_steps):
                    for n, slot in enumerate(step.slots):
                        records.append(FeatureRecord(
                            sid, label, layer, t, f"slot{n}",
                            slot.data[b].mean(axis=(-2, -1)).copy()))
                    records.append(FeatureRecord(
                        sid, label, layer, t, "bus",
                        step.bus_next.data[b].mean(axis=(-2, -1)).copy()))
                    if step.omega is not None:
                        n_slots = len(step.omega[0])
                        for n in range(n_slots):
                            vec = np.concatenate(
                                [gate[n].data[b] for gate in step.omega])
                            records.append(FeatureRecord(
                                sid, label, layer, t, f"omega{n}", vec))
    return records


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * np.tanh(0.5 * z) + 0.5


def a_distance(features_a: np.ndarray, features_b: np.ndarray, split: float = 0.5,
               rng: np.random.Generator | None = None) -> ADistanceResult:
    """Proxy A-distance between two feature populations.

    Trains a logistic-regression probe (full-batch gradient descent, fixed
    epoch count) on a random split-fraction of each side, standardized by the
    training statistics, and converts held-out error to d_a = 2(1 - 2 eps).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(
            f"need [n, d] arrays with matching d, got {a.shape} and {b.shape}")
    if a.shape[0] < 20 or b.shape[0] < 20:
        raise ContractError(
            f"need >= 20 samples per side, got {a.shape[0]} and {b.shape[0]}")
    if not 0.0 < split < 1.0:
        raise ContractError(f"split must be in (0, 1), got {split}")

    # stratified split keeps both sides represented in train and test
    xs, ys = [], []
    for side, feats in enumerate((a, b)):
        order = rng.permutation(feats.shape[0])
        cut = max(1, int(feats.shape[0] * split))
        xs.append((feats[order[:cut]], feats[order[cut:]]))
        ys.append(side)
    x_train = np.concatenate([xs[0][0], xs[1][0]])
    x_test = np.concatenate([xs[0][1], xs[1][1]])
    y_train = np.concatenate([np.zeros(len(xs[0][0])), np.ones(len(xs[1][0]))])
    y_test = np.concatenate([np.zeros(len(xs[0][1])), np.ones(len(xs[1][1]))])
    if len(x_test) == 0:
        raise ContractError("split leaves no held-out samples")

    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    x_train = (x_train - mu) / sd
    x_test = (x_test - mu) / sd

    w = np.zeros(x_train.shape[1])
    bias = 0.0
    n = x_train.shape[0]
    for _ in range(PROBE_EPOCHS):
        p = _sigmoid(x_train @ w + bias)
        err = p - y_train
        w -= PROBE_LR * (x_train.T @ err) / n
        bias -= PROBE_LR * float(err.mean())

    pred = (x_test @ w + bias) >= 0.0
    raw_eps = float(np.mean(pred != (y_test > 0.5)))
    eps = min(raw_eps, 1.0 - raw_eps)
    return ADistanceResult(raw_epsilon=raw_eps, epsilon=eps,
                           d_a=2.0 * (1.0 - 2.0 * eps))


def feature_matrix(records: list[FeatureRecord], kind: str, layer: int,
                   mode_label: int) -> np.ndarray:
    rows = [r.vector for r in records
            if r.kind == kind and r.layer == layer and r.mode_label == mode_label]
    if not rows:
        return np.zeros((0, 0))
    return np.stack(rows)


def mode_pair_matrix(records: list[FeatureRecord], kind: str = "bus",
                     layer: int | None = None,
                     rng: np.random.Generator | None = None):
    """d_a for every mode pair on one state kind at one layer.

    layer=None means the topmost layer present.  Diagonal entries compare two
    random halves of the same mode's records, so they hover near 0; with too
    few records for a valid half-vs-half probe they are NaN.
    Returns (modes, matrix).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if layer is None:
        layer = max((r.layer for r in records), default=0)
    modes = sorted({r.mode_label for r in records})
    if len(modes) < 2:
        raise ContractError(f"need at least 2 modes, got {modes}")
    mats = {m: feature_matrix(records, kind, layer, m) for m in modes}
    out = np.zeros((len(modes), len(modes)))
    for i, mi in enumerate(modes):
        for j, mj in enumerate(modes):
            if j < i:
                continue
            if i == j:
                x = mats[mi]
                half = x.shape[0] // 2
                order = rng.permutation(x.shape[0])
                try:
                    r = a_distance(x[order[:half]], x[order[half:]], rng=rng)
                except ContractError:
                    out[i, j] = np.nan
                    continue
            else:
                r = a_distance(mats[mi], mats[mj], rng=rng)
            out[i, j] = out[j, i] = r.d_a
    return modes, out


_CSV_FIXED = ["sequence_id", "mode_label", "layer", "time", "kind"]


def export_features(records: list[FeatureRecord], path) -> None:
    """Write records as CSV; shorter vectors leave trailing columns empty."""
    width = max((len(r.vector) for r in records), default=0)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_FIXED + [f"d{i}" for i in range(width)])
        for r in records:
            row = [r.sequence_id, r.mode_label, r.layer, r.time, r.kind]
            row += [repr(float(v)) for v in r.vector]
            row += [""] * (width - len(r.vector))
            writer.writerow(row)


def import_features(path) -> list[FeatureRecord]:
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:5] != _CSV_FIXED:
            raise FormatError(f"{path}: bad feature CSV header {header!r}")
        for row in reader:
            vec = np.array([float(v) for v in row[5:] if v != ""])
            records.append(FeatureRecord(
                int(row[0]), int(row[1]), int(row[2]), int(row[3]), row[4], vec))
    return records
