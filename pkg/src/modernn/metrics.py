"""Frame-quality and forecasting metrics: MSE, PSNR, SSIM, CSI.

Pixel scale convention: callers pass arrays on the 0..255 scale (float or
uint8).  Two MSE conventions are reported side by side, because the video
prediction literature quotes "MSE" numbers under incompatible normalizations:

* ``mse_pixel``: plain mean squared error per pixel on the 0..255 scale.
* ``mse_frame``: sum of squared differences on the 0..1 scale divided by
  (number of frames x batch), i.e. squared error accumulated over a frame,
  averaged over frames.  This is the convention under which Moving MNIST
  results land in the tens.

Both numbers appear in every report so either convention can be compared.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse_pixel(pred, target) -> float:
    """Mean squared error per pixel, on whatever scale the inputs use."""
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_frame(pred, target, peak: float = 255.0) -> float:
    """Per-frame summed squared error on the 0..1 scale.

    The last three axes are treated as one frame (channels, height, width);
    all leading axes count as frames x batch.
    """
    pred, target = _check_pair(pred, target)
    if pred.ndim < 3:
        raise ShapeError(f"need at least [C, H, W], got shape {pred.shape}")
    diff = (pred - target) / peak
    n = int(np.prod(pred.shape[:-3], dtype=np.int64)) if pred.ndim > 3 else 1
    return float(np.sum(diff * diff) / n)


def psnr_from_mse(mse: float, peak: float = 255.0) -> float:
    if mse < 0:
        raise ContractError(f"mse must be >= 0, got {mse}")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr(pred, target, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    return psnr_from_mse(mse_pixel(pred, target), peak)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred, target, window: int = SSIM_WINDOW, k1: float = 0.01, k2: float = 0.03,
         peak: float = 255.0) -> float:
    """Mean Gaussian-windowed SSIM over all frames, valid windows only."""
    pred, target = _check_pair(pred, target)
    if pred.ndim < 2:
        raise ShapeError(f"need at least [H, W], got shape {pred.shape}")
    h, w = pred.shape[-2:]
    if h < window or w < window:
        raise ContractError(f"frame {h}x{w} smaller than SSIM window {window}")

    gw = _gaussian_window(window, SSIM_SIGMA)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    x = pred.reshape(-1, h, w)
    y = target.reshape(-1, h, w)

    total = 0.0
    for i in range(x.shape[0]):
        wx = np.lib.stride_tricks.sliding_window_view(x[i], (window, window))
        wy = np.lib.stride_tricks.sliding_window_view(y[i], (window, window))
        mx = np.tensordot(wx, gw, axes=([2, 3], [0, 1]))
        my = np.tensordot(wy, gw, axes=([2, 3], [0, 1]))
        mxx = np.tensordot(wx * wx, gw, axes=([2, 3], [0, 1]))
        myy = np.tensordot(wy * wy, gw, axes=([2, 3], [0, 1]))
        mxy = np.tensordot(wx * wy, gw, axes=([2, 3], [0, 1]))
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        total += float(np.mean(num / den))
    return total / x.shape[0]


@dataclass(frozen=True)
class CsiResult:
    """Critical success index with its confusion counts.

    ``degenerate`` marks the no-event case (no exceedance in either map),
    which scores 1.0 by convention so batch aggregation stays total.
    """

    value: float
    hits: int
    misses: int
    false_alarms: int
    degenerate: bool

    def __float__(self):
        return self.value


def csi(pred, target, threshold: float) -> CsiResult:
    """CSI = hits / (hits + misses + false alarms) after thresholding at >= threshold."""
    pred, target = _check_pair(pred, target)
    p = pred >= threshold
    t = target >= threshold
    hits = int(np.sum(p & t))
    misses = int(np.sum(~p & t))
    fa = int(np.sum(p & ~t))
    denom = hits + misses + fa
    if denom == 0:
        return CsiResult(1.0, 0, 0, 0, True)
    return CsiResult(hits / denom, hits, misses, fa, False)


@dataclass(frozen=True)
class FrameMetrics:
    mse: float
    mse_frame: float
    psnr: float
    ssim: float
    csi: float
    csi_degenerate: bool


@dataclass(frozen=True)
class MetricReport:
    """Per-horizon-step metrics plus their means over the horizon."""

    per_frame: tuple[FrameMetrics, ...]
    aggregate: FrameMetrics


def compute_report(pred, target, csi_threshold: float = 128.0, peak: float = 255.0,
                   window: int = SSIM_WINDOW) -> MetricReport:
    """Build a MetricReport from [*, F, C, H, W] arrays on the 0..255 scale.

    Axis -4 is the prediction horizon; any leading axes are batch.
    """
    pred, target = _check_pair(pred, target)
    if pred.ndim < 4:
        raise ShapeError(f"need at least [F, C, H, W], got shape {pred.shape}")
    horizon = pred.shape[-4]
    per = []
    for f in range(horizon):
        pf = np.moveaxis(pred, -4, 0)[f]
        tf = np.moveaxis(target, -4, 0)[f]
        c = csi(pf, tf, csi_threshold)
        per.append(FrameMetrics(
            mse=mse_pixel(pf, tf),
            mse_frame=mse_frame(pf, tf, peak),
            psnr=psnr(pf, tf, peak),
            ssim=ssim(pf, tf, window=window, peak=peak),
            csi=c.value,
            csi_degenerate=c.degenerate,
        ))
    agg = FrameMetrics(
        mse=sum(m.mse for m in per) / horizon,
        mse_frame=sum(m.mse_frame for m in per) / horizon,
        psnr=sum(m.psnr for m in per) / horizon,
        ssim=sum(m.ssim for m in per) / horizon,
        csi=sum(m.csi for m in per) / horizon,
        csi_degenerate=all(m.csi_degenerate for m in per),
    )
    return MetricReport(per_frame=tuple(per), aggregate=agg)


_COLUMNS = [f.name for f in fields(FrameMetrics)]


def _row(label: str, m: FrameMetrics) -> list[str]:
    out = [label]
    for name in _COLUMNS:
        v = getattr(m, name)
        out.append(repr(int(v)) if isinstance(v, bool) else repr(v))
    return out


def report_to_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + _COLUMNS)
        for i, m in enumerate(report.per_frame):
            writer.writerow(_row(str(i), m))
        writer.writerow(_row("aggregate", report.aggregate))


def report_to_text(report: MetricReport) -> str:
    """Line-oriented key=value rendering, same numbers as the CSV."""
    lines = []
    for i, m in enumerate(report.per_frame):
        for name, v in zip(["frame"] + _COLUMNS, _row(str(i), m)):
            if name != "frame":
                lines.append(f"frame{i}.{name}={v}")
    for name, v in zip(["frame"] + _COLUMNS, _row("aggregate", report.aggregate)):
        if name != "frame":
            lines.append(f"aggregate.{name}={v}")
    return "\n".join(lines) + "\n"
