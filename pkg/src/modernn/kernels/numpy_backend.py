"""Pure-numpy convolution kernels (im2col + BLAS).

Fallback backend used when the compiled extension is unavailable, and the
reference the compiled kernels are tested against.  All convolutions are
stride 1 with zero same-padding and odd kernel extents, so spatial sizes
are preserved.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"


def _pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _patches(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # [B, C, H, W, kh, kw] view over the zero-padded input
    return sliding_window_view(_pad_same(x, kh, kw), (kh, kw), axis=(2, 3))


def conv2d_fwd(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    b, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    cols = _patches(x, kh, kw).transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, cin * kh * kw)
    y = cols @ k.reshape(cout, -1).T
    if bias is not None:
        y += bias
    return np.ascontiguousarray(y.reshape(b, h, w, cout).transpose(0, 3, 1, 2))


def conv2d_bwd_input(gy: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Same-padded stride-1 correlation is self-adjoint up to flipping the
    # kernel and swapping its in/out channel axes.
    kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_fwd(gy, kt, None)


def conv2d_bwd_kernel(gy: np.ndarray, x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    b, cin, h, w = x.shape
    cout = gy.shape[1]
    cols = _patches(x, kh, kw).transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, cin * kh * kw)
    g = gy.transpose(0, 2, 3, 1).reshape(b * h * w, cout)
    return (g.T @ cols).reshape(cout, cin, kh, kw)


def dwconv2d_fwd(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    kh, kw = k.shape[2], k.shape[3]
    return np.einsum("bchwij,cij->bchw", _patches(x, kh, kw), k[:, 0], optimize=True)


def dwconv2d_bwd_input(gy: np.ndarray, k: np.ndarray) -> np.ndarray:
    return dwconv2d_fwd(gy, np.ascontiguousarray(k[:, :, ::-1, ::-1]))


def dwconv2d_bwd_kernel(gy: np.ndarray, x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    gk = np.einsum("bchw,bchwij->cij", gy, _patches(x, kh, kw), optimize=True)
    return gk[:, None, :, :]
