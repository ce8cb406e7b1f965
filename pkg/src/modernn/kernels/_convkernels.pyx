# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled convolution kernels.

Same contract as ``numpy_backend``: stride 1, zero same-padding, odd kernel
extents.  Inputs are repacked channels-last so the innermost loops run over
the channel axis, which is contiguous and wide enough for the compiler to
vectorize even when the spatial extent is tiny.  Accumulation happens in a
small stack buffer covering a block of four output pixels.
"""

import numpy as np

cimport cython

DEF MAXC = 1024
DEF PIX = 4


cdef void _conv_core(double[:, :, :, ::1] xt, double[:, :, :, ::1] kt,
                     double[::1] bias, double[:, :, :, ::1] y,
                     Py_ssize_t co0, Py_ssize_t cn) noexcept nogil:
    # xt: [B, H+2ph, W+2pw, Cin] padded, kt: [KH, KW, Cin, Cout],
    # y: [B, Cout, H, W].  Computes output channels co0 .. co0+cn-1.
    cdef Py_ssize_t b = y.shape[0], h = y.shape[2], w = y.shape[3]
    cdef Py_ssize_t cin = kt.shape[2], kh = kt.shape[0], kw = kt.shape[1]
    cdef Py_ssize_t ib, ih, iw0, pb, p, t, i, j, ci
    cdef double x0, x1, x2, x3, kv
    cdef double acc[PIX][MAXC]

    for ib in range(b):
        for ih in range(h):
            iw0 = 0
            while iw0 < w:
                pb = w - iw0
                if pb > PIX:
                    pb = PIX
                for p in range(pb):
                    for t in range(cn):
                        acc[p][t] = bias[co0 + t]
                if pb == PIX:
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(cin):
                                x0 = xt[ib, ih + i, iw0 + j, ci]
                                x1 = xt[ib, ih + i, iw0 + j + 1, ci]
                                x2 = xt[ib, ih + i, iw0 + j + 2, ci]
                                x3 = xt[ib, ih + i, iw0 + j + 3, ci]
                                for t in range(cn):
                                    kv = kt[i, j, ci, co0 + t]
                                    acc[0][t] += x0 * kv
                                    acc[1][t] += x1 * kv
                                    acc[2][t] += x2 * kv
                                    acc[3][t] += x3 * kv
                else:
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(cin):
                                for p in range(pb):
                                    x0 = xt[ib, ih + i, iw0 + j + p, ci]
                                    for t in range(cn):
                                        acc[p][t] += x0 * kt[i, j, ci, co0 + t]
                for p in range(pb):
                    for t in range(cn):
                        y[ib, co0 + t, ih, iw0 + p] = acc[p][t]
                iw0 += pb


cdef void _conv_grad_kernel_core(double[:, :, :, ::1] xt, double[:, :, :, ::1] gyt,
                                 double[:, :, :, ::1] gk,
                                 Py_ssize_t co0, Py_ssize_t cn) noexcept nogil:
    # xt: [B, H+2ph, W+2pw, Cin] padded, gyt: [B, H, W, Cout],
    # gk: [Cout, Cin, KH, KW].  Fills gk[co0 .. co0+cn-1, :, :, :].
    cdef Py_ssize_t b = gyt.shape[0], h = gyt.shape[1], w = gyt.shape[2]
    cdef Py_ssize_t cout = gk.shape[0], cin = gk.shape[1]
    cdef Py_ssize_t kh = gk.shape[2], kw = gk.shape[3]
    cdef Py_ssize_t i, j, ci0, cb, ib, ih, iw, t, p
    cdef double x0, x1, x2, x3, gv
    cdef double acc[PIX][MAXC]

    for i in range(kh):
        for j in range(kw):
            ci0 = 0
            while ci0 < cin:
                cb = cin - ci0
                if cb > PIX:
                    cb = PIX
                for p in range(cb):
                    for t in range(cn):
                        acc[p][t] = 0.0
                if cb == PIX:
                    for ib in range(b):
                        for ih in range(h):
                            for iw in range(w):
                                x0 = xt[ib, ih + i, iw + j, ci0]
                                x1 = xt[ib, ih + i, iw + j, ci0 + 1]
                                x2 = xt[ib, ih + i, iw + j, ci0 + 2]
                                x3 = xt[ib, ih + i, iw + j, ci0 + 3]
                                for t in range(cn):
                                    gv = gyt[ib, ih, iw, co0 + t]
                                    acc[0][t] += x0 * gv
                                    acc[1][t] += x1 * gv
                                    acc[2][t] += x2 * gv
                                    acc[3][t] += x3 * gv
                else:
                    for ib in range(b):
                        for ih in range(h):
                            for iw in range(w):
                                for p in range(cb):
                                    x0 = xt[ib, ih + i, iw + j, ci0 + p]
                                    for t in range(cn):
                                        acc[p][t] += x0 * gyt[ib, ih, iw, co0 + t]
                for p in range(cb):
                    for t in range(cn):
                        gk[co0 + t, ci0 + p, i, j] = acc[p][t]
                ci0 += cb


cdef void _dwconv_core(double[:, :, :, ::1] xt, double[:, :, ::1] kd,
                       double[:, :, :, ::1] y) noexcept nogil:
    # xt: [B, H+2ph, W+2pw, C] padded, kd: [KH, KW, C], y: [B, C, H, W].
    cdef Py_ssize_t b = y.shape[0], c = y.shape[1], h = y.shape[2], w = y.shape[3]
    cdef Py_ssize_t kh = kd.shape[0], kw = kd.shape[1]
    cdef Py_ssize_t ib, ih, iw0, pb, p, t, i, j, c0, cn
    cdef double acc[PIX][MAXC]

    for ib in range(b):
        for ih in range(h):
            iw0 = 0
            while iw0 < w:
                pb = w - iw0
                if pb > PIX:
                    pb = PIX
                c0 = 0
                while c0 < c:
                    cn = c - c0
                    if cn > MAXC:
                        cn = MAXC
                    for p in range(pb):
                        for t in range(cn):
                            acc[p][t] = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for p in range(pb):
                                for t in range(cn):
                                    acc[p][t] += kd[i, j, c0 + t] * xt[ib, ih + i, iw0 + j + p, c0 + t]
                    for p in range(pb):
                        for t in range(cn):
                            y[ib, c0 + t, ih, iw0 + p] = acc[p][t]
                    c0 += cn
                iw0 += pb


cdef void _dwconv_grad_kernel_core(double[:, :, :, ::1] xt, double[:, :, :, ::1] gyt,
                                   double[:, :, :, ::1] gk) noexcept nogil:
    # xt: [B, H+2ph, W+2pw, C] padded, gyt: [B, H, W, C], gk: [C, 1, KH, KW].
    cdef Py_ssize_t b = gyt.shape[0], h = gyt.shape[1], w = gyt.shape[2]
    cdef Py_ssize_t c = gk.shape[0], kh = gk.shape[2], kw = gk.shape[3]
    cdef Py_ssize_t i, j, ib, ih, iw, t, c0, cn
    cdef double acc[MAXC]

    for i in range(kh):
        for j in range(kw):
            c0 = 0
            while c0 < c:
                cn = c - c0
                if cn > MAXC:
                    cn = MAXC
                for t in range(cn):
                    acc[t] = 0.0
                for ib in range(b):
                    for ih in range(h):
                        for iw in range(w):
                            for t in range(cn):
                                acc[t] += gyt[ib, ih, iw, c0 + t] * xt[ib, ih + i, iw + j, c0 + t]
                for t in range(cn):
                    gk[c0 + t, 0, i, j] = acc[t]
                c0 += cn


def _pad_nhwc(x, Py_ssize_t ph, Py_ssize_t pw):
    b, c, h, w = x.shape
    xt = np.zeros((b, h + 2 * ph, w + 2 * pw, c))
    xt[:, ph:ph + h, pw:pw + w, :] = np.moveaxis(x, 1, 3)
    return xt


def conv2d_fwd(x, k, bias):
    cdef Py_ssize_t cout = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t co0, cn
    xt = _pad_nhwc(x, (kh - 1) // 2, (kw - 1) // 2)
    kt = np.ascontiguousarray(np.transpose(k, (2, 3, 1, 0)))
    if bias is None:
        bias_arr = np.zeros(cout)
    else:
        bias_arr = np.ascontiguousarray(bias, dtype=np.float64)
    y = np.empty((x.shape[0], cout, x.shape[2], x.shape[3]))

    cdef double[:, :, :, ::1] xtv = xt
    cdef double[:, :, :, ::1] ktv = kt
    cdef double[::1] bv = bias_arr
    cdef double[:, :, :, ::1] yv = y
    co0 = 0
    while co0 < cout:
        cn = cout - co0
        if cn > MAXC:
            cn = MAXC
        with nogil:
            _conv_core(xtv, ktv, bv, yv, co0, cn)
        co0 += cn
    return y


def conv2d_bwd_input(gy, k):
    cdef Py_ssize_t cin = k.shape[1], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t co0, cn
    # Full correlation with the spatially flipped kernel, in/out channels swapped.
    gyt = _pad_nhwc(gy, (kh - 1) // 2, (kw - 1) // 2)
    kt = np.ascontiguousarray(np.transpose(np.asarray(k)[:, :, ::-1, ::-1], (2, 3, 0, 1)))
    bias_arr = np.zeros(cin)
    gx = np.empty((gy.shape[0], cin, gy.shape[2], gy.shape[3]))

    cdef double[:, :, :, ::1] gytv = gyt
    cdef double[:, :, :, ::1] ktv = kt
    cdef double[::1] bv = bias_arr
    cdef double[:, :, :, ::1] gxv = gx
    co0 = 0
    while co0 < cin:
        cn = cin - co0
        if cn > MAXC:
            cn = MAXC
        with nogil:
            _conv_core(gytv, ktv, bv, gxv, co0, cn)
        co0 += cn
    return gx


def conv2d_bwd_kernel(gy, x, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t cout = gy.shape[1], cin = x.shape[1]
    cdef Py_ssize_t co0, cn
    xt = _pad_nhwc(x, (kh - 1) // 2, (kw - 1) // 2)
    gyt = np.ascontiguousarray(np.moveaxis(gy, 1, 3))
    gk = np.empty((cout, cin, kh, kw))

    cdef double[:, :, :, ::1] xtv = xt
    cdef double[:, :, :, ::1] gytv = gyt
    cdef double[:, :, :, ::1] gkv = gk
    co0 = 0
    while co0 < cout:
        cn = cout - co0
        if cn > MAXC:
            cn = MAXC
        with nogil:
            _conv_grad_kernel_core(xtv, gytv, gkv, co0, cn)
        co0 += cn
    return gk


def dwconv2d_fwd(x, k):
    cdef Py_ssize_t kh = k.shape[2], kw = k.shape[3]
    xt = _pad_nhwc(x, (kh - 1) // 2, (kw - 1) // 2)
    kd = np.ascontiguousarray(np.transpose(np.asarray(k)[:, 0, :, :], (1, 2, 0)))
    y = np.empty((x.shape[0], x.shape[1], x.shape[2], x.shape[3]))

    cdef double[:, :, :, ::1] xtv = xt
    cdef double[:, :, ::1] kdv = kd
    cdef double[:, :, :, ::1] yv = y
    with nogil:
        _dwconv_core(xtv, kdv, yv)
    return y


def dwconv2d_bwd_input(gy, k):
    cdef Py_ssize_t kh = k.shape[2], kw = k.shape[3]
    gyt = _pad_nhwc(gy, (kh - 1) // 2, (kw - 1) // 2)
    kd = np.ascontiguousarray(np.transpose(np.asarray(k)[:, 0, ::-1, ::-1], (1, 2, 0)))
    gx = np.empty((gy.shape[0], gy.shape[1], gy.shape[2], gy.shape[3]))

    cdef double[:, :, :, ::1] gytv = gyt
    cdef double[:, :, ::1] kdv = kd
    cdef double[:, :, :, ::1] gxv = gx
    with nogil:
        _dwconv_core(gytv, kdv, gxv)
    return gx


def dwconv2d_bwd_kernel(gy, x, Py_ssize_t kh, Py_ssize_t kw):
    xt = _pad_nhwc(x, (kh - 1) // 2, (kw - 1) // 2)
    gyt = np.ascontiguousarray(np.moveaxis(gy, 1, 3))
    gk = np.empty((x.shape[1], 1, kh, kw))

    cdef double[:, :, :, ::1] xtv = xt
    cdef double[:, :, :, ::1] gytv = gyt
    cdef double[:, :, :, ::1] gkv = gk
    with nogil:
        _dwconv_grad_kernel_core(xtv, gytv, gkv)
    return gk
