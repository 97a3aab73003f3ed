"""Functional layer primitives: forward passes and matching backward passes.

All image tensors are channel-last, shape (N, H, W, C), and every op
preserves the input dtype.  Convolutions use cross-correlation with
zero padding chosen so stride-1 output matches the input size; batch
elements never mix, so a batch forward equals the concatenation of
per-sample forwards bit for bit.

Backward functions take the upstream gradient plus whatever the forward
needed, and return gradients in input order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "conv2d_fwd",
    "conv2d_bwd",
    "maxpool2x2_fwd",
    "maxpool2x2_bwd",
    "relu_fwd",
    "relu_bwd",
    "sigmoid_fwd",
    "sigmoid_bwd",
    "global_avg_pool_fwd",
    "global_avg_pool_bwd",
    "adaptive_avg_pool_fwd",
    "adaptive_avg_pool_bwd",
    "resize_bilinear_fwd",
    "resize_bilinear_bwd",
    "softmax",
    "softmax_bwd",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _conv_geometry(x_shape, w_shape, stride, dilation):
    N, H, W, cin = x_shape
    kh, kw, wcin, cout = w_shape
    if wcin != cin:
        raise ValueError(f"conv input channels {cin} do not match kernel {wcin}")
    dh, dw = _pair(dilation)
    eh, ew = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    if eh % 2 == 0 or ew % 2 == 0:
        raise ValueError("effective kernel extent must be odd for same-padding")
    ph, pw = (eh - 1) // 2, (ew - 1) // 2
    ho = (H - 1) // stride + 1
    wo = (W - 1) // stride + 1
    return (dh, dw), (ph, pw), (ho, wo)


def _conv_windows(x, w_shape, stride, dilation, padding):
    kh, kw = w_shape[0], w_shape[1]
    dh, dw = dilation
    ph, pw = padding
    eh, ew = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (eh, ew), axis=(1, 2))
    return xp, win[:, ::stride, ::stride, :, ::dh, ::dw]


def conv2d_fwd(x, w, b, stride: int = 1, dilation=1):
    """Cross-correlation of x (N,H,W,Cin) with w (kh,kw,Cin,Cout) plus bias.

    Zero padding preserves the spatial size at stride 1; stride s maps
    H to ceil(H/s).
    """
    dil, pad, (ho, wo) = _conv_geometry(x.shape, w.shape, stride, dilation)
    _, win = _conv_windows(x, w.shape, stride, dil, pad)
    N = x.shape[0]
    y = np.empty((N, ho, wo, w.shape[3]), dtype=x.dtype)
    for n in range(N):
        # windows are (ho, wo, Cin, kh, kw); contract against (kh, kw, Cin, Cout)
        y[n] = np.tensordot(win[n], w, axes=([2, 3, 4], [2, 0, 1]))
    y += b
    return y


def conv2d_bwd(dy, x, w, stride: int = 1, dilation=1):
    """Gradients (dx, dw, db) of conv2d_fwd."""
    dil, pad, _ = _conv_geometry(x.shape, w.shape, stride, dilation)
    _, win = _conv_windows(x, w.shape, stride, dil, pad)
    N, H, W, _ = x.shape
    _, ho, wo, _ = dy.shape
    kh, kw = w.shape[0], w.shape[1]
    (dh, dw_), (ph, pw) = dil, pad

    db = dy.sum(axis=(0, 1, 2))
    dwt = np.zeros((w.shape[2], kh, kw, w.shape[3]), dtype=w.dtype)
    for n in range(N):
        dwt += np.tensordot(win[n], dy[n], axes=([0, 1], [0, 1]))
    dweight = dwt.transpose(1, 2, 0, 3)

    dxp = np.zeros((N, H + 2 * ph, W + 2 * pw, x.shape[3]), dtype=x.dtype)
    for a in range(kh):
        for c in range(kw):
            contrib = np.matmul(dy, w[a, c].T)
            dxp[:, a * dh : a * dh + stride * ho : stride,
                c * dw_ : c * dw_ + stride * wo : stride, :] += contrib
    dx = dxp[:, ph : ph + H, pw : pw + W, :]
    return np.ascontiguousarray(dx), dweight, db


def maxpool2x2_fwd(x):
    """2x2 stride-2 max pool; returns (y, argmax) with first-max ties."""
    N, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"max pool needs even spatial dims, got {H}x{W}")
    h2, w2 = H // 2, W // 2
    win = (
        x.reshape(N, h2, 2, w2, 2, C)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(N, h2, w2, C, 4)
    )
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2x2_bwd(dy, idx, x_shape):
    N, H, W, C = x_shape
    h2, w2 = H // 2, W // 2
    dwin = np.zeros((N, h2, w2, C, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return (
        dwin.reshape(N, h2, w2, C, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(N, H, W, C)
    )


def relu_fwd(x):
    return np.maximum(x, 0)


def relu_bwd(dy, x):
    return dy * (x > 0)


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(dy, s):
    return dy * s * (1.0 - s)


def global_avg_pool_fwd(x):
    """Mean over the spatial dims, kept as (N, 1, 1, C)."""
    return x.mean(axis=(1, 2), keepdims=True)


def global_avg_pool_bwd(dy, x_shape):
    N, H, W, C = x_shape
    scale = np.asarray(1.0 / (H * W), dtype=dy.dtype)
    return np.broadcast_to(dy * scale, x_shape).copy()


def _segments(n: int, bins: int):
    if n < bins:
        raise ValueError(f"cannot pool {n} positions into {bins} bins")
    return [((i * n) // bins, ((i + 1) * n) // bins) for i in range(bins)]


def adaptive_avg_pool_fwd(x, bins: int):
    """Average pool to a bins x bins grid of near-equal segments."""
    N, H, W, C = x.shape
    hs, ws = _segments(H, bins), _segments(W, bins)
    y = np.empty((N, bins, bins, C), dtype=x.dtype)
    for bi, (h0, h1) in enumerate(hs):
        for bj, (w0, w1) in enumerate(ws):
            y[:, bi, bj] = x[:, h0:h1, w0:w1].mean(axis=(1, 2))
    return y


def adaptive_avg_pool_bwd(dy, x_shape, bins: int):
    N, H, W, C = x_shape
    hs, ws = _segments(H, bins), _segments(W, bins)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for bi, (h0, h1) in enumerate(hs):
        for bj, (w0, w1) in enumerate(ws):
            area = (h1 - h0) * (w1 - w0)
            dx[:, h0:h1, w0:w1] += (dy[:, bi, bj] / area)[:, None, None, :]
    return dx


def _interp_coeffs(n_in: int, n_out: int, dtype):
    """Half-pixel-center source taps: (lower index, upper index, fraction)."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (src - i0).astype(dtype)
    return i0, i1, frac


def resize_bilinear_fwd(x, h_out: int, w_out: int):
    """Bilinear resize with half-pixel centers; exact on constant inputs.

    The lerp form x0 + f*(x1 - x0) keeps constants (and same-size resizes)
    bit-exact.
    """
    N, H, W, C = x.shape
    i0, i1, fh = _interp_coeffs(H, h_out, x.dtype)
    j0, j1, fw = _interp_coeffs(W, w_out, x.dtype)
    rows = x[:, i0] + fh[None, :, None, None] * (x[:, i1] - x[:, i0])
    return rows[:, :, j0] + fw[None, None, :, None] * (rows[:, :, j1] - rows[:, :, j0])


def _interp_matrix(n_in: int, n_out: int, dtype):
    i0, i1, frac = _interp_coeffs(n_in, n_out, dtype)
    A = np.zeros((n_out, n_in), dtype=dtype)
    np.add.at(A, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(A, (np.arange(n_out), i1), frac)
    return A


def resize_bilinear_bwd(dy, x_shape, h_out: int, w_out: int):
    """Transpose of the bilinear resize, applied as two small matmuls."""
    N, H, W, C = x_shape
    Ah = _interp_matrix(H, h_out, dy.dtype)
    Aw = _interp_matrix(W, w_out, dy.dtype)
    # dy (N,ho,wo,C) -> contract wo against Aw -> (N,ho,W,C), then ho against Ah
    drows = np.einsum("nhoc,ow->nhwc", dy, Aw, optimize=True)
    return np.einsum("nhwc,ho->nowc", drows, Ah, optimize=True)


def softmax(logits):
    """Numerically stable softmax over the trailing axis."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(dy, p):
    inner = (dy * p).sum(axis=-1, keepdims=True)
    return p * (dy - inner)
