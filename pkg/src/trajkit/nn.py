"""Minimal convolution primitives with hand-written backward passes.

Shapes follow the prediction cell's layout: 1-D convolutions act on
(C_in, L, B) blocks where B is a trailing batch axis (agents), 2-D
convolutions act on a single (C_in, H, W) grid. All convolutions use
"same" padding for odd kernel sizes.
"""

from __future__ import annotations

import numpy as np


def conv1d(x, w, b):
    """x: (C_in, L, B), w: (C_out, C_in, K), b: (C_out,) -> (C_out, L, B)."""
    c_in, length, batch = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.zeros((c_in, length + 2 * pad, batch))
    xp[:, pad : pad + length] = x
    out = np.broadcast_to(b[:, None, None], (c_out, length, batch)).copy()
    for j in range(k):
        out += np.einsum("oi,ilb->olb", w[:, :, j], xp[:, j : j + length])
    return out


def conv1d_backward(x, w, gout):
    """Gradients of conv1d: returns (gx, gw, gb)."""
    c_in, length, batch = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.zeros((c_in, length + 2 * pad, batch))
    xp[:, pad : pad + length] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for j in range(k):
        gw[:, :, j] = np.einsum("olb,ilb->oi", gout, xp[:, j : j + length])
        gxp[:, j : j + length] += np.einsum("oi,olb->ilb", w[:, :, j], gout)
    gb = gout.sum(axis=(1, 2))
    return gxp[:, pad : pad + length], gw, gb


def conv2d(x, w, b):
    """x: (C_in, H, W), w: (C_out, C_in, KH, KW), b: (C_out,) -> (C_out, H, W)."""
    c_in, height, width = x.shape
    c_out, _, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.zeros((c_in, height + 2 * ph, width + 2 * pw))
    xp[:, ph : ph + height, pw : pw + width] = x
    out = np.broadcast_to(b[:, None, None], (c_out, height, width)).copy()
    for jh in range(kh):
        for jw in range(kw):
            out += np.einsum(
                "oi,ihw->ohw", w[:, :, jh, jw], xp[:, jh : jh + height, jw : jw + width]
            )
    return out


def conv2d_backward(x, w, gout):
    """Gradients of conv2d: returns (gx, gw, gb)."""
    c_in, height, width = x.shape
    c_out, _, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.zeros((c_in, height + 2 * ph, width + 2 * pw))
    xp[:, ph : ph + height, pw : pw + width] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for jh in range(kh):
        for jw in range(kw):
            window = xp[:, jh : jh + height, jw : jw + width]
            gw[:, :, jh, jw] = np.einsum("ohw,ihw->oi", gout, window)
            gxp[:, jh : jh + height, jw : jw + width] += np.einsum(
                "oi,ohw->ihw", w[:, :, jh, jw], gout
            )
    gb = gout.sum(axis=(1, 2))
    return gxp[:, ph : ph + height, pw : pw + width], gw, gb


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gout):
    return gout * (x > 0.0)
