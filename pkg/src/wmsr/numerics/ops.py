"""Forward operations on NCHW tensors, each with its vector-Jacobian product.

All convolutions here are cross-correlations (no kernel flip), as is usual
for neural networks.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import Tensor, as_tensor, make_op


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op("sub", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = float(b)
        return make_op("scale", a.data * s, (a,), lambda g: (g * s,))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_op("mul", out, (a, b), vjp)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_op("exp", out, (x,), lambda g: (g * out,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return make_op("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return make_op("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    out = x.data * s

    def vjp(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return make_op("silu", out, (x,), vjp)


def softplus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return make_op("softplus", out, (x,), lambda g: (g * expit(x.data),))


# ---------------------------------------------------------------- reductions

def sum(x: Tensor) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.asarray(x.data.sum())
    return make_op("sum", out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean())
    return make_op("mean", out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


# ---------------------------------------------------------------- shape

def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return make_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return make_op("concat", out, xs, vjp)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    out = x.data[:, start:stop]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return make_op("slice_channels", out, (x,), vjp)


def chunk(x: Tensor, n: int) -> list:
    x = as_tensor(x)
    c = x.shape[1]
    if c % n:
        raise ShapeError(f"cannot split {c} channels into {n} equal parts")
    step = c // n
    return [slice_channels(x, i * step, (i + 1) * step) for i in range(n)]


def pad2d(x: Tensor, pad: int, mode: str = "zeros") -> Tensor:
    """Pad the two trailing axes by ``pad`` on every side."""
    x = as_tensor(x)
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    if mode == "zeros":
        out = np.pad(x.data, widths)
    elif mode == "replicate":
        out = np.pad(x.data, widths, mode="edge")
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    h, w = x.shape[-2:]

    def vjp(g):
        if mode == "zeros":
            return (g[..., pad:pad + h, pad:pad + w].copy(),)
        rows = g[..., pad:pad + h, :].copy()
        rows[..., 0, :] += g[..., :pad, :].sum(axis=-2)
        rows[..., -1, :] += g[..., pad + h:, :].sum(axis=-2)
        gx = rows[..., pad:pad + w].copy()
        gx[..., 0] += rows[..., :pad].sum(axis=-1)
        gx[..., -1] += rows[..., pad + w:].sum(axis=-1)
        return (gx,)

    return make_op("pad2d", out, (x,), vjp)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``(B, C*r*r, H, W)`` into ``(B, C, r*H, r*W)``."""
    x = as_tensor(x)
    b, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    oc = c // (r * r)
    out = x.data.reshape(b, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, oc, h * r, w * r)
    return make_op("pixel_shuffle", out, (x,), lambda g: (_unshuffle(g, r),))


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    b, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return a.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h, w)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    x = as_tensor(x)
    b, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial size {(h, w)} not divisible by {r}")
    out = _unshuffle(x.data, r)

    def vjp(g):
        return (g.reshape(b, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return make_op("pixel_unshuffle", out, (x,), vjp)


# ---------------------------------------------------------------- layers

def _im2col(xp: np.ndarray, kh: int, kw: int, s: int):
    """``(B*Ho*Wo, C*kh*kw)`` patch matrix of an already padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    b, ho, wo = xp.shape[0], win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, -1), (b, ho, wo)


def conv2d(x: Tensor, kernel: Tensor, bias=None, stride: int = 1, zero_pad: int = 0) -> Tensor:
    """Dense 2-D cross-correlation of ``(B, Cin, H, W)`` with ``(Cout, Cin, kh, kw)``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if cin != x.shape[1]:
        raise ShapeError(
            f"conv2d: kernel expects {cin} input channels, input has {x.shape[1]} "
            f"(input {x.shape}, kernel {kernel.shape})"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel size {(kh, kw)} must be odd")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    p, s = zero_pad, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    hp, wp = xp.shape[2:]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {(hp, wp)} smaller than kernel {(kh, kw)}")
    # im2col once, reused by the kernel gradient
    cols, (b, ho, wo) = _im2col(xp, kh, kw, s)
    kmat = kernel.data.reshape(cout, -1)
    out = cols @ kmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2))

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
        gk = (gm.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad and s == 1:
            # correlate the padded output gradient with the flipped, channel-swapped kernel
            q_h, q_w = kh - 1 - p, kw - 1 - p
            gp = np.pad(g, ((0, 0), (0, 0), (max(q_h, 0),) * 2, (max(q_w, 0),) * 2))
            if q_h < 0 or q_w < 0:
                gp = gp[:, :, max(-q_h, 0):gp.shape[2] - max(-q_h, 0), max(-q_w, 0):gp.shape[3] - max(-q_w, 0)]
            gcols, (_, h_in, w_in) = _im2col(gp, kh, kw, 1)
            kflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gx = np.ascontiguousarray((gcols @ kflip.T).reshape(b, h_in, w_in, cin).transpose(0, 3, 1, 2))
        elif x.requires_grad:
            gwin = (gm @ kmat).reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gwin[:, :, i, j]
            gx = gxp[:, :, p:hp - p, p:wp - p] if p else gxp
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_op("conv2d", out, inputs, vjp)


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias=None, zero_pad: int | None = None) -> Tensor:
    """Per-channel 2-D cross-correlation; ``kernel`` has shape ``(C, 1, kh, kw)``.

    ``zero_pad`` defaults to ``(k - 1) // 2`` so the spatial size is kept.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    c = x.shape[1]
    if kernel.ndim != 4 or kernel.shape[0] != c or kernel.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d: kernel {kernel.shape} does not match {c} channels")
    _, _, kh, kw = kernel.shape
    p = (kh - 1) // 2 if zero_pad is None else zero_pad
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    k = kernel.data[:, 0]
    out = np.zeros((x.shape[0], c, ho, wo), dtype=np.result_type(x.data, k))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + ho, j:j + wo] * k[None, :, i, j, None, None]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None, None]

    def vjp(g):
        gk = None
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for i in range(kh):
                for j in range(kw):
                    gk[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i:i + ho, j:j + wo])
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho, j:j + wo] += g * k[None, :, i, j, None, None]
            gx = gxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_op("depthwise_conv2d", out, inputs, vjp)


def linear(x: Tensor, weight: Tensor, bias=None) -> Tensor:
    """Apply ``weight @ v + bias`` to the channel vector at every position.

    ``x`` is ``(B, Cin, ...)`` and ``weight`` is ``(Cout, Cin)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"linear: weight expects {cin} channels, input has {x.shape[1]}")
    b = x.shape[0]
    x3 = x.data.reshape(b, cin, -1)
    out = np.matmul(weight.data, x3)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None]
    out = out.reshape((b, cout) + x.shape[2:])

    def vjp(g):
        g3 = g.reshape(b, cout, -1)
        gx = np.matmul(weight.data.T, g3).reshape(x.shape) if x.requires_grad else None
        gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])) if weight.requires_grad else None
        gb = g3.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("linear", out, inputs, vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis independently at each position."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params must have shape ({c},)")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def vjp(g):
        gxhat = g * gamma.data.reshape(bshape)
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_op("layer_norm", out, (x, gamma, beta), vjp)
