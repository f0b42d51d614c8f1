"""Single-level orthonormal Haar analysis and synthesis.

For each 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2        LH = (a - b + c - d) / 2
    HL = (a + b - c - d) / 2        HH = (a - b - c + d) / 2

so LH is low-pass along height and high-pass along width. The transform is
orthonormal, so the adjoint of analysis is synthesis and vice versa.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .numerics import Tensor, as_tensor, make_op, slice_channels
from .numerics.ops import ShapeError, concat


class WaveletBands(NamedTuple):
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor


def _analysis(x: np.ndarray) -> np.ndarray:
    a, b = x[..., 0::2, 0::2], x[..., 0::2, 1::2]
    c, d = x[..., 1::2, 0::2], x[..., 1::2, 1::2]
    return np.stack(
        [(a + b + c + d) * 0.5, (a - b + c - d) * 0.5, (a + b - c - d) * 0.5, (a - b - c + d) * 0.5]
    )


def _synthesis(bands: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = bands
    h, w = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h, 2 * w), dtype=ll.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def _pack(bands: np.ndarray) -> np.ndarray:
    # (4, B, C, h, w) -> (B, 4C, h, w), band-major along channels
    _, b, c, h, w = bands.shape
    return bands.transpose(1, 0, 2, 3, 4).reshape(b, 4 * c, h, w)


def _unpack(packed: np.ndarray) -> np.ndarray:
    b, c4, h, w = packed.shape
    return packed.reshape(b, 4, c4 // 4, h, w).transpose(1, 0, 2, 3, 4)


def replicate_pad_even(x):
    """Edge-replicate one trailing row/column where H or W is odd."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(0, h % 2), (0, w % 2)]
    return Tensor(np.pad(x.data, widths, mode="edge"))


def _check_even(shape) -> None:
    h, w = shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(
            f"Haar DWT needs even spatial dims, got {h}x{w}; pad with replicate_pad_even() first"
        )


def dwt_packed(x) -> Tensor:
    """Analysis of ``(B, C, H, W)`` into ``(B, 4C, H/2, W/2)`` ordered LL, LH, HL, HH."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W), got {x.shape}")
    _check_even(x.shape)
    out = _pack(_analysis(x.data))
    return make_op("haar_dwt", out, (x,), lambda g: (_synthesis(_unpack(g)),))


def idwt_packed(y) -> Tensor:
    """Inverse of :func:`dwt_packed`."""
    y = as_tensor(y)
    if y.ndim != 4 or y.shape[1] % 4:
        raise ShapeError(f"expected (B, 4C, h, w), got {y.shape}")
    out = _synthesis(_unpack(y.data))
    return make_op("haar_idwt", out, (y,), lambda g: (_pack(_analysis(g)),))


def haar_dwt(x) -> WaveletBands:
    packed = dwt_packed(x)
    c = packed.shape[1] // 4
    return WaveletBands(*(slice_channels(packed, i * c, (i + 1) * c) for i in range(4)))


def haar_idwt(bands) -> Tensor:
    bands = [as_tensor(b) for b in bands]
    if len(bands) != 4:
        raise ShapeError(f"expected 4 bands, got {len(bands)}")
    if any(b.shape != bands[0].shape for b in bands):
        raise ShapeError(f"band shapes differ: {[b.shape for b in bands]}")
    return idwt_packed(concat(bands, axis=1))
