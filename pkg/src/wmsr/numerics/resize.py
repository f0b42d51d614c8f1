"""Separable bicubic resampling.

The resize is written as ``Mh @ x @ Mw.T`` with explicit weight matrices, so
it is exactly linear and its gradient is the transposed product. Conventions:

* Keys cubic kernel with ``a = -0.5`` (Catmull-Rom),
* centre-aligned sampling, ``src = (dst + 0.5) / scale - 0.5``,
* clamp-to-edge at the borders,
* on downscaling the kernel is stretched by ``1/scale`` (antialiasing), and
  every row of weights is renormalized to sum to one.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .tensor import Tensor, as_tensor, make_op


def cubic(s: np.ndarray, a: float = -0.5) -> np.ndarray:
    s = np.abs(s)
    s2, s3 = s * s, s * s * s
    near = (a + 2.0) * s3 - (a + 3.0) * s2 + 1.0
    far = a * s3 - 5.0 * a * s2 + 8.0 * a * s - 4.0 * a
    return np.where(s <= 1.0, near, np.where(s < 2.0, far, 0.0))


def _as_fraction(scale) -> Fraction:
    if isinstance(scale, Fraction):
        return scale
    if isinstance(scale, float):
        return Fraction(scale).limit_denominator(10_000)
    return Fraction(scale)


@lru_cache(maxsize=64)
def _weights(n_in: int, n_out: int, scale: Fraction, a: float, antialias: bool) -> np.ndarray:
    sc = float(scale)
    stretch = sc if (antialias and sc < 1.0) else 1.0
    support = 2.0 / stretch
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        u = (i + 0.5) / sc - 0.5
        lo, hi = math.floor(u - support), math.ceil(u + support)
        taps = np.arange(lo, hi + 1)
        w = stretch * cubic(stretch * (u - taps), a)
        w = w / w.sum()
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), w)
    m.setflags(write=False)
    return m


def bicubic_matrix(n_in: int, scale, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Return the ``(n_out, n_in)`` resampling matrix along one axis."""
    frac = _as_fraction(scale)
    if frac <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    n_out = math.floor(n_in * frac)
    if n_out <= 0:
        raise ValueError(f"output size {n_out} from input {n_in} at scale {scale} is not positive")
    return _weights(n_in, n_out, frac, float(a), bool(antialias))


def bicubic_resize(x, scale, a: float = -0.5, antialias: bool = True) -> Tensor:
    """Resize the last two axes of ``x`` by ``scale``; accumulation is float64."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    mh = bicubic_matrix(h, scale, a, antialias)
    mw = bicubic_matrix(w, scale, a, antialias)
    src = x.data.astype(np.float64, copy=False)
    out = np.matmul(np.matmul(mh, src), mw.T).astype(x.dtype, copy=False)

    def vjp(g):
        return (np.matmul(np.matmul(mh.T, g), mw).astype(x.dtype, copy=False),)

    return make_op("bicubic_resize", out, (x,), vjp)
