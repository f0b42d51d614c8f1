"""Pixel-difference convolutions over a 3x3 field and their fusion into one kernel.

Every branch is a list of tap pairs ``(p_a, p_b)`` with offsets ``(dy, dx)``
in ``{-1, 0, 1}^2``::

    y(p0) = sum_n w_n * (x(p0 + p_a[n]) - x(p0 + p_b[n]))

A vanilla convolution is the special case with no reference tap. Branches:

* CDC: ``p_b`` is the centre, all nine taps.
* ADC: ``p_b`` is the next clockwise neighbour on the 8-ring, centre excluded.
* HDC: ``p_b`` is one column to the left, the six taps that have one.
* VDC: ``p_b`` is one row up, the six taps that have one.

Because every branch is linear in ``x`` with the same padding, the sum of all
branches equals a single convolution with the fused kernel returned by
:func:`fuse`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import Tensor, as_tensor, make_op, reshape
from .numerics.ops import ShapeError, conv2d, depthwise_conv2d, pad2d

KINDS = ("vanilla", "cdc", "adc", "hdc", "vdc")

_GRID = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
# clockwise from the top-left corner
_RING = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]


def _pairs(kind: str) -> tuple:
    if kind == "vanilla":
        return tuple((p, None) for p in _GRID)
    if kind == "cdc":
        return tuple((p, (0, 0)) for p in _GRID)
    if kind == "adc":
        return tuple((p, _RING[(i + 1) % 8]) for i, p in enumerate(_RING))
    if kind == "hdc":
        return tuple((p, (p[0], p[1] - 1)) for p in _GRID if p[1] - 1 >= -1)
    if kind == "vdc":
        return tuple((p, (p[0] - 1, p[1])) for p in _GRID if p[0] - 1 >= -1)
    raise ValueError(f"unknown PDC kind {kind!r}; expected one of {KINDS}")


def _in_field(p) -> bool:
    return p is None or (abs(p[0]) <= 1 and abs(p[1]) <= 1)


@dataclass(frozen=True)
class PdcSpec:
    """One branch: its kind and ordered tap pairs (``p_b`` is ``None`` for vanilla)."""

    kind: str
    pairs: tuple

    def __post_init__(self):
        for pa, pb in self.pairs:
            if pa is None or not _in_field(pa) or not _in_field(pb):
                raise ValueError(f"{self.kind}: tap pair {(pa, pb)} leaves the 3x3 receptive field")
        if self.kind == "vanilla" and any(pb is not None for _, pb in self.pairs):
            raise ValueError("vanilla taps cannot have a reference position")
        if self.kind != "vanilla" and any(pb is None for _, pb in self.pairs):
            raise ValueError(f"{self.kind}: every difference tap needs a reference position")

    @classmethod
    def of(cls, kind: str) -> "PdcSpec":
        return cls(kind, _pairs(kind))

    @property
    def n_taps(self) -> int:
        return len(self.pairs)

    def kernel(self, weights: np.ndarray) -> np.ndarray:
        """Equivalent plain 3x3 kernel for ``weights`` of shape ``(O, I, n_taps)``."""
        w = np.asarray(weights)
        if w.shape[-1] != self.n_taps:
            raise ShapeError(f"{self.kind}: expected {self.n_taps} taps, weights have {w.shape[-1]}")
        k = np.zeros(w.shape[:-1] + (3, 3), dtype=w.dtype)
        for n, (pa, pb) in enumerate(self.pairs):
            k[..., pa[0] + 1, pa[1] + 1] += w[..., n]
            if pb is not None:
                k[..., pb[0] + 1, pb[1] + 1] -= w[..., n]
        return k


SPECS = {kind: PdcSpec.of(kind) for kind in KINDS}


def _shift(xp: np.ndarray, p, h: int, w: int) -> np.ndarray:
    return xp[:, :, 1 + p[0]:1 + p[0] + h, 1 + p[1]:1 + p[1] + w]


def pdc_forward(x, spec: PdcSpec, weights, depthwise: bool = False, padding: str = "replicate") -> Tensor:
    """Evaluate one branch directly from pixel differences.

    ``weights`` is ``(O, I, n_taps)``, or ``(C, 1, n_taps)`` when ``depthwise``.
    Borders are padded by one pixel with ``padding`` (``"replicate"`` or ``"zeros"``).
    """
    x, weights = as_tensor(x), as_tensor(weights)
    b, c, h, w = x.shape
    if weights.shape[-1] != spec.n_taps:
        raise ShapeError(f"{spec.kind}: expected {spec.n_taps} taps, weights have {weights.shape[-1]}")
    if depthwise:
        if weights.shape[:2] != (c, 1):
            raise ShapeError(f"depthwise {spec.kind}: weights {weights.shape} do not match {c} channels")
    elif weights.shape[1] != c:
        raise ShapeError(f"{spec.kind}: weights expect {weights.shape[1]} input channels, input has {c}")
    xp_t = pad2d(x, 1, padding)
    xp = xp_t.data
    wd = weights.data
    diffs = []
    for pa, pb in spec.pairs:
        dterm = _shift(xp, pa, h, w)
        if pb is not None:
            dterm = dterm - _shift(xp, pb, h, w)
        diffs.append(dterm)
    if depthwise:
        taps = wd[:, 0].T[:, None, :, None, None]  # T, 1, C, 1, 1
        out = diffs[0] * taps[0]
        for n in range(1, len(diffs)):
            out += diffs[n] * taps[n]
    else:
        diffs = np.stack(diffs, axis=2)  # B, C, T, H, W
        out = np.einsum("bcthw,oct->bohw", diffs, wd, optimize=True)

    def vjp(g):
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.empty_like(wd)
            for n, (pa, pb) in enumerate(spec.pairs):
                gw[:, 0, n] = np.einsum("bchw,bchw->c", g, diffs[n])
                gd = g * taps[n]
                _shift(gxp, pa, h, w)[...] += gd
                if pb is not None:
                    _shift(gxp, pb, h, w)[...] -= gd
            return gxp, gw
        gw = np.einsum("bohw,bcthw->oct", g, diffs, optimize=True)
        gd = np.einsum("bohw,oct->bcthw", g, wd, optimize=True)
        for n, (pa, pb) in enumerate(spec.pairs):
            _shift(gxp, pa, h, w)[...] += gd[:, :, n]
            if pb is not None:
                _shift(gxp, pb, h, w)[...] -= gd[:, :, n]
        return gxp, gw

    return make_op(f"pdc_{spec.kind}", out, (xp_t, weights), vjp)


@dataclass
class FusedKernel:
    kernel: np.ndarray  # (O, I, 3, 3), I == 1 when depthwise
    bias: Optional[np.ndarray] = None
    depthwise: bool = False
    padding: str = "replicate"

    def __call__(self, x) -> Tensor:
        return fused_conv(x, Tensor(self.kernel), None if self.bias is None else Tensor(self.bias),
                          self.depthwise, self.padding)


def fused_conv(x, kernel, bias=None, depthwise: bool = False, padding: str = "replicate") -> Tensor:
    xp = pad2d(as_tensor(x), 1, padding)
    if depthwise:
        return depthwise_conv2d(xp, kernel, bias, zero_pad=0)
    return conv2d(xp, kernel, bias, zero_pad=0)


def fuse(branches: Sequence, bias=None, depthwise: bool = False, padding: str = "replicate") -> FusedKernel:
    """Collapse ``[(spec, weights), ...]`` into one 3x3 kernel.

    ``k_f[q] = sum over branches of (sum of w_n with p_a = q) - (sum of w_n with p_b = q)``.
    """
    kernel = None
    for spec, weights in branches:
        w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
        k = spec.kernel(w)
        if kernel is not None and k.shape != kernel.shape:
            raise ShapeError(f"branch {spec.kind} kernel {k.shape} != {kernel.shape}")
        kernel = k if kernel is None else kernel + k
    if kernel is None:
        raise ValueError("fuse needs at least one branch")
    b = None if bias is None else np.array(bias.data if isinstance(bias, Tensor) else bias)
    return FusedKernel(kernel, b, depthwise, padding)


def branch_sum(x, branches: Sequence, bias=None, depthwise: bool = False,
               padding: str = "replicate") -> Tensor:
    """Training-time path: evaluate each branch separately and add them up."""
    out = None
    for spec, weights in branches:
        y = pdc_forward(x, spec, weights, depthwise, padding)
        out = y if out is None else out + y
    if bias is not None:
        out = out + reshape(as_tensor(bias), (1, -1, 1, 1))
    return out
