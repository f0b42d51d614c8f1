"""Training losses and evaluation metrics.

All reductions are means, so the default weights transfer across patch sizes.
Grids are ``(B, C, H, W)`` arrays or tensors normalized to ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import Tensor, as_tensor, make_op
from .numerics import ops
from .numerics.ops import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

METRIC_HEADER = "epoch,split,psnr_db,ssim"


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 0.1
    lambda_freq: float = 0.9

    def __post_init__(self):
        if self.lambda_rec < 0 or self.lambda_freq < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")
        if self.lambda_rec == 0 and self.lambda_freq == 0:
            raise ValueError("loss weights cannot both be zero")


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def rec_loss(i_sr, i_hr) -> Tensor:
    """Mean absolute difference."""
    i_sr, i_hr = as_tensor(i_sr), as_tensor(i_hr)
    _check_pair(i_sr, i_hr, "rec_loss")
    return ops.mean(ops.abs(i_sr - i_hr))


def dft2(x) -> np.ndarray:
    """Normalized 2-D DFT over the last two axes: ``F = fft2(x) / (H W)``.

    ``F[..., 0, 0]`` is the spatial mean.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    h, w = x.shape[-2:]
    return np.fft.fft2(x, axes=(-2, -1)) / (h * w)


def freq_loss(i_hr, i_sr, weight=None) -> Tensor:
    """Spectrum-weighted squared frequency distance.

    ``mean(w * |F_hr - F_sr|^2)`` with ``w = |F_hr - F_sr|`` by default. The
    weight is a constant for differentiation; pass ``weight`` to pin it.
    """
    i_hr, i_sr = as_tensor(i_hr), as_tensor(i_sr)
    _check_pair(i_hr, i_sr, "freq_loss")
    h, w = i_hr.shape[-2:]
    diff = dft2(i_hr.data.astype(np.float64)) - dft2(i_sr.data.astype(np.float64))
    mag2 = diff.real ** 2 + diff.imag ** 2
    omega = np.sqrt(mag2) if weight is None else np.broadcast_to(np.asarray(weight, np.float64), mag2.shape)
    count = mag2.size
    value = np.asarray(np.sum(omega * mag2) / count, dtype=np.result_type(i_hr.dtype, i_sr.dtype))

    def vjp(g):
        # d/dx of mean(w |D|^2) with D = (fft2(hr) - fft2(sr)) / HW
        core = 2.0 / count * np.fft.ifft2(omega * diff, axes=(-2, -1)).real * g
        return core.astype(i_hr.dtype, copy=False), (-core).astype(i_sr.dtype, copy=False)

    return make_op("freq_loss", value, (i_hr, i_sr), vjp)


def total_loss(i_sr, i_hr, weights: LossWeights = LossWeights()) -> Tensor:
    """``lambda_rec * rec_loss + lambda_freq * freq_loss``; a zero weight skips its term."""
    terms = []
    if weights.lambda_rec:
        terms.append(rec_loss(i_sr, i_hr) * weights.lambda_rec)
    if weights.lambda_freq:
        terms.append(freq_loss(i_hr, i_sr) * weights.lambda_freq)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


# ------------------------------------------------------------------ metrics

def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, ``PSNR_CAP_DB`` when the inputs are equal."""
    a, b = _arr(a), _arr(b)
    _check_pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is its outer product."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(x, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean structural similarity over all valid 11x11 Gaussian windows.

    Inputs are ``(..., H, W)``; every leading slice is treated as its own image
    and all windows are averaged together.
    """
    a, b = _arr(a), _arr(b)
    _check_pair(a, b, "ssim")
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def metric_row(epoch: int, split: str, psnr_db: float, ssim_value: float) -> str:
    """One metric-log line matching :data:`METRIC_HEADER`."""
    return f"{epoch},{split},{psnr_db:.6f},{ssim_value:.6f}"
