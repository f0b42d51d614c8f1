"""Static PNG rendering with fixed colormaps (byte-deterministic output)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# anchor colours, evenly spaced over [0, 1]
_THERMAL = np.array([
    [8, 29, 88], [37, 52, 148], [34, 94, 168], [29, 145, 192], [65, 182, 196],
    [161, 218, 180], [254, 224, 139], [253, 174, 97], [244, 109, 67], [215, 48, 39], [165, 0, 38],
], dtype=np.float64)
_ERROR = np.array([
    [0, 0, 4], [40, 11, 84], [101, 21, 110], [159, 42, 99], [212, 72, 66],
    [245, 125, 21], [250, 193, 39], [252, 255, 164],
], dtype=np.float64)


def colormap(anchors: np.ndarray, n: int = 256) -> np.ndarray:
    """Piecewise-linear ``(n, 3)`` uint8 lookup table through ``anchors``."""
    xs = np.linspace(0.0, 1.0, len(anchors))
    t = np.linspace(0.0, 1.0, n)
    lut = np.stack([np.interp(t, xs, anchors[:, k]) for k in range(3)], axis=1)
    return np.rint(lut).astype(np.uint8)


THERMAL = colormap(_THERMAL)
ERROR = colormap(_ERROR)


def to_rgb(field: np.ndarray, lut: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Map a 2-D field to RGB; values are clipped to ``[lo, hi]``."""
    f = np.asarray(field, dtype=np.float64)
    span = hi - lo if hi > lo else 1.0
    idx = np.rint(np.clip((f - lo) / span, 0.0, 1.0) * (len(lut) - 1)).astype(np.intp)
    return lut[idx]


def _save(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    Image.fromarray(rgb).save(path, format="PNG", optimize=False)
    return path


def heatmap_png(field: np.ndarray, path) -> Path:
    """Normalized field on the fixed ``[0, 1]`` range."""
    return _save(to_rgb(field, THERMAL), path)


def error_png(pred: np.ndarray, ref: np.ndarray, path) -> Path:
    """``|pred - ref|`` scaled by its own maximum (all black when equal)."""
    err = np.abs(np.asarray(pred, np.float64) - np.asarray(ref, np.float64))
    return _save(to_rgb(err, ERROR, 0.0, float(err.max())), path)
