"""Synthetic SST fields, the GridFile container, degradation and patch pairs.

GridFile layout (all little-endian)::

    offset  size  field
    0       4     magic b"SSTG"
    4       2     version (u16), currently 1
    6       4     rows (u32)
    10      4     cols (u32)
    14      4     channels (u32)
    18      8     physical minimum (f64)
    26      8     physical maximum (f64)
    34      ...   rows*cols*channels f32 values in [0, 1], channel-major, row-major

Physical values are recovered as ``min + v * (max - min)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

from .numerics import bicubic_resize

MAGIC = b"SSTG"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIdd")
HEADER_SIZE = _HEADER.size  # 34


class GridFormatError(ValueError):
    """Base class for malformed GridFile contents."""


class BadMagic(GridFormatError):
    pass


class UnsupportedVersion(GridFormatError):
    pass


class PayloadLengthMismatch(GridFormatError):
    pass


# ------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic field.

    Parameters
    ----------
    gradient : float
        Amplitude of the large-scale north-south ramp.
    beta : float
        Slope of the isotropic power spectrum ``P(k) ~ k**-beta``.
    spectral_amp : float
        Standard deviation of the spectral component.
    fronts : int
        Number of straight tanh fronts.
    front_amp : float
        Temperature jump across each front.
    front_width : float
        Front half-width in pixels (smaller is sharper).
    t_min, t_max : float
        Physical range (kelvin) stored alongside normalized fields.
    """

    gradient: float = 1.0
    beta: float = 3.0
    spectral_amp: float = 0.5
    fronts: int = 2
    front_amp: float = 0.3
    front_width: float = 3.0
    t_min: float = 271.15
    t_max: float = 305.15


def spectral_field(height: int, width: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance random field with power spectrum ``~ k**-beta``."""
    noise = np.fft.fft2(rng.standard_normal((height, width)))
    ky = np.fft.fftfreq(height)[:, None]
    kx = np.fft.fftfreq(width)[None, :]
    k = np.hypot(ky, kx)
    amp = np.zeros_like(k)
    amp[k > 0] = k[k > 0] ** (-beta / 2.0)
    field = np.fft.ifft2(noise * amp).real
    std = field.std()
    return (field - field.mean()) / std if std > 0 else field * 0.0


def synth_sst(height: int, width: int, seed: int = 0, params: SynthParams = SynthParams()) -> np.ndarray:
    """A ``(height, width)`` float64 field in ``[0, 1]``, deterministic in ``seed``.

    Sum of a meridional ramp, a power-law random field and tanh fronts, then
    min-max normalized. A field with no variation is returned as zeros.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"field dimensions must be positive, got {height}x{width}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64),
                         indexing="ij")
    field = params.gradient * (1.0 - yy / max(height - 1, 1))
    if params.spectral_amp:
        field = field + params.spectral_amp * spectral_field(height, width, params.beta, rng)
    for _ in range(params.fronts):
        theta = rng.uniform(0.0, np.pi)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        dist = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        field = field + params.front_amp * np.tanh(dist / params.front_width)
    lo, hi = field.min(), field.max()
    if hi - lo <= 0:
        return np.zeros_like(field)
    return (field - lo) / (hi - lo)


def radial_spectrum_slope(field: np.ndarray, kmin: float = 4.0, kmax_frac: float = 0.25) -> float:
    """Least-squares log-log slope of the radially averaged power spectrum.

    Fitted over integer radii ``kmin <= k <= kmax_frac * min(H, W)``.
    """
    h, w = field.shape
    p = np.abs(np.fft.fft2(field - field.mean())) ** 2
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    kr = np.rint(np.hypot(ky[:, None], kx[None, :])).astype(int)
    power = np.bincount(kr.ravel(), p.ravel()) / np.maximum(np.bincount(kr.ravel()), 1)
    ks = np.arange(int(kmin), int(kmax_frac * min(h, w)) + 1)
    slope, _ = np.polyfit(np.log(ks), np.log(power[ks]), 1)
    return float(slope)


# -------------------------------------------------------------- GridFile

@dataclass
class Grid:
    """Normalized payload ``(channels, rows, cols)`` plus the physical range."""

    data: np.ndarray
    vmin: float
    vmax: float

    def physical(self) -> np.ndarray:
        return self.vmin + self.data.astype(np.float64) * (self.vmax - self.vmin)


def write_grid(path, grid: np.ndarray, vmin: float, vmax: float) -> None:
    """Write a ``(rows, cols)`` or ``(channels, rows, cols)`` normalized field."""
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"grid must be 2-D or 3-D, got shape {arr.shape}")
    if not vmin < vmax:
        raise ValueError(f"need min < max, got {vmin} and {vmax}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise ValueError("grid values must be finite and within [0, 1]")
    c, h, w = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, h, w, c, float(vmin), float(vmax)) + payload)


def read_grid(path) -> Grid:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise PayloadLengthMismatch(f"{path}: file has {len(raw)} bytes, header alone is {HEADER_SIZE}")
    magic, version, h, w, c, vmin, vmax = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: unsupported version {version}")
    expected = h * w * c * 4
    if len(raw) - HEADER_SIZE != expected:
        raise PayloadLengthMismatch(
            f"{path}: payload length mismatch, expected {expected} bytes, found {len(raw) - HEADER_SIZE}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(c, h, w).astype(np.float32)
    return Grid(data, vmin, vmax)


# ------------------------------------------------------------------ pairs

class PatchPair(NamedTuple):
    hr: np.ndarray  # (1, 1, p, p) float32
    lr: np.ndarray  # (1, 1, p/r, p/r) float32
    source: str
    offset: Tuple[int, int]


def degrade(hr: np.ndarray, r: int) -> np.ndarray:
    """Bicubic 1/r downscale, accumulated in float64 and rounded to float32."""
    return bicubic_resize(np.asarray(hr, dtype=np.float64), Fraction(1, r)).data.astype(np.float32)


def tile_offsets(height: int, width: int, patch: int, stride: int) -> List[Tuple[int, int]]:
    if patch > height or patch > width:
        raise ValueError(f"patch {patch} larger than field {height}x{width}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    return [(y, x) for y in range(0, height - patch + 1, stride) for x in range(0, width - patch + 1, stride)]


def split_fields(n: int, seed: int, ratio: Tuple[int, int] = (4, 1)) -> Tuple[List[int], List[int]]:
    """Shuffle field indices and split them ``ratio[0]:ratio[1]`` (at least one test field when n >= 2)."""
    order = np.random.default_rng(seed).permutation(n).tolist()
    n_test = int(round(n * ratio[1] / (ratio[0] + ratio[1])))
    if n >= 2:
        n_test = min(max(n_test, 1), n - 1)
    n_test = min(n_test, n)
    return sorted(order[n_test:]), sorted(order[:n_test])


def _patches(fields, indices, r, patch, stride) -> List[PatchPair]:
    out = []
    for i in indices:
        source, field = fields[i]
        field = np.asarray(field, dtype=np.float32)
        for y, x in tile_offsets(*field.shape, patch, stride):
            hr = field[None, None, y:y + patch, x:x + patch].copy()
            out.append(PatchPair(hr, degrade(hr, r), source, (y, x)))
    return out


def make_pairs(
    hr_fields: Sequence,
    r: int,
    patch: int = 48,
    stride: int | None = None,
    split_ratio: Tuple[int, int] = (4, 1),
    seed: int = 0,
) -> Tuple[List[PatchPair], List[PatchPair]]:
    """Tile source fields into HR/LR pairs and split them by source field.

    ``hr_fields`` holds ``(source_id, field)`` tuples or bare 2-D arrays
    (ids then default to their index). Train patches are shuffled by ``seed``;
    test patches keep tiling order.
    """
    if patch % 2 or patch % r:
        raise ValueError(f"patch {patch} must be divisible by 2 and by the scale {r}")
    fields = [f if isinstance(f, tuple) else (str(i), f) for i, f in enumerate(hr_fields)]
    train_idx, test_idx = split_fields(len(fields), seed, split_ratio)
    stride = patch if stride is None else stride
    train = _patches(fields, train_idx, r, patch, stride)
    test = _patches(fields, test_idx, r, patch, stride)
    order = np.random.default_rng(seed + 1).permutation(len(train))
    return [train[i] for i in order], test


def stack(pairs: Iterable[PatchPair]) -> Tuple[np.ndarray, np.ndarray]:
    """Batch pairs into ``(B, 1, p, p)`` HR and ``(B, 1, p/r, p/r)`` LR arrays."""
    pairs = list(pairs)
    return np.concatenate([p.hr for p in pairs]), np.concatenate([p.lr for p in pairs])


# --------------------------------------------------------------- manifest

def write_manifest(path, entries: Iterable[Tuple[str, str]]) -> None:
    """One ``role<TAB>relative_path`` line per file, roles ``train`` or ``test``."""
    lines = [f"{role}\t{name}\n" for role, name in entries]
    Path(path).write_text("".join(lines))


def read_manifest(path) -> List[Tuple[str, Path]]:
    base = Path(path).parent
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[0] not in ("train", "test"):
            raise GridFormatError(f"{path}:{lineno}: expected 'train|test<TAB>path', got {line!r}")
        out.append((parts[0], base / parts[1]))
    return out


def generate_dataset(out_dir, n_fields: int, height: int, width: int, seed: int = 0,
                     params: SynthParams = SynthParams()) -> Path:
    """Write ``n_fields`` synthetic GridFiles and a manifest; returns the manifest path.

    Roles follow :func:`split_fields` so the split is fixed at generation time.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_idx, _ = split_fields(n_fields, seed)
    entries = []
    for i in range(n_fields):
        name = f"field_{i:04d}.sstg"
        field = synth_sst(height, width, seed * 100_003 + i, params)
        write_grid(out / name, field, params.t_min, params.t_max)
        entries.append(("train" if i in train_idx else "test", name))
    manifest = out / "manifest.txt"
    write_manifest(manifest, entries)
    return manifest


def load_dataset(manifest, r: int, patch: int = 48, stride: int | None = None, seed: int = 0):
    """Read a manifest's fields and tile them into ``(train, test)`` pairs, honouring the roles."""
    entries = read_manifest(manifest)
    fields = {"train": [], "test": []}
    for role, path in entries:
        g = read_grid(path)
        fields[role].append((path.name, g.data[0]))
    stride = patch if stride is None else stride
    train = _patches(fields["train"], range(len(fields["train"])), r, patch, stride)
    test = _patches(fields["test"], range(len(fields["test"])), r, patch, stride)
    order = np.random.default_rng(seed + 1).permutation(len(train))
    return [train[i] for i in order], test
