"""The full super-resolution network and its analytic size/cost model."""

from __future__ import annotations

import numpy as np

from ..numerics import as_tensor, pixel_shuffle
from ..numerics.ops import ShapeError
from ..sscan import SsmParams
from .blocks import ModuleList, PDConv, ResidualGroup
from .config import ModelConfig
from .module import Conv2d, Module

# Reference figures reported for the 4-group x 4-block model, keyed by channel count.
TABLE_CHANNELS = {
    32: ("3.799G", "173.051k"),
    48: ("10.720G", "376.299k"),
    64: ("23.689G", "657.302K"),
    96: ("78.582G", "1453K"),
    128: ("194.638G", "2560K"),
}
# keyed by (groups, blocks_per_group) at 64 channels
TABLE_BLOCKS = {
    (2, 2): ("6.191G", "177.371K"),
    (2, 4): ("12.024G", "337.321K"),
    (4, 2): ("12.180G", "329.724K"),
    (4, 4): ("23.689G", "657.371K"),
    (6, 2): ("17.856G", "497.343K"),
    (6, 4): ("35.354G", "977.261K"),
}

MIN_SIZE = 8


class WMSR(Module):
    """Shallow conv, residual WAM groups, global residual, conv + pixel shuffle + conv.

    Maps ``(B, 1, H, W)`` to ``(B, 1, r*H, r*W)`` for even ``H, W >= 8``.
    """

    def __init__(self, cfg: ModelConfig, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c, r = cfg.channels, cfg.scale
        self.head = Conv2d(1, c, rng, dtype=dtype)
        self.groups = ModuleList(ResidualGroup(cfg, rng, dtype) for _ in range(cfg.groups))
        self.up = Conv2d(c, r * r * c, rng, dtype=dtype)
        self.tail = Conv2d(c, 1, rng, dtype=dtype)

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, H, W) input, got {x.shape}")
        h, w = x.shape[-2:]
        if h % 2 or w % 2 or h < MIN_SIZE or w < MIN_SIZE:
            raise ShapeError(f"input spatial size must be even and >= {MIN_SIZE}, got {h}x{w}")
        fs = self.head(x)
        fd = fs
        for grp in self.groups:
            fd = grp(fd)
        return self.tail(pixel_shuffle(self.up(fs + fd), self.cfg.scale))

    def pdconvs(self):
        return [m for m in self.modules() if isinstance(m, PDConv)]

    def fuse(self) -> "WMSR":
        """Re-parameterize every PDConv into a single kernel (inference form)."""
        for m in self.pdconvs():
            m.fuse()
        return self

    @property
    def fused(self) -> bool:
        convs = self.pdconvs()
        return bool(convs) and all(m.fused for m in convs)


# ------------------------------------------------------------ analytic counts

def _conv(cin, cout, k=3):
    return cout * cin * k * k + cout


def _dw(c, k=3):
    return c * k * k + c


def _lin(cin, cout):
    return cin * cout + cout


def _ln(c):
    return 2 * c


def _scan(d, n):
    r = SsmParams.dt_rank(d)
    return d * n + d + 2 * n * d + r * d + d * r + d


def _pdc(c, use_pdc, fused):
    if fused:
        return _dw(c)
    return c * (9 + 9 + 8 + 6 + 6) + c if use_pdc else _dw(c)


def analytic_param_count(cfg: ModelConfig, fused: bool = False) -> int:
    """Closed-form parameter count, layer by layer, independent of the modules."""
    c, e, n = cfg.channels, cfg.vssm_expand * cfg.channels, cfg.ssm_state
    vssm = _lin(c, e) + _dw(e) + _ln(e) + _lin(c, e) + _lin(e, c)
    if cfg.use_ssm2d:
        vssm += 4 * _scan(e, n)
    ffn = _ln(c) + _dw(c) + _lin(c // 2, c)
    lfssm = _ln(c) + vssm + ffn if cfg.use_lfssm else 0
    if cfg.use_dwt:
        hfem = _lin(c, 3 * c) + _dw(3 * c) + _lin(3 * c, 3 * c) + _pdc(3 * c, cfg.use_pdc, fused)
        wam = lfssm + (hfem if cfg.use_hfem else 0) + _conv(4 * c, 4 * c)
    else:
        wam = lfssm + _conv(c, c)
    group = cfg.blocks_per_group * wam + _conv(c, c)
    r = cfg.scale
    return _conv(1, c) + cfg.groups * group + _conv(c, r * r * c) + _conv(c, 1)


def estimate_flops(cfg: ModelConfig, height: int = 48, width: int = 48) -> int:
    """Rough multiply-add count (x2) for one ``height x width`` low-resolution input.

    Diagnostic only: counts convolutions, projections and the scan recurrence,
    ignores elementwise work.
    """
    c, e, n = cfg.channels, cfg.vssm_expand * cfg.channels, cfg.ssm_state
    hw = height * width
    low = hw // 4 if cfg.use_dwt else hw
    macs = hw * c * 9  # head
    scan = 0
    if cfg.use_ssm2d:
        r = SsmParams.dt_rank(e)
        scan = 4 * low * (2 * n * e + r * e * 2 + 3 * e * n)
    vssm = low * (2 * c * e + 9 * e + e * c) + scan
    ffn = low * (9 * c + c // 2 * c)
    lfssm = vssm + ffn if cfg.use_lfssm else 0
    if cfg.use_dwt:
        hfem = low * (3 * c * c + 27 * c + 9 * c * c + 27 * c) if cfg.use_hfem else 0
        wam = lfssm + hfem + low * (4 * c) * (4 * c) * 9
    else:
        wam = lfssm + hw * c * c * 9
    macs += cfg.groups * (cfg.blocks_per_group * wam + hw * c * c * 9)
    macs += hw * c * cfg.scale ** 2 * c * 9
    macs += hw * cfg.scale ** 2 * c * 9
    return 2 * macs


def format_count(n: int) -> str:
    return f"{n / 1e3:.3f}K"


def format_flops(f: int) -> str:
    return f"{f / 1e9:.3f}G"


def table_reference(cfg: ModelConfig) -> dict:
    """Published FLOPs/params for a matching configuration, if any (report only)."""
    ref = {}
    if cfg.groups == 4 and cfg.blocks_per_group == 4 and cfg.channels in TABLE_CHANNELS:
        ref["channels_table"] = TABLE_CHANNELS[cfg.channels]
    if cfg.channels == 64 and (cfg.groups, cfg.blocks_per_group) in TABLE_BLOCKS:
        ref["blocks_table"] = TABLE_BLOCKS[(cfg.groups, cfg.blocks_per_group)]
    return ref


def build(cfg: ModelConfig, dtype=None) -> WMSR:
    dt = np.dtype(dtype or cfg.dtype)
    return WMSR(cfg, dt.type)

