"""Building blocks: gated FFN, VSSM, LFSSM, PDConv, HFEM and the WAM block."""

from __future__ import annotations

import numpy as np

from .. import pdconv as pdc
from ..numerics import Tensor, chunk, concat, sigmoid, silu, slice_channels
from ..numerics.ops import ShapeError
from ..sscan import DIRECTIONS, SsmParams, ssm_2d
from ..wavelet import dwt_packed, idwt_packed
from .module import Conv2d, DWConv, LayerNorm, Linear, Module, kaiming_normal, param


class ModuleList(Module):
    def __init__(self, items):
        super().__init__()
        self._items = list(items)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class ScanParams(Module):
    """Registers the tensors of one :class:`SsmParams` as module parameters."""

    def __init__(self, d, n, rng, dtype=np.float64):
        super().__init__()
        for name, t in zip(
            ("A_log", "D", "W_B", "W_C", "W_dt_down", "W_dt_up", "b_dt"),
            SsmParams.init(d, n, rng, dtype).tensors(),
        ):
            setattr(self, name, t)

    def params(self) -> SsmParams:
        return SsmParams(self.A_log, self.D, self.W_B, self.W_C, self.W_dt_down, self.W_dt_up, self.b_dt)


class SS2D(Module):
    """Four independently parameterized raster-order scans, averaged."""

    def __init__(self, d, n, rng, dtype=np.float64):
        super().__init__()
        self.dirs = ModuleList(ScanParams(d, n, rng, dtype) for _ in DIRECTIONS)

    def forward(self, x):
        return ssm_2d(x, [m.params() for m in self.dirs])


class GatedFFN(Module):
    """LN -> depthwise 3x3 -> split -> sigmoid(z1) * z2 -> linear back to C."""

    def __init__(self, c, rng, dtype=np.float64):
        super().__init__()
        if c % 2:
            raise ShapeError(f"GatedFFN needs an even channel count, got {c}")
        self.norm = LayerNorm(c, dtype=dtype)
        self.dw = DWConv(c, rng, dtype=dtype)
        self.proj = Linear(c // 2, c, rng, dtype=dtype)

    def forward(self, z):
        z1, z2 = chunk(self.dw(self.norm(z)), 2)
        return self.proj(sigmoid(z1) * z2)


class VSSM(Module):
    def __init__(self, c, expand, n, rng, use_ssm2d=True, dtype=np.float64):
        super().__init__()
        e = expand * c
        self.in_scan = Linear(c, e, rng, dtype=dtype)
        self.dw = DWConv(e, rng, dtype=dtype)
        self.ssm = SS2D(e, n, rng, dtype) if use_ssm2d else None
        self.norm = LayerNorm(e, dtype=dtype)
        self.in_gate = Linear(c, e, rng, dtype=dtype)
        self.out = Linear(e, c, rng, dtype=dtype)

    def forward(self, x):
        x1 = silu(self.dw(self.in_scan(x)))
        if self.ssm is not None:
            x1 = self.ssm(x1)
        x1 = self.norm(x1)
        x2 = silu(self.in_gate(x))
        return self.out(x1 * x2)


class LFSSM(Module):
    def __init__(self, c, expand, n, rng, use_ssm2d=True, dtype=np.float64):
        super().__init__()
        self.norm = LayerNorm(c, dtype=dtype)
        self.vssm = VSSM(c, expand, n, rng, use_ssm2d, dtype)
        self.ffn = GatedFFN(c, rng, dtype)

    def forward(self, f):
        z = self.vssm(self.norm(f)) + f
        return self.ffn(z) + z


class PDConv(Module):
    """Depthwise five-branch pixel-difference convolution; can be fused in place."""

    def __init__(self, c, rng, use_pdc=True, dtype=np.float64, padding="replicate"):
        super().__init__()
        self.channels = c
        self.padding = padding
        self.kinds = pdc.KINDS if use_pdc else ("vanilla",)
        for kind in self.kinds:
            spec = pdc.SPECS[kind]
            setattr(self, f"w_{kind}", param(kaiming_normal(rng, (c, 1, spec.n_taps), 9), dtype))
        self.bias = param(np.zeros(c), dtype)
        self.fused = False

    def branches(self):
        return [(pdc.SPECS[k], getattr(self, f"w_{k}")) for k in self.kinds]

    def forward(self, x):
        if self.fused:
            return pdc.fused_conv(x, self.weight, self.bias, depthwise=True, padding=self.padding)
        return pdc.branch_sum(x, self.branches(), self.bias, depthwise=True, padding=self.padding)

    def fuse(self) -> None:
        """Replace the branches by one float64 depthwise kernel."""
        if self.fused:
            return
        fk = pdc.fuse([(s, np.asarray(w.data, dtype=np.float64)) for s, w in self.branches()])
        bias = self.bias
        for k in self.kinds:
            del self._params[f"w_{k}"]
            object.__delattr__(self, f"w_{k}")
        del self._params["bias"]
        self.weight = Tensor(fk.kernel, requires_grad=True)
        self.bias = Tensor(np.asarray(bias.data, dtype=np.float64), requires_grad=True)
        self.fused = True


class HFEM(Module):
    """Gate the high bands with the transformed low-frequency features."""

    def __init__(self, c, rng, use_pdc=True, dtype=np.float64):
        super().__init__()
        self.channels = c
        self.lin_low = Linear(c, 3 * c, rng, dtype=dtype)
        self.dw = DWConv(3 * c, rng, dtype=dtype)
        self.lin_high = Linear(3 * c, 3 * c, rng, dtype=dtype)
        self.pdc = PDConv(3 * c, rng, use_pdc, dtype)

    def forward(self, f_l, f_wh):
        if f_wh.shape[1] != 3 * f_l.shape[1]:
            raise ShapeError(
                f"HFEM: high bands have {f_wh.shape[1]} channels, expected 3 x {f_l.shape[1]}"
            )
        x = self.dw(self.lin_low(f_l))
        gate = sigmoid(self.pdc(self.lin_high(f_wh)))
        return gate * x


class WAM(Module):
    """Wavelet-assisted block: DWT, LFSSM on LL, HFEM on LH/HL/HH, fuse, refine, IDWT, residual."""

    def __init__(self, cfg, rng, dtype=np.float64):
        super().__init__()
        c = cfg.channels
        self.c = c
        self.use_dwt = cfg.use_dwt
        self.lfssm = LFSSM(c, cfg.vssm_expand, cfg.ssm_state, rng, cfg.use_ssm2d, dtype) if cfg.use_lfssm else None
        if cfg.use_dwt:
            self.hfem = HFEM(c, rng, cfg.use_pdc, dtype) if cfg.use_hfem else None
            # zero start: the block is the identity at init (the band product is quadratic)
            self.refine = Conv2d(4 * c, 4 * c, rng, dtype=dtype, zero_init=True)
        else:
            self.hfem = None
            self.refine = Conv2d(c, c, rng, dtype=dtype, zero_init=True)

    def forward(self, x):
        if not self.use_dwt:
            f = self.lfssm(x) if self.lfssm is not None else x
            return x + self.refine(f)
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ShapeError(f"WAM block needs even spatial dims, got {h}x{w}")
        c = self.c
        bands = dwt_packed(x)
        ll = slice_channels(bands, 0, c)
        high = slice_channels(bands, c, 4 * c)
        fo = self.lfssm(ll) if self.lfssm is not None else ll
        fg = self.hfem(fo, high) if self.hfem is not None else high
        fused = concat([fo, fg * concat([fo, fo, fo])])
        return x + idwt_packed(self.refine(fused))


class ResidualGroup(Module):
    def __init__(self, cfg, rng, dtype=np.float64):
        super().__init__()
        self.blocks = ModuleList(WAM(cfg, rng, dtype) for _ in range(cfg.blocks_per_group))
        self.conv = Conv2d(cfg.channels, cfg.channels, rng, dtype=dtype)

    def forward(self, x):
        y = x
        for blk in self.blocks:
            y = blk(y)
        return x + self.conv(y)
