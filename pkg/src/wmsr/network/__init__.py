"""Network assembly: blocks, the full model, its configuration and size model."""

from .blocks import HFEM, LFSSM, SS2D, VSSM, WAM, GatedFFN, ModuleList, PDConv, ResidualGroup
from .config import ConfigError, ModelConfig
from .model import (
    WMSR,
    analytic_param_count,
    build,
    estimate_flops,
    format_count,
    format_flops,
    table_reference,
)
from .module import Conv2d, DWConv, LayerNorm, Linear, Module

__all__ = [
    "HFEM", "LFSSM", "SS2D", "VSSM", "WAM", "GatedFFN", "ModuleList", "PDConv", "ResidualGroup",
    "ConfigError", "ModelConfig", "WMSR", "analytic_param_count", "build", "estimate_flops",
    "format_count", "format_flops", "table_reference", "Conv2d", "DWConv", "LayerNorm", "Linear",
    "Module",
]
