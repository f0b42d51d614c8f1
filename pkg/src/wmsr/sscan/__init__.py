"""Selective state-space scans (1-D recurrence and four-direction 2-D unfolding)."""

from . import kernels
from .core import (
    DIRECTIONS,
    ScanOrder,
    SsmParams,
    directional_scan,
    discretize,
    selective_scan,
    selective_scan_1d,
    ssm_2d,
)

__all__ = [
    "DIRECTIONS", "ScanOrder", "SsmParams", "directional_scan", "discretize", "kernels",
    "selective_scan", "selective_scan_1d", "ssm_2d",
]
