"""Wavelet-assisted selective-scan super-resolution for gridded SST fields."""

__version__ = "0.1.0"
