"""Pick the scan kernel implementation at import time.

The compiled extension is used when it was built; setting
``WMSR_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

from . import _scan_py

try:
    if os.environ.get("WMSR_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _scan_ext
except ImportError:
    _scan_ext = None

BACKENDS = {"python": _scan_py}
if _scan_ext is not None:
    BACKENDS["cython"] = _scan_ext

BACKEND = "cython" if _scan_ext is not None else "python"


def get(name: str | None = None):
    """Return the kernel module called ``name`` (default: the selected one)."""
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"scan backend {name!r} is not available; have {sorted(BACKENDS)}") from None
