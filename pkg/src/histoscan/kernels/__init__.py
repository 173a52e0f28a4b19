"""Backend selection for the scan recurrence kernels.

Prefers the compiled Cython extension and falls back to the numpy
implementation when the extension is unavailable.  Set HISTOSCAN_PURE_PY=1
to force the fallback (useful for benchmarking and debugging).
"""

import os

from . import _scan_py

if os.environ.get("HISTOSCAN_PURE_PY", "") not in ("", "0"):
    _impl = _scan_py
else:
    try:
        from . import _scan_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _scan_py

scan_forward = _impl.scan_forward
scan_backward = _impl.scan_backward


def backend() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return _impl.BACKEND


def get_impl(name: str):
    """Fetch a specific backend module by name (for equivalence tests)."""
    if name == "python":
        return _scan_py
    if name == "cython":
        from . import _scan_cy
        return _scan_cy
    raise ValueError(f"unknown kernel backend {name!r}")
