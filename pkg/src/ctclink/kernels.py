"""Receiver kernel selection.

Prefers the compiled extension and falls back to the pure-Python kernel
when the extension is unavailable.  Set CTCLINK_FORCE_PY_KERNEL=1 to force
the fallback (used by the equivalence tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("CTCLINK_FORCE_PY_KERNEL") == "1":
    _compiled = None
else:
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

receiver_scan = _kernels_py.receiver_scan if _compiled is None else _compiled.receiver_scan


def backend() -> str:
    """Name of the kernel in use: "compiled" or "python"."""
    return "python" if _compiled is None else "compiled"
