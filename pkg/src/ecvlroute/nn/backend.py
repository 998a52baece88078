"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy kernels
take over with identical semantics. Set ECVL_KERNELS=python or
ECVL_KERNELS=compiled to force a choice (the latter raises if the extension
is missing, so CI can prove it was exercised).
"""
from __future__ import annotations

import os

from . import kernels_py

_forced = os.environ.get("ECVL_KERNELS", "").lower()

if _forced == "python":
    kernels = kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _compiled
        kernels = _compiled
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        kernels = kernels_py
        BACKEND = "python"
