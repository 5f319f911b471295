"""Selects the compiled evaluation kernels when available.

Set PROGSYNTH_BACKEND=python to force the pure-numpy implementation (the
benchmark and the parity tests use this).
"""
from __future__ import annotations

import os

from . import _kernels_py

_FORCED = os.environ.get("PROGSYNTH_BACKEND", "").lower()

if _FORCED in ("", "compiled", "c"):
    try:
        from . import _speedups as _impl
        BACKEND = "compiled"
    except ImportError:
        if _FORCED:
            raise
        _impl = _kernels_py
        BACKEND = "python"
elif _FORCED == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    raise RuntimeError(f"unknown PROGSYNTH_BACKEND value {_FORCED!r}")

gp_cov = _impl.gp_cov
block_row_logliks = _impl.block_row_logliks

OP_CONST = _kernels_py.OP_CONST
OP_WN = _kernels_py.OP_WN
OP_LIN = _kernels_py.OP_LIN
OP_SE = _kernels_py.OP_SE
OP_PER = _kernels_py.OP_PER
OP_ADD = _kernels_py.OP_ADD
OP_MUL = _kernels_py.OP_MUL
OP_CP = _kernels_py.OP_CP

KIND_NUMERIC = _kernels_py.KIND_NUMERIC
KIND_COUNT = _kernels_py.KIND_COUNT
KIND_NOMINAL = _kernels_py.KIND_NOMINAL
