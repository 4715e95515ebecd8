"""Kernel selection: the compiled module when importable, else pure Python.

Set ``LIE_SVI_PURE=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("LIE_SVI_PURE", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = "pure" if kernels is _kernels_py else "compiled"


def get(name: str):
    """Kernel module by backend name, for benchmarks and cross-checks."""
    if name == "pure":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
