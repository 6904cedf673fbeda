"""Backend selection for the hot kernels.

The compiled extension is used when it imports; ``SIZEPOP_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SIZEPOP_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

trace_representation = _impl.trace_representation
linear_recurrence = _impl.linear_recurrence


def get_backend(name: str | None = None):
    """Return the kernel module by name (``"cython"`` or ``"python"``)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
