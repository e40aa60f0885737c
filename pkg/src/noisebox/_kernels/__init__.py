"""Scan kernel backend, chosen at import.

The compiled extension is used when it was built; ``NOISEBOX_KERNELS=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import scan_py

BACKEND = "python"
_compiled = None

if os.environ.get("NOISEBOX_KERNELS", "").lower() != "python":
    try:
        from . import scan_c as _compiled  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _compiled = None


_active: str | None = None


def get_backend(name: str | None = None):
    """Return the module implementing ``scan_seq``/``scan_chunked``."""
    name = name or _active or BACKEND
    if name == "python":
        return scan_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled scan kernels are not built (pip install -e .)")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def scan_seq(a, x):
    return get_backend().scan_seq(a, x)


def scan_chunked(a, x, chunk: int):
    return get_backend().scan_chunked(a, x, chunk)


@contextmanager
def use_backend(name: str | None):
    """Temporarily route scans through ``name`` (None keeps the current choice)."""
    global _active
    if name is None:
        yield
        return
    get_backend(name)
    prev, _active = _active, name
    try:
        yield
    finally:
        _active = prev
