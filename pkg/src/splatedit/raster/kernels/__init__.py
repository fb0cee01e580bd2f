"""Kernel backend selection: compiled Cython core with a numpy fallback.

The choice is made once at import from SPLATEDIT_BACKEND (auto | compiled |
python); callers may also pass an explicit backend name per render.
"""

from __future__ import annotations

import os

from . import cpu

_COMPILED = None
_IMPORT_ERROR = None
try:
    from . import _core as _COMPILED
except ImportError as exc:  # pragma: no cover - depends on build
    _IMPORT_ERROR = exc

_MODE = os.environ.get("SPLATEDIT_BACKEND", "auto").lower()
if _MODE not in ("auto", "compiled", "python"):
    raise RuntimeError(f"SPLATEDIT_BACKEND={_MODE!r} not in auto|compiled|python")
if _MODE == "compiled" and _COMPILED is None:
    raise RuntimeError(f"compiled kernels requested but unavailable: {_IMPORT_ERROR}")

_DEFAULT = cpu if _MODE == "python" or _COMPILED is None else _COMPILED


def get_backend(name: str | None = None):
    if name is None or name == "auto":
        return _DEFAULT
    if name == "python":
        return cpu
    if name == "compiled":
        if _COMPILED is None:
            raise RuntimeError(f"compiled kernels unavailable: {_IMPORT_ERROR}")
        return _COMPILED
    raise ValueError(f"unknown backend {name!r}")


def active_backend_name() -> str:
    return _DEFAULT.NAME


def compiled_available() -> bool:
    return _COMPILED is not None
