"""Kernel backend selection.

Two interchangeable kernel sets exist: a numba-jitted one and a pure-numpy
one.  The active set is chosen once at import from the ENTMONO_BACKEND
environment variable ("numba" or "numpy"); unset means numba when it is
importable, numpy otherwise.  `use_backend` switches at runtime (tests
exercise both).
"""

from __future__ import annotations

import os

_ENV_VAR = "ENTMONO_BACKEND"
_VALID = ("numba", "numpy")

_active: str | None = None


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _resolve_default() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested:
        if requested not in _VALID:
            raise ValueError(
                f"{_ENV_VAR} must be one of {_VALID}, got {requested!r}"
            )
        if requested == "numba" and not numba_available():
            raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
        return requested
    return "numba" if numba_available() else "numpy"


def active_backend() -> str:
    """Name of the kernel set currently in use."""
    global _active
    if _active is None:
        _active = _resolve_default()
    return _active


def use_backend(name: str) -> None:
    """Switch kernel sets at runtime.  Raises if `name` is unusable."""
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    _active = name
