"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: the compiled
Cython core (`irwatch._fastkernels`) and the numpy fallback
(`irwatch.kernels_py`). The compiled one is preferred when importable;
IRWATCH_KERNELS=python|compiled|auto overrides the choice at import time,
and `use()` switches at runtime (mainly for tests and benchmarks).
"""
from __future__ import annotations

import os

from . import kernels_py

_BACKENDS: dict[str, object] = {"python": kernels_py}

try:
    from . import _fastkernels  # type: ignore[attr-defined]

    _BACKENDS["compiled"] = _fastkernels
except ImportError:
    pass


def available() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def _initial_name() -> str:
    requested = os.environ.get("IRWATCH_KERNELS", "auto")
    if requested == "auto":
        return "compiled" if "compiled" in _BACKENDS else "python"
    if requested not in _BACKENDS:
        raise RuntimeError(
            f"IRWATCH_KERNELS={requested!r} but available backends are {available()}"
        )
    return requested


_active_name = _initial_name()


def use(name: str) -> None:
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available()}")
    _active_name = name


def active_name() -> str:
    return _active_name


def active():
    return _BACKENDS[_active_name]


def get(name: str):
    return _BACKENDS[name]
