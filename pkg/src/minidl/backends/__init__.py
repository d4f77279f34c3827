"""Backend registry.

Two implementations of one kernel set: "reference" (naive float64, the
oracle) and "optimized" (numba contractions + vectorized numpy, float32
friendly). Instances are cached; `get_backend` is how the rest of the
package obtains kernels.
"""

from __future__ import annotations

from ..errors import ConfigError
from .base import EW_BINARY, EW_UNARY, Backend, FusedStep
from .optimized import ENV_DISABLE_NUMBA, OptimizedBackend
from .reference import ReferenceBackend

BACKEND_NAMES = ("reference", "optimized")

_instances: dict[str, Backend] = {}


def get_backend(name: str) -> Backend:
    if name not in BACKEND_NAMES:
        raise ConfigError(f"unknown backend {name!r}; expected one of {BACKEND_NAMES}")
    if name not in _instances:
        _instances[name] = ReferenceBackend() if name == "reference" else OptimizedBackend()
    return _instances[name]


def reset_backends() -> None:
    """Drop cached instances (used by tests that flip the numba env flag)."""
    _instances.clear()


__all__ = [
    "BACKEND_NAMES",
    "ENV_DISABLE_NUMBA",
    "EW_BINARY",
    "EW_UNARY",
    "Backend",
    "FusedStep",
    "OptimizedBackend",
    "ReferenceBackend",
    "get_backend",
    "reset_backends",
]
