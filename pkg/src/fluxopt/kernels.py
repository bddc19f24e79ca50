"""Backend selection for the face-wise proximal kernels.

The compiled extension ``_kernels`` is used when it was built; otherwise,
or when ``FLUXOPT_PURE_PYTHON`` is set to a non-empty value other than
``0``, the NumPy implementation in ``_kernels_py`` is used.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

__all__ = ["BACKEND", "l1_threshold", "prox_linf", "prox_power", "get_backend"]


def _load():
    if os.environ.get("FLUXOPT_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _kernels_py, "python"
    return _kernels, "compiled"


_impl, BACKEND = _load()


def get_backend(name: str | None = None):
    """Kernel module by name (``"compiled"`` or ``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _vec(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def prox_power(v, t, a):
    return _impl.prox_power(_vec(v), float(t), float(a))


def prox_linf(v, t, weights):
    return _impl.prox_linf(_vec(v), float(t), _vec(weights))


def l1_threshold(u, weights, radius):
    return _impl.l1_threshold(_vec(u), _vec(weights), float(radius))
