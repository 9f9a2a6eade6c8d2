"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``GEPS_PURE_PYTHON=1`` to force the numpy path.  ``BACKEND`` names the
active implementation; both modules are importable for cross-checking via
:func:`implementation`.
"""

from __future__ import annotations

import os

import numpy as np

from geps.diffcore import _kernels_py

try:
    if os.environ.get("GEPS_PURE_PYTHON", "").strip() not in ("", "0"):
        raise ImportError("pure-python kernels requested")
    from geps.diffcore import _kernels as _compiled
except ImportError:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"


def implementation(name: str | None = None):
    """Module for ``"cython"``/``"python"``, or the active one for ``None``."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(name)


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def unfold1d(x, k: int):
    return _impl.unfold1d(_c(x), k)


def fold1d(cols, k: int, C: int):
    return _impl.fold1d(_c(cols), k, C)


def unfold2d(x, k: int):
    return _impl.unfold2d(_c(x), k)


def fold2d(cols, k: int, H: int, W: int, C: int):
    return _impl.fold2d(_c(cols), k, H, W, C)


def gray_scott_rhs(u, v, F, kill, Du, Dv, inv_ds2):
    return _impl.gray_scott_rhs(_c(u), _c(v), float(F), float(kill), float(Du),
                                float(Dv), float(inv_ds2))
