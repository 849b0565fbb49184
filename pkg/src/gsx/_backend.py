"""Kernel backend selection.

Hot loops (rasterization, KNN) have two implementations: numba @njit
kernels and a pure-numpy fallback. Set ``GSX_NO_NUMBA=1`` to force the
fallback; it is also used automatically when numba is not importable.
Both paths compute identical arithmetic in identical order.
"""

from __future__ import annotations

import os


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
        return True
    except ImportError:
        return False


def use_numba() -> bool:
    if os.environ.get("GSX_NO_NUMBA", "").strip() not in ("", "0"):
        return False
    return numba_available()
