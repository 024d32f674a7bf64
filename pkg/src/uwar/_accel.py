"""
Numba switch.

Hot loops in :mod:`uwar.kernels` are compiled with ``numba.njit`` when numba
is importable and ``UWAR_DISABLE_NUMBA`` is unset (or ``0``).  Otherwise the
pure-numpy implementations are used.  The flag is read once at import time.
"""

import logging
import os

logger = logging.getLogger(__name__)

_flag = os.environ.get("UWAR_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("disabled by UWAR_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    logger.debug("numba unavailable: %s", exc)
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


__all__ = ["HAS_NUMBA", "njit"]
