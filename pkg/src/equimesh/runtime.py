"""Process-level tuning that does not affect numerics."""

from __future__ import annotations

import ctypes
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
# glibc caps the mmap threshold at 32 MiB on 64-bit systems
_THRESHOLD = 32 * 1024 * 1024

_tuned = False


def tune_allocator() -> bool:
    """Keep freed multi-megabyte buffers in the heap instead of returning them to the OS.

    The autodiff engine allocates many short-lived arrays of a few MB; by
    default glibc maps and unmaps each one, and the page faults cost more than
    the arithmetic. Returns whether the setting took effect (glibc only).
    """
    global _tuned
    if _tuned:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    ok = libc.mallopt(_M_MMAP_THRESHOLD, _THRESHOLD) == 1 and libc.mallopt(_M_TRIM_THRESHOLD, 4 * _THRESHOLD) == 1
    _tuned = ok
    return ok
