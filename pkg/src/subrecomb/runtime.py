"""Process-level tuning for long training runs."""

import ctypes
import ctypes.util
import logging

log = logging.getLogger(__name__)

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def retain_freed_memory():
    """Ask glibc to keep freed large blocks in the heap instead of unmapping them.

    Training allocates and frees the same large im2col scratch arrays many
    times; on systems where first-touch page faults are expensive, reusing
    heap pages roughly halves the step time. Returns True when applied.
    No-op on non-glibc platforms.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30) and libc.mallopt(_M_TRIM_THRESHOLD, (1 << 31) - 1)
    except (OSError, AttributeError):
        return False
    log.debug("allocator tuning %s", "applied" if ok else "rejected")
    return bool(ok)
