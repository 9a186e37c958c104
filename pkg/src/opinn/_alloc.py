"""Keep freed heap memory mapped between training steps.

Every recorded operation allocates arrays of a few hundred kB. With glibc's
default thresholds these are served by fresh ``mmap`` calls and returned to
the OS on free, so each op pays for page faults. Raising the thresholds
roughly halves the cost of a training step. No-op on other allocators.
"""

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def keep_heap_mapped(mmap_threshold: int = 1 << 28, trim_threshold: int = 1 << 29) -> bool:
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"))
        mallopt = libc.mallopt
    except (OSError, AttributeError, TypeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, mmap_threshold) == 1 and mallopt(_M_TRIM_THRESHOLD, trim_threshold) == 1
    _done = ok
    return ok
