"""Optimal-transport mesh adaptation by a mixed finite element Monge-Ampere solver.

Importing the package tunes glibc's allocator (see :func:`tune_allocator`);
set ``OTMESH_MALLOPT=0`` to leave it alone.
"""
from __future__ import annotations

import ctypes
import os
import sys

__version__ = "0.1.0"

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(mmap_threshold: int = 256 << 20, trim_threshold: int = 512 << 20) -> bool:
    """Keep large NumPy temporaries on the heap instead of fresh ``mmap`` pages.

    Every solver iteration allocates and frees arrays of several megabytes.
    With glibc defaults each of these is a new mapping whose pages are faulted
    in and zeroed again, a cost that grows faster than the mesh once arrays
    fall out of cache. Returns True when the settings were applied.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, int(mmap_threshold))
        ok &= libc.mallopt(_M_TRIM_THRESHOLD, int(trim_threshold))
    except (OSError, AttributeError):  # not glibc
        return False
    return bool(ok)


if os.environ.get("OTMESH_MALLOPT", "1") != "0":
    tune_allocator()
