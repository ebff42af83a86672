"""BLAS thread-pool control.

The solvers issue long sequences of small block operations; on such
workloads a multithreaded BLAS spends more time spinning its pool up and
down than computing, and the distributed path already runs one worker
thread per rank.  ``set_blas_threads`` caps the pools of every BLAS
runtime it can find: whatever ``threadpoolctl`` detects, plus the
``scipy-openblas`` builds bundled with numpy and scipy wheels, whose
prefixed symbols some threadpoolctl versions do not recognize.
"""

from __future__ import annotations

import ctypes
import glob
import os

_SYMBOLS = (
    "scipy_openblas_set_num_threads64_",
    "scipy_openblas_set_num_threads_64_",
    "scipy_openblas_set_num_threads",
    "scipy_openblas_set_num_threads_",
    "openblas_set_num_threads",
)

_held_limits = None  # keeps threadpoolctl limits alive for the process


def _bundled_blas_paths():
    paths = []
    for module_name in ("numpy", "scipy"):
        try:
            module = __import__(module_name)
        except ImportError:
            continue
        libs_dir = os.path.join(os.path.dirname(module.__file__), "..", f"{module_name}.libs")
        paths.extend(glob.glob(os.path.join(libs_dir, "*openblas*.so*")))
    return paths


def set_blas_threads(count: int) -> int:
    """Cap every detected BLAS thread pool at ``count`` threads.

    Returns the number of runtimes that were adjusted.  Safe to call
    repeatedly; the setting persists for the process.
    """
    if count < 1:
        raise ValueError("thread count must be >= 1")
    adjusted = 0
    global _held_limits
    try:
        import threadpoolctl

        _held_limits = threadpoolctl.threadpool_limits(limits=count, user_api="blas")
        adjusted += len(threadpoolctl.threadpool_info())
    except Exception:  # noqa: BLE001 - purely best-effort
        pass
    for path in _bundled_blas_paths():
        try:
            lib = ctypes.CDLL(path)
        except OSError:
            continue
        for name in _SYMBOLS:
            fn = getattr(lib, name, None)
            if fn is not None:
                fn.argtypes = [ctypes.c_int]
                fn(count)
                adjusted += 1
                break
    return adjusted
