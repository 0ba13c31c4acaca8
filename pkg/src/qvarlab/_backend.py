"""Kernel backend selection.

``QVARLAB_DISABLE_NUMBA=1`` forces the pure-numpy code paths.
``QVARLAB_THREADS`` caps worker parallelism (0 or unset = auto). Results never
depend on its value: every parallel loop writes per-row partials that are
reduced in a fixed order afterwards.
"""
import os


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


def requested_threads():
    raw = os.environ.get("QVARLAB_THREADS", "").strip()
    if not raw:
        return 0
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"QVARLAB_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise ValueError(f"QVARLAB_THREADS must be >= 0, got {value}")
    return value


_threads = requested_threads()
if _threads > 0:
    # numba reads this once at import time
    os.environ.setdefault("NUMBA_NUM_THREADS", str(_threads))

USE_NUMBA = False
if not _env_flag("QVARLAB_DISABLE_NUMBA"):
    try:
        import numba

        USE_NUMBA = True
        # prefer OpenMP; some TBB builds are too old and only warn
        if "NUMBA_THREADING_LAYER" not in os.environ:
            numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    except ImportError:  # pragma: no cover
        numba = None

if USE_NUMBA:
    njit = numba.njit
    prange = numba.prange
    if _threads > 0:
        numba.set_num_threads(min(_threads, numba.config.NUMBA_NUM_THREADS))
else:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range

BACKEND = "numba" if USE_NUMBA else "numpy"


def worker_count():
    """Thread count for python-level pools (path generation)."""
    if _threads > 0:
        return _threads
    return max(1, os.cpu_count() or 1)
