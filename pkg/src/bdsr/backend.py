"""Hot-kernel backend selection.

Two interchangeable kernel implementations exist:

* ``numpy`` — BLAS/FFT based; the default. On typical hosts the large
  upscaling kernels (17x17, 33x33) run several times faster through BLAS
  and the FFT than through jitted scalar loops (see benchmarks/).
* ``numba`` — @njit loop kernels; opt in with ``BDSR_BACKEND=numba``.
  Useful where numpy is built without a tuned BLAS, and as a second
  independent fast path for the equivalence tests.

The flag is read once at import. Both backends satisfy the same contracts
and are tested against the brute-force references; numeric results differ
only below 1e-10.
"""

import os

from . import _kernels_numpy
from .errors import ConfigError

ENV_VAR = "BDSR_BACKEND"

_numba_import_error = None
try:
    from . import _kernels_numba
except ImportError as exc:  # numba not installed
    _kernels_numba = None
    _numba_import_error = exc


def numba_available():
    return _kernels_numba is not None


def _resolve():
    choice = os.environ.get(ENV_VAR, "numpy").strip().lower()
    if choice in ("", "numpy"):
        return _kernels_numpy, "numpy"
    if choice == "numba":
        if _kernels_numba is None:
            raise ConfigError(
                f"{ENV_VAR}=numba but numba is not importable: {_numba_import_error}")
        return _kernels_numba, "numba"
    raise ConfigError(f"{ENV_VAR} must be 'numpy' or 'numba', got {choice!r}")


_impl, ACTIVE = _resolve()

xcorr_valid = _impl.xcorr_valid
corr_weights = _impl.corr_weights
raw_fill = _impl.raw_fill


def set_num_threads(n):
    """Cap worker parallelism. Affects numba's thread pool; the numpy
    backend's BLAS pool is fixed at process start (OPENBLAS_NUM_THREADS).
    Results are identical at any thread count."""
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    if ACTIVE == "numba":
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
