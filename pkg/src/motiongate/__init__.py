"""Selfie-capture motion traces as spoof-screening and user-verification scores."""

import os

# the bundled TBB is too old for numba; OpenMP avoids a warning on every import
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
