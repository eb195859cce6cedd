"""OFDM sensing simulation and delay-Doppler target classification."""

import os

# Single-threaded BLAS: faster for this engine's small batched GEMMs and
# one less source of run-to-run variation.  Export the variable to override.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

__version__ = "0.1.0"
