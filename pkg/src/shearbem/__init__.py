"""Galerkin boundary elements for the frequency-domain Smoluchowski equation under shear."""
import os

# the TBB layer shipped in some environments is too old; OpenMP is always present
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
