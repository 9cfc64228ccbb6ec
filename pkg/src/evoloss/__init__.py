"""Evolved multi-modal self-supervised loss weighting on synthetic clip data."""

import os

# Results must be bit-reproducible regardless of machine load or worker count,
# so BLAS-level threading is pinned before numpy is first imported. Our own
# parallelism lives at the fitness-evaluation level instead.
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del os, _var

__version__ = "0.1.0"
