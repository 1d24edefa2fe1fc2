"""Shared test environment.

BLAS thread pools are pinned to one thread before numpy loads: the timing
assertions (cost flatness, one-step vs full-optimization ratios) measure
per-batch work on small matrices, where thread fan-out adds noise without
speed.  Numerical results do not depend on this.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
