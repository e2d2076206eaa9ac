import os

# Pin BLAS to one thread before numpy loads: timing criteria are single-core
# and reductions stay bit-reproducible.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import sys

sys.path.insert(0, os.path.dirname(__file__))
