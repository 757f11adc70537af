"""Pin BLAS to one thread before numpy loads anywhere.

Multi-threaded GEMM reorders float accumulation and breaks the
byte-identical rerun guarantees the reproducibility tests check.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
