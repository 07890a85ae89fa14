"""Sparse simplex transforms and adaptive monotonic attention.

Subpackages/modules:
  transforms - softmax / sparsemax / entmax forward evaluation
  grads      - analytic VJPs, the alpha derivative, FD oracles
  attention  - multi-head attention with pluggable per-head normalizers
  monotonic  - monotonic energy, hard decoding, expected alignment, L1 pruning
  toytrain   - synthetic tasks and a manual-backprop trainer
  cli        - command-line surface (transform/gradcheck/bench/train/attmap)
  backend    - numba/numpy kernel selection (ENTMONO_BACKEND)
"""

from entmono.backend import active_backend, use_backend
from entmono.transforms import (
    AlphaParameter,
    SparseDistribution,
    Temperature,
    entmax,
    entmax15_exact,
    entmax_bisect,
    softmax,
    sparsemax,
    tsallis_entropy,
)

__version__ = "0.1.0"
