"""Backend selection for the numeric hot kernels.

``SLIDEKIT_BACKEND`` picks the implementation at import time:

* ``auto`` (default) — numba if it imports, else pure numpy;
* ``numba``          — require the compiled kernels;
* ``numpy``          — force the pure-numpy fallback.

Both backends satisfy the same contracts (see ``_numpy``); results agree to
floating-point noise and each backend is bit-deterministic on its own.
``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os

from ..errors import ConfigError

BACKEND_ENV = "SLIDEKIT_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "auto").strip().lower() or "auto"
if _requested not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"{BACKEND_ENV}={_requested!r} is not one of auto/numba/numpy"
    )

if _requested == "numpy":
    from . import _numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy as _impl

        BACKEND = "numpy"

pool_sum = _impl.pool_sum
pool_max = _impl.pool_max
weighted_rowsum = _impl.weighted_rowsum
relu = _impl.relu
relu_bwd = _impl.relu_bwd
gelu = _impl.gelu
gelu_bwd = _impl.gelu_bwd
silu_gate = _impl.silu_gate
silu_gate_bwd = _impl.silu_gate_bwd
stable_softmax = _impl.stable_softmax
softmax_xent = _impl.softmax_xent
adamw_update = _impl.adamw_update

__all__ = [
    "BACKEND",
    "BACKEND_ENV",
    "pool_sum",
    "pool_max",
    "weighted_rowsum",
    "relu",
    "relu_bwd",
    "gelu",
    "gelu_bwd",
    "silu_gate",
    "silu_gate_bwd",
    "stable_softmax",
    "softmax_xent",
    "adamw_update",
]
