import numpy as np
import pytest

from slidekit import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Trigger any JIT compilation up front so timed tests measure steady state.
    x = np.linspace(-1.0, 1.0, 8)
    mat = np.arange(6.0).reshape(3, 2)
    kernels.pool_sum(mat)
    kernels.pool_max(mat)
    kernels.weighted_rowsum(mat, np.full(3, 1.0 / 3.0))
    kernels.relu(x)
    kernels.relu_bwd(x, x)
    kernels.gelu(x)
    kernels.gelu_bwd(x, x)
    kernels.silu_gate(x[:4], x[4:])
    kernels.silu_gate_bwd(x[:4], x[4:], x[:4])
    kernels.stable_softmax(x)
    kernels.softmax_xent(x, 0)
    theta = np.zeros(4)
    kernels.adamw_update(theta, np.ones(4), np.zeros(4), np.zeros(4),
                         1, 1e-4, 0.9, 0.98, 1e-8, 1e-4)
