"""Pure-numpy reference implementations of the hot kernels.

Semantics contract shared with the numba backend:

* all float arrays are C-contiguous float64;
* row reductions (``pool_sum``, ``weighted_rowsum``) accumulate in ascending
  row-index order, which numpy's axis-0 reduce also does on C-order input;
* ``adamw_update`` mutates its parameter/moment buffers in place.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

INV_SQRT2 = 0.7071067811865476
INV_SQRT2PI = 0.3989422804014327


def pool_sum(x: np.ndarray) -> np.ndarray:
    return x.sum(axis=0)


def pool_max(x: np.ndarray) -> np.ndarray:
    return x.max(axis=0)


def weighted_rowsum(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    # scale rows first so the axis-0 reduce matches the loop backend bitwise
    return (a[:, None] * x).sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, gy, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * INV_SQRT2))


def gelu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * INV_SQRT2))
    pdf = INV_SQRT2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)


def silu_gate(value: np.ndarray, gate: np.ndarray) -> np.ndarray:
    return value * gate * expit(gate)


def silu_gate_bwd(
    value: np.ndarray, gate: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    sig = expit(gate)
    silu = gate * sig
    g_value = gy * silu
    g_gate = gy * value * (sig + silu * (1.0 - sig))
    return g_value, g_gate


def stable_softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def softmax_xent(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    z = logits - logits.max()
    e = np.exp(z)
    s = e.sum()
    loss = float(np.log(s) - z[target])
    grad = e / s
    grad[target] -= 1.0
    return loss, grad


def adamw_update(
    theta: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
) -> None:
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * theta)
