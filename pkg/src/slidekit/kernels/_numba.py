"""Numba-compiled kernels; same contracts as ``_numpy``.

Loops fuse what the numpy path spells out as a chain of temporaries, which is
where the speedup comes from (per-slide training steps are small, so python
and allocation overhead dominates the BLAS-free ops).  Compiled artifacts are
disk-cached, so the JIT cost is paid once per environment.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

INV_SQRT2 = 0.7071067811865476
INV_SQRT2PI = 0.3989422804014327


@njit(cache=True)
def pool_sum(x):
    n, d = x.shape
    out = np.zeros(d)
    for i in range(n):
        for j in range(d):
            out[j] += x[i, j]
    return out


@njit(cache=True)
def pool_max(x):
    n, d = x.shape
    out = x[0].copy()
    for i in range(1, n):
        for j in range(d):
            if x[i, j] > out[j]:
                out[j] = x[i, j]
    return out


@njit(cache=True)
def weighted_rowsum(x, a):
    n, d = x.shape
    out = np.zeros(d)
    for i in range(n):
        for j in range(d):
            out[j] += a[i] * x[i, j]
    return out


@njit(cache=True)
def relu(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = x[i] if x[i] > 0.0 else 0.0
    return out


@njit(cache=True)
def relu_bwd(x, gy):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = gy[i] if x[i] > 0.0 else 0.0
    return out


@njit(cache=True)
def gelu(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = 0.5 * x[i] * (1.0 + math.erf(x[i] * INV_SQRT2))
    return out


@njit(cache=True)
def gelu_bwd(x, gy):
    out = np.empty_like(x)
    for i in range(x.size):
        cdf = 0.5 * (1.0 + math.erf(x[i] * INV_SQRT2))
        pdf = INV_SQRT2PI * math.exp(-0.5 * x[i] * x[i])
        out[i] = gy[i] * (cdf + x[i] * pdf)
    return out


@njit(cache=True)
def silu_gate(value, gate):
    out = np.empty_like(value)
    for i in range(value.size):
        sig = 1.0 / (1.0 + math.exp(-gate[i]))
        out[i] = value[i] * gate[i] * sig
    return out


@njit(cache=True)
def silu_gate_bwd(value, gate, gy):
    g_value = np.empty_like(value)
    g_gate = np.empty_like(gate)
    for i in range(value.size):
        sig = 1.0 / (1.0 + math.exp(-gate[i]))
        silu = gate[i] * sig
        g_value[i] = gy[i] * silu
        g_gate[i] = gy[i] * value[i] * (sig + silu * (1.0 - sig))
    return g_value, g_gate


@njit(cache=True)
def stable_softmax(x):
    mx = x[0]
    for i in range(1, x.size):
        if x[i] > mx:
            mx = x[i]
    out = np.empty_like(x)
    s = 0.0
    for i in range(x.size):
        out[i] = math.exp(x[i] - mx)
        s += out[i]
    for i in range(x.size):
        out[i] /= s
    return out


@njit(cache=True)
def softmax_xent(logits, target):
    mx = logits[0]
    for i in range(1, logits.size):
        if logits[i] > mx:
            mx = logits[i]
    grad = np.empty_like(logits)
    s = 0.0
    for i in range(logits.size):
        grad[i] = math.exp(logits[i] - mx)
        s += grad[i]
    loss = math.log(s) - (logits[target] - mx)
    for i in range(logits.size):
        grad[i] /= s
    grad[target] -= 1.0
    return loss, grad


@njit(cache=True)
def adamw_update(theta, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i in range(theta.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (grad[i] * grad[i])
        m_hat = m[i] / c1
        v_hat = v[i] / c2
        theta[i] -= lr * (m_hat / (math.sqrt(v_hat) + eps) + weight_decay * theta[i])
