"""Dense numeric core: layers with hand-derived backward passes.

The layer set is closed (affine, three activations, softmax cross-entropy),
so there is no general autodiff graph: each layer records the forward
intermediates it needs and its ``backward`` both accumulates parameter
gradients and returns the input gradient.  ``finite_difference_check``
verifies any composition against central differences.

All arrays are float64.  Forward inputs are 1-D vectors; bags are handled by
the aggregators in :mod:`slidekit.aggregate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError, StateError

ACTIVATION_KINDS = ("relu", "gelu", "swiglu")


def as_f64_vector(x, name: str = "x") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass
class LayerParams:
    """Affine parameter block with matching gradient buffers."""

    name: str
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError(
                f"{self.name}: weight must be 2-D and bias 1-D, got "
                f"{self.weight.shape} and {self.bias.shape}"
            )
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"{self.name}: weight rows {self.weight.shape[0]} != "
                f"bias length {self.bias.shape[0]}"
            )
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def initialize(cls, name: str, out_dim: int, in_dim: int, rng: np.random.Generator):
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero bias."""
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return cls(name=name, weight=weight, bias=np.zeros(out_dim))

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def zero_grad(self) -> None:
        self.grad_weight[:] = 0.0
        self.grad_bias[:] = 0.0

    def blocks(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [
            (f"{self.name}.weight", self.weight, self.grad_weight),
            (f"{self.name}.bias", self.bias, self.grad_bias),
        ]


def linear_forward(params: LayerParams, x: np.ndarray) -> np.ndarray:
    """W x + b."""
    x = as_f64_vector(x)
    if x.shape[0] != params.in_dim:
        raise ShapeError(
            f"{params.name}: input length {x.shape[0]} does not match "
            f"weight shape {params.weight.shape}"
        )
    return params.weight @ x + params.bias


class Linear:
    """Affine layer; backward accumulates into the parameter grad buffers."""

    def __init__(self, params: LayerParams):
        self.params = params
        self._cache_x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = linear_forward(self.params, x)
        self._cache_x = x
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache_x is None:
            raise StateError(f"{self.params.name}: backward without a recorded forward")
        x = self._cache_x
        self._cache_x = None
        self.params.grad_weight += np.outer(gy, x)
        self.params.grad_bias += gy
        return self.params.weight.T @ gy


class ReLU:
    def __init__(self):
        self._cache_x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache_x = x
        return kernels.relu(x)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache_x is None:
            raise StateError("relu: backward without a recorded forward")
        x = self._cache_x
        self._cache_x = None
        return kernels.relu_bwd(x, gy)

    def kink_margin(self) -> float:
        """Distance of the last pre-activation to the nearest kink."""
        if self._cache_x is None:
            return float("inf")
        return float(np.abs(self._cache_x).min())


class GeLU:
    """Exact erf-based form: x * Phi(x)."""

    def __init__(self):
        self._cache_x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache_x = x
        return kernels.gelu(x)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache_x is None:
            raise StateError("gelu: backward without a recorded forward")
        x = self._cache_x
        self._cache_x = None
        return kernels.gelu_bwd(x, gy)


class SwiGLU:
    """value * SiLU(gate) on an even-length input split into two halves.

    The doubling of the preceding layer's output width carries the gate
    projection, so this layer itself holds no parameters.
    """

    def __init__(self):
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] % 2 != 0:
            raise ShapeError(
                f"swiglu: input length {x.shape[0]} is odd; need value and gate halves"
            )
        h = x.shape[0] // 2
        value, gate = x[:h], x[h:]
        self._cache = (value, gate)
        return kernels.silu_gate(value, gate)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("swiglu: backward without a recorded forward")
        value, gate = self._cache
        self._cache = None
        g_value, g_gate = kernels.silu_gate_bwd(value, gate, gy)
        return np.concatenate([g_value, g_gate])


def make_activation(kind: str):
    if kind == "relu":
        return ReLU()
    if kind == "gelu":
        return GeLU()
    if kind == "swiglu":
        return SwiGLU()
    raise ShapeError(f"unknown activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    """Stateless forward evaluation of one activation kind."""
    return make_activation(kind).forward(as_f64_vector(x))


def softmax_cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Stabilized -log softmax(logits)[target] and its logit gradient.

    The gradient is softmax(logits) - onehot(target), so it sums to zero.
    """
    logits = as_f64_vector(logits, "logits")
    if not np.isfinite(logits).all():
        raise ShapeError("logits contain non-finite entries")
    if not 0 <= target < logits.shape[0]:
        raise IndexError(
            f"target {target} out of range for {logits.shape[0]} logits"
        )
    return kernels.softmax_xent(logits, int(target))


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    max_abs_err: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    h: float
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed(self.tolerance) for e in self.entries)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            status = "ok" if e.passed(self.tolerance) else "FAIL"
            out.append(f"{e.name:<32s} max_rel_err={e.max_rel_err:.3e}  {status}")
        return out


# Relative-error denominator floor: at h=1e-5 a central difference of an
# O(1) loss carries ~1e-11 absolute noise (roundoff eps/2h plus h^2/6
# truncation), so entries whose true gradient sits below ~1e-6 can only be
# compared in absolute terms. Flooring the denominator keeps the check
# strict for real gradients while not flagging noise on vanishing ones.
_DENOM_FLOOR = 1e-6


def finite_difference_check(
    loss_fn,
    blocks: list[tuple[str, np.ndarray, np.ndarray]],
    *,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare populated analytic gradients against central differences.

    ``loss_fn()`` must re-evaluate the scalar loss at the current parameter
    values.  ``blocks`` is an ordered list of (name, value, analytic_grad)
    arrays; values are perturbed entry by entry and restored.
    """
    entries = []
    for name, value, grad in blocks:
        flat = value.reshape(-1)
        analytic = grad.reshape(-1)
        max_rel = 0.0
        max_abs = 0.0
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = loss_fn()
            flat[i] = orig - h
            loss_minus = loss_fn()
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(analytic[i]), abs(numeric), _DENOM_FLOOR)
            abs_err = abs(analytic[i] - numeric)
            rel_err = abs_err / denom
            max_rel = max(max_rel, rel_err)
            max_abs = max(max_abs, abs_err)
        entries.append(GradCheckEntry(name=name, max_rel_err=max_rel, max_abs_err=max_abs))
    return GradCheckReport(entries=entries, h=h, tolerance=tolerance)
