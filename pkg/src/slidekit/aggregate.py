"""Bag aggregators: mean pooling, max pooling, gated attention.

All three map an (n, d) patch-feature bag to a length-d slide representation
and are permutation-invariant up to summation rounding.  Mean and attention
accumulate in ascending row-index order (the kernels' contract), so pooling a
canonically row-sorted bag is bitwise permutation-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import EmptyBagError, ShapeError, StateError


@dataclass
class SlideBag:
    """One slide's patch-embedding matrix plus its identity."""

    slide_id: str
    features: np.ndarray  # (n, d)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(
                f"bag {self.slide_id!r}: features must be 2-D, got shape "
                f"{self.features.shape}"
            )
        if self.features.shape[0] < 1:
            raise EmptyBagError(f"bag {self.slide_id!r} has no patches")
        if not np.isfinite(self.features).all():
            raise ShapeError(f"bag {self.slide_id!r} contains non-finite features")

    @property
    def n_patches(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _check_bag(features: np.ndarray) -> np.ndarray:
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"bag features must be 2-D, got shape {features.shape}")
    if features.shape[0] < 1:
        raise EmptyBagError("cannot aggregate an empty bag")
    return features


def canonical_row_order(features: np.ndarray) -> np.ndarray:
    """Permutation sorting rows lexicographically; fixes summation order."""
    return np.lexsort(features.T[::-1])


def mean_pool(bag: SlideBag | np.ndarray) -> np.ndarray:
    """Column-wise arithmetic mean; no learnable parameters."""
    features = _check_bag(bag.features if isinstance(bag, SlideBag) else bag)
    return kernels.pool_sum(features) / features.shape[0]


def max_pool(bag: SlideBag | np.ndarray) -> np.ndarray:
    """Column-wise maximum; no learnable parameters."""
    features = _check_bag(bag.features if isinstance(bag, SlideBag) else bag)
    return kernels.pool_max(features)


@dataclass
class GatedAttentionParams:
    """Gated-attention weights: score_i = w . (tanh(V p_i) * sigmoid(U p_i))."""

    V: np.ndarray  # (h, d)
    U: np.ndarray  # (h, d)
    w: np.ndarray  # (h,)
    grad_V: np.ndarray = field(init=False)
    grad_U: np.ndarray = field(init=False)
    grad_w: np.ndarray = field(init=False)

    def __post_init__(self):
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        if self.V.ndim != 2 or self.U.shape != self.V.shape or self.w.shape != (self.V.shape[0],):
            raise ShapeError(
                f"gated attention shapes inconsistent: V {self.V.shape}, "
                f"U {self.U.shape}, w {self.w.shape}"
            )
        if self.V.shape[0] < 1:
            raise ShapeError("gated attention hidden width must be >= 1")
        self.grad_V = np.zeros_like(self.V)
        self.grad_U = np.zeros_like(self.U)
        self.grad_w = np.zeros_like(self.w)

    @classmethod
    def initialize(cls, dim: int, hidden: int, rng: np.random.Generator):
        bound_vu = 1.0 / np.sqrt(dim)
        bound_w = 1.0 / np.sqrt(hidden)
        return cls(
            V=rng.uniform(-bound_vu, bound_vu, size=(hidden, dim)),
            U=rng.uniform(-bound_vu, bound_vu, size=(hidden, dim)),
            w=rng.uniform(-bound_w, bound_w, size=hidden),
        )

    @property
    def hidden(self) -> int:
        return self.V.shape[0]

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    def zero_grad(self) -> None:
        self.grad_V[:] = 0.0
        self.grad_U[:] = 0.0
        self.grad_w[:] = 0.0

    def blocks(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [
            ("attention.V", self.V, self.grad_V),
            ("attention.U", self.U, self.grad_U),
            ("attention.w", self.w, self.grad_w),
        ]


class GatedAttention:
    """Attention-weighted convex combination of patch features.

    Forward returns (s, a) where a = softmax over patches of the gated
    scores and s = sum_i a_i p_i; backward accumulates grads for V, U, w
    and returns the gradient with respect to the bag.
    """

    def __init__(self, params: GatedAttentionParams):
        self.params = params
        self._cache = None

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        features = _check_bag(features)
        if features.shape[1] != self.params.dim:
            raise ShapeError(
                f"bag dim {features.shape[1]} does not match attention "
                f"parameter dim {self.params.dim}"
            )
        tanh_part = np.tanh(features @ self.params.V.T)  # (n, h)
        sig_part = expit(features @ self.params.U.T)  # (n, h)
        gated = tanh_part * sig_part  # (n, h)
        scores = gated @ self.params.w  # (n,)
        attention = kernels.stable_softmax(scores)
        pooled = kernels.weighted_rowsum(features, attention)
        self._cache = (features, tanh_part, sig_part, gated, attention)
        return pooled, attention

    def backward(self, g_pooled: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("gated attention: backward without a recorded forward")
        features, tanh_part, sig_part, gated, attention = self._cache
        self._cache = None

        g_attention = features @ g_pooled  # (n,)
        g_features = attention[:, None] * g_pooled[None, :]  # weighted-sum term
        # softmax jacobian: ge_i = a_i (ga_i - a . ga)
        g_scores = attention * (g_attention - attention @ g_attention)
        self.params.grad_w += gated.T @ g_scores
        g_gated = g_scores[:, None] * self.params.w[None, :]  # (n, h)
        g_tanh_in = g_gated * sig_part * (1.0 - tanh_part * tanh_part)
        g_sig_in = g_gated * tanh_part * sig_part * (1.0 - sig_part)
        self.params.grad_V += g_tanh_in.T @ features
        self.params.grad_U += g_sig_in.T @ features
        g_features += g_tanh_in @ self.params.V + g_sig_in @ self.params.U
        return g_features


def gated_attention_pool(
    params: GatedAttentionParams, bag: SlideBag | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stateless (pooled, attention) evaluation of gated attention."""
    features = bag.features if isinstance(bag, SlideBag) else bag
    return GatedAttention(params).forward(features)


def aggregator_output_dim(aggregator: str, dim: int) -> int:
    """Slide-representation length; all implemented aggregators preserve d."""
    if aggregator not in ("mean", "max", "gated_attention"):
        raise ShapeError(f"unknown aggregator {aggregator!r}")
    return dim
