"""Slide-level models: an aggregator composed with a classification head.

Three named methods cover the toolkit's comparisons:

* ``linear`` — mean pooling + single affine layer (linear probe);
* ``simlp``  — mean pooling + two-layer MLP (default ReLU);
* ``abmil``  — gated-attention pooling + affine classifier.

Pooling/activation ablation cells (``mean+gelu``, ``max+swiglu``, ...) reuse
the MLP head with the requested aggregator and activation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .aggregate import GatedAttention, GatedAttentionParams, SlideBag, _check_bag
from .errors import ConfigError, FormatError, ShapeError
from .gradcore import (
    ACTIVATION_KINDS,
    GradCheckReport,
    LayerParams,
    Linear,
    ReLU,
    finite_difference_check,
    make_activation,
    softmax_cross_entropy,
)
from .rngs import make_rng

AGGREGATORS = ("mean", "max", "gated_attention")
HEADS = ("linear", "mlp")

DEFAULT_MLP_HIDDEN = 512
DEFAULT_ATTENTION_HIDDEN = 256

SPEC_PREFIX = "spec v1"


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description; parameter shapes follow from it alone."""

    aggregator: str
    head: str
    input_dim: int
    num_classes: int
    hidden_dim: int = DEFAULT_MLP_HIDDEN
    activation: str = "relu"
    attention_dim: int = DEFAULT_ATTENTION_HIDDEN

    def validate(self) -> None:
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.activation not in ACTIVATION_KINDS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.head == "mlp" and self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.aggregator == "gated_attention" and self.attention_dim < 1:
            raise ConfigError(f"attention_dim must be >= 1, got {self.attention_dim}")

    def first_layer_out(self) -> int:
        # swiglu gates on a doubled first-layer output
        return 2 * self.hidden_dim if self.activation == "swiglu" else self.hidden_dim

    def param_count(self) -> int:
        self.validate()
        count = 0
        if self.aggregator == "gated_attention":
            count += 2 * self.attention_dim * self.input_dim + self.attention_dim
        if self.head == "linear":
            count += self.num_classes * self.input_dim + self.num_classes
        else:
            first_out = self.first_layer_out()
            count += first_out * self.input_dim + first_out
            count += self.num_classes * self.hidden_dim + self.num_classes
        return count

    def to_text(self) -> str:
        parts = [SPEC_PREFIX, f"aggregator={self.aggregator}"]
        if self.aggregator == "gated_attention":
            parts.append(f"attn_hidden={self.attention_dim}")
        parts.append(f"head={self.head}")
        if self.head == "mlp":
            parts.append(f"hidden={self.hidden_dim}")
            parts.append(f"activation={self.activation}")
        parts.append(f"dim={self.input_dim}")
        parts.append(f"classes={self.num_classes}")
        return " ".join(parts)

    def canonical(self) -> "ModelSpec":
        """Reset fields this configuration does not use to their defaults.

        The text form omits unused fields, so only canonical specs
        roundtrip through ``to_text``/``from_text`` as dataclass equals.
        """
        spec = self
        if spec.head != "mlp":
            spec = replace(spec, hidden_dim=DEFAULT_MLP_HIDDEN, activation="relu")
        if spec.aggregator != "gated_attention":
            spec = replace(spec, attention_dim=DEFAULT_ATTENTION_HIDDEN)
        return spec

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        text = text.strip()
        if not text.startswith(SPEC_PREFIX):
            raise FormatError(f"model spec must start with {SPEC_PREFIX!r}: {text!r}")
        fields = {}
        for token in text[len(SPEC_PREFIX):].split():
            if "=" not in token:
                raise FormatError(f"bad model-spec token {token!r}")
            key, value = token.split("=", 1)
            fields[key] = value
        try:
            spec = cls(
                aggregator=fields["aggregator"],
                head=fields["head"],
                input_dim=int(fields["dim"]),
                num_classes=int(fields["classes"]),
                hidden_dim=int(fields.get("hidden", DEFAULT_MLP_HIDDEN)),
                activation=fields.get("activation", "relu"),
                attention_dim=int(fields.get("attn_hidden", DEFAULT_ATTENTION_HIDDEN)),
            )
        except KeyError as exc:
            raise FormatError(f"model spec missing field {exc}") from exc
        spec.validate()
        return spec


METHOD_NAMES = ("linear", "simlp", "abmil")


def spec_for_method(method: str, input_dim: int, num_classes: int, **overrides) -> ModelSpec:
    """Resolve a CLI/harness method name to a ModelSpec.

    Accepts the named methods plus ablation cells of the form
    ``{mean,max}+{relu,gelu,swiglu}``.
    """
    method = method.strip().lower()
    if method == "linear":
        spec = ModelSpec("mean", "linear", input_dim, num_classes)
    elif method == "simlp":
        spec = ModelSpec("mean", "mlp", input_dim, num_classes, activation="relu")
    elif method == "abmil":
        spec = ModelSpec("gated_attention", "linear", input_dim, num_classes)
    elif "+" in method:
        pool, _, act = method.partition("+")
        if pool not in ("mean", "max") or act not in ACTIVATION_KINDS:
            raise ConfigError(f"unknown method {method!r}")
        spec = ModelSpec(pool, "mlp", input_dim, num_classes, activation=act)
    else:
        raise ConfigError(
            f"unknown method {method!r}; expected one of {METHOD_NAMES} "
            f"or pool+activation"
        )
    if overrides:
        spec = replace(spec, **overrides)
    spec = spec.canonical()
    spec.validate()
    return spec


class _MeanPoolLayer:
    def __init__(self):
        self._shape = None

    def forward(self, features: np.ndarray) -> np.ndarray:
        self._shape = features.shape
        return kernels.pool_sum(features) / features.shape[0]

    def backward(self, g_pooled: np.ndarray) -> np.ndarray:
        n, _ = self._shape
        return np.tile(g_pooled / n, (n, 1))


class _MaxPoolLayer:
    def __init__(self):
        self._cache = None

    def forward(self, features: np.ndarray) -> np.ndarray:
        self._cache = (features.shape, features.argmax(axis=0))
        return kernels.pool_max(features)

    def backward(self, g_pooled: np.ndarray) -> np.ndarray:
        (n, d), argmax = self._cache
        g_features = np.zeros((n, d))
        g_features[argmax, np.arange(d)] = g_pooled
        return g_features


class SlideModel:
    """Composed aggregator + head with recorded-activation backward."""

    def __init__(
        self,
        spec: ModelSpec,
        attention: GatedAttentionParams | None,
        head_params: list[LayerParams],
    ):
        spec.validate()
        self.spec = spec
        self.attention = attention
        self.head_params = head_params
        if spec.aggregator == "mean":
            self._agg = _MeanPoolLayer()
        elif spec.aggregator == "max":
            self._agg = _MaxPoolLayer()
        else:
            if attention is None:
                raise ConfigError("gated_attention spec requires attention parameters")
            self._agg = GatedAttention(attention)
        self._head_layers = []
        if spec.head == "linear":
            self._head_layers.append(Linear(head_params[0]))
        else:
            self._head_layers.append(Linear(head_params[0]))
            self._head_layers.append(make_activation(spec.activation))
            self._head_layers.append(Linear(head_params[1]))
        self.last_attention: np.ndarray | None = None

    # -- construction ----------------------------------------------------

    @classmethod
    def build(cls, spec: ModelSpec, seed: int) -> "SlideModel":
        """Deterministic initialization from (spec, seed); biases zero."""
        spec.validate()
        rng = make_rng(seed, "init")
        attention = None
        if spec.aggregator == "gated_attention":
            attention = GatedAttentionParams.initialize(
                spec.input_dim, spec.attention_dim, rng
            )
        head_params = []
        if spec.head == "linear":
            head_params.append(
                LayerParams.initialize("head.out", spec.num_classes, spec.input_dim, rng)
            )
        else:
            head_params.append(
                LayerParams.initialize(
                    "head.fc1", spec.first_layer_out(), spec.input_dim, rng
                )
            )
            head_params.append(
                LayerParams.initialize(
                    "head.fc2", spec.num_classes, spec.hidden_dim, rng
                )
            )
        return cls(spec, attention, head_params)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "SlideModel":
        """All-zero parameters; used as a checkpoint-loading shell."""
        spec.validate()
        attention = None
        if spec.aggregator == "gated_attention":
            h, d = spec.attention_dim, spec.input_dim
            attention = GatedAttentionParams(
                V=np.zeros((h, d)), U=np.zeros((h, d)), w=np.zeros(h)
            )
        head_params = []
        if spec.head == "linear":
            head_params.append(
                LayerParams(
                    "head.out",
                    np.zeros((spec.num_classes, spec.input_dim)),
                    np.zeros(spec.num_classes),
                )
            )
        else:
            first_out = spec.first_layer_out()
            head_params.append(
                LayerParams(
                    "head.fc1", np.zeros((first_out, spec.input_dim)), np.zeros(first_out)
                )
            )
            head_params.append(
                LayerParams(
                    "head.fc2",
                    np.zeros((spec.num_classes, spec.hidden_dim)),
                    np.zeros(spec.num_classes),
                )
            )
        return cls(spec, attention, head_params)

    # -- forward / backward ----------------------------------------------

    def forward(self, bag: SlideBag | np.ndarray) -> np.ndarray:
        features = bag.features if isinstance(bag, SlideBag) else _check_bag(bag)
        if features.shape[1] != self.spec.input_dim:
            raise ShapeError(
                f"bag dim {features.shape[1]} does not match model dim "
                f"{self.spec.input_dim}"
            )
        if isinstance(self._agg, GatedAttention):
            x, attention = self._agg.forward(features)
            self.last_attention = attention
        else:
            x = self._agg.forward(features)
            self.last_attention = None
        for layer in self._head_layers:
            x = layer.forward(x)
        if not np.isfinite(x).all():
            raise ShapeError("model forward produced non-finite logits")
        return x

    def backward(self, g_logits: np.ndarray) -> np.ndarray:
        g = g_logits
        for layer in reversed(self._head_layers):
            g = layer.backward(g)
        return self._agg.backward(g)

    # -- parameter access --------------------------------------------------

    def parameter_blocks(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, value, grad) triples in declaration order."""
        blocks = []
        if self.attention is not None:
            blocks.extend(self.attention.blocks())
        for params in self.head_params:
            blocks.extend(params.blocks())
        return blocks

    def zero_grads(self) -> None:
        if self.attention is not None:
            self.attention.zero_grad()
        for params in self.head_params:
            params.zero_grad()

    def param_count(self) -> int:
        return sum(value.size for _, value, _ in self.parameter_blocks())

    def relu_kink_margin(self) -> float:
        """Min |pre-activation| over ReLU layers for the last forward."""
        margins = [
            layer.kink_margin()
            for layer in self._head_layers
            if isinstance(layer, ReLU)
        ]
        return min(margins, default=float("inf"))


def build_model(spec: ModelSpec, seed: int) -> SlideModel:
    return SlideModel.build(spec, seed)


def predict(model: SlideModel, bag: SlideBag | np.ndarray) -> tuple[int, np.ndarray]:
    """(argmax class, softmax probabilities); ties break to the lowest index."""
    logits = model.forward(bag)
    probs = kernels.stable_softmax(logits)
    return int(np.argmax(logits)), probs


# -- checkpoint container ---------------------------------------------------

CHECKPOINT_MAGIC = b"SLIDECKP"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: SlideModel, path: str | Path) -> None:
    """Magic + version byte + spec text + parameter tensors (f64 LE)."""
    path = Path(path)
    spec_text = model.spec.to_text().encode("utf-8")
    blocks = model.parameter_blocks()
    total_floats = sum(value.size for _, value, _ in blocks)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(spec_text)))
        fh.write(spec_text)
        fh.write(struct.pack("<Q", total_floats))
        for _, value, _ in blocks:
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> SlideModel:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 13 or raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"{path}: bad checkpoint magic at byte 0 "
            f"(got {raw[:8]!r}, want {CHECKPOINT_MAGIC!r})"
        )
    version = raw[8]
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {version} at byte 8"
        )
    (spec_len,) = struct.unpack_from("<I", raw, 9)
    spec_end = 13 + spec_len
    if len(raw) < spec_end + 8:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    spec = ModelSpec.from_text(raw[13:spec_end].decode("utf-8"))
    (total_floats,) = struct.unpack_from("<Q", raw, spec_end)
    expected = spec.param_count()
    if total_floats != expected:
        raise FormatError(
            f"{path}: header declares {total_floats} parameters, spec "
            f"requires {expected}"
        )
    payload = raw[spec_end + 8:]
    if len(payload) != 8 * total_floats:
        raise FormatError(
            f"{path}: expected {8 * total_floats} payload bytes at byte "
            f"{spec_end + 8}, got {len(payload)}"
        )
    model = SlideModel.zeros(spec)
    offset = 0
    for _, value, _ in model.parameter_blocks():
        count = value.size
        chunk = np.frombuffer(payload, dtype="<f8", count=count, offset=8 * offset)
        value[...] = chunk.reshape(value.shape)
        offset += count
    return model


# -- gradient checking -------------------------------------------------------

def check_model_gradients(
    model: SlideModel,
    bag: SlideBag | np.ndarray,
    target: int,
    *,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Finite-difference check of d(loss)/d(params) for one (bag, target)."""

    def loss_fn() -> float:
        loss, _ = softmax_cross_entropy(model.forward(bag), target)
        return loss

    model.zero_grads()
    loss, g_logits = softmax_cross_entropy(model.forward(bag), target)
    model.backward(g_logits)
    return finite_difference_check(
        loss_fn, model.parameter_blocks(), h=h, tolerance=tolerance
    )


GRADCHECK_METHODS = ("linear", "simlp", "mean+gelu", "mean+swiglu", "abmil")


def gradcheck_suite(
    *,
    methods: tuple[str, ...] = GRADCHECK_METHODS,
    inits_per_method: int = 5,
    input_dim: int = 16,
    num_classes: int = 3,
    hidden_dim: int = 8,
    attention_dim: int = 6,
    n_patches: int = 5,
    seed: int = 0,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> list[tuple[str, GradCheckReport]]:
    """Gradient check every method at several random initializations.

    Bags whose ReLU pre-activations sit within 100*h of a kink are resampled
    so central differences stay on one linear piece.
    """
    kink_margin = 100.0 * h
    results = []
    for method in methods:
        spec = spec_for_method(
            method,
            input_dim,
            num_classes,
            hidden_dim=hidden_dim,
            attention_dim=attention_dim,
        )
        for init in range(inits_per_method):
            rng = make_rng(seed, "gradcheck", method, init)
            model = build_model(spec, seed=int(rng.integers(2**31)))
            for _ in range(64):
                features = rng.normal(size=(n_patches, input_dim))
                target = int(rng.integers(num_classes))
                model.forward(features)
                if model.relu_kink_margin() > kink_margin:
                    break
            report = check_model_gradients(
                model, features, target, h=h, tolerance=tolerance
            )
            results.append((f"{method}[init {init}]", report))
    return results
