"""AdamW with decoupled weight decay, plus the slide-level training loop.

Training follows the reference recipe for slide classifiers over frozen
patch embeddings: one slide per optimizer step (no gradient accumulation),
constant learning rate, a fixed number of epochs, and the final-epoch
parameters kept as the checkpoint (no early stopping, no validation split).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .aggregate import SlideBag
from .errors import ConfigError, NumericError
from .gradcore import softmax_cross_entropy
from .heads import SlideModel
from .rngs import make_rng


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 1

    def validate(self) -> None:
        if not (self.learning_rate > 0.0 and np.isfinite(self.learning_rate)):
            raise ConfigError(
                f"learning_rate must be positive and finite, got {self.learning_rate}"
            )
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0.0 <= beta < 1.0):
                raise ConfigError(f"{name} must be in [0, 1), got {beta}")
        if not (self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.weight_decay < 0.0:
            raise ConfigError(
                f"weight_decay must be non-negative, got {self.weight_decay}"
            )
        # 0 epochs is a supported no-op (checkpoint equals initialization)
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        # one slide per step is the only supported batching
        if self.batch_size != 1:
            raise ConfigError(f"batch_size must be 1, got {self.batch_size}")


@dataclass
class AdamWState:
    """First/second moment buffers per parameter block, plus the step count."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_blocks(cls, blocks) -> "AdamWState":
        state = cls()
        for name, value, _ in blocks:
            state.m[name] = np.zeros(value.size)
            state.v[name] = np.zeros(value.size)
        return state


def adamw_step(state: AdamWState, blocks, config: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place, over all blocks.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    """
    state.step += 1
    for name, value, grad in blocks:
        flat_grad = grad.reshape(-1)
        if not np.isfinite(flat_grad).all():
            raise NumericError(
                f"non-finite gradient in {name} at optimizer step {state.step}"
            )
        kernels.adamw_update(
            value.reshape(-1),
            flat_grad,
            state.m[name],
            state.v[name],
            state.step,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
            config.weight_decay,
        )


@dataclass
class TrainResult:
    model: SlideModel
    loss_trace: list[float]
    train_accuracy_trace: list[float] | None = None

    @property
    def final_loss(self) -> float | None:
        return self.loss_trace[-1] if self.loss_trace else None

    @property
    def final_train_accuracy(self) -> float | None:
        if self.train_accuracy_trace:
            return self.train_accuracy_trace[-1]
        return None


def train(
    model: SlideModel,
    bags: list[SlideBag],
    labels: list[int],
    config: TrainConfig,
    seed: int,
    *,
    record_train_accuracy: bool = False,
) -> TrainResult:
    """Train in place; returns the model plus a per-epoch mean-loss trace.

    Slide order is reshuffled every epoch from a stream keyed by
    (seed, "shuffle", epoch), so a given seed always sees the same orders
    regardless of how many models were trained before it.
    """
    config.validate()
    if len(bags) != len(labels):
        raise ConfigError(f"got {len(bags)} bags but {len(labels)} labels")
    if not bags:
        raise ConfigError("training set is empty")
    num_classes = model.spec.num_classes
    for label in labels:
        if not (0 <= label < num_classes):
            raise ConfigError(f"label {label} out of range for {num_classes} classes")
    targets = np.asarray(labels, dtype=np.int64)
    state = AdamWState.for_blocks(model.parameter_blocks())
    loss_trace = []
    accuracy_trace = [] if record_train_accuracy else None
    for epoch in range(config.epochs):
        order = make_rng(seed, "shuffle", epoch).permutation(len(bags))
        epoch_loss = 0.0
        for idx in order:
            bag = bags[idx]
            model.zero_grads()
            logits = model.forward(bag)
            loss, g_logits = softmax_cross_entropy(logits, int(targets[idx]))
            model.backward(g_logits)
            adamw_step(state, model.parameter_blocks(), config)
            epoch_loss += loss
        mean_loss = epoch_loss / len(bags)
        if not np.isfinite(mean_loss):
            raise NumericError(
                f"training diverged: mean loss {mean_loss} at epoch {epoch}"
            )
        loss_trace.append(mean_loss)
        if record_train_accuracy:
            from .metrics import balanced_accuracy

            preds = [int(np.argmax(model.forward(bag))) for bag in bags]
            accuracy_trace.append(balanced_accuracy(labels, preds, num_classes))
    return TrainResult(
        model=model, loss_trace=loss_trace, train_accuracy_trace=accuracy_trace
    )


def write_loss_trace(
    path, loss_trace: list[float], train_accuracy_trace: list[float] | None = None
) -> None:
    with open(path, "w") as fh:
        if train_accuracy_trace is None:
            fh.write("epoch,mean_loss\n")
            for epoch, loss in enumerate(loss_trace):
                fh.write(f"{epoch},{loss:.17g}\n")
        else:
            fh.write("epoch,mean_loss,train_bal_acc\n")
            for epoch, (loss, acc) in enumerate(zip(loss_trace, train_accuracy_trace)):
                fh.write(f"{epoch},{loss:.17g},{acc:.17g}\n")
