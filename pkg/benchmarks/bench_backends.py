"""Timings for the numba kernels against the pure-numpy fallback.

Per-kernel microbenchmarks call both backend modules directly; the
end-to-end comparison re-launches this script with SLIDEKIT_BACKEND set so
each child process binds its kernels the way a user run would.

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --skip-e2e
"""

import argparse
import os
import subprocess
import sys
import time
import timeit

import numpy as np

from slidekit.kernels import _numba as nbk
from slidekit.kernels import _numpy as npk

BAG = (64, 1024)      # patches x feature dim, typical foundation-model bag
HIDDEN = 512          # first-layer width of the default MLP head
CLASSES = 30
FC1_WEIGHTS = HIDDEN * BAG[1]


def _cases(rng):
    bag = np.ascontiguousarray(rng.normal(size=BAG))
    weights = np.ascontiguousarray(rng.random(BAG[0]))
    hidden = rng.normal(size=HIDDEN)
    g_hidden = rng.normal(size=HIDDEN)
    value = rng.normal(size=HIDDEN)
    gate = rng.normal(size=HIDDEN)
    logits = rng.normal(size=CLASSES)
    flat = rng.normal(size=FC1_WEIGHTS)
    grad = rng.normal(size=FC1_WEIGHTS)
    m = np.zeros(FC1_WEIGHTS)
    v = np.zeros(FC1_WEIGHTS)

    def adamw(mod):
        mod.adamw_update(flat.copy(), grad, m.copy(), v.copy(),
                         1e-4, 0.9, 0.98, 1e-8, 1e-4, 3)

    return [
        ("pool_sum", f"{BAG[0]}x{BAG[1]}", lambda mod: mod.pool_sum(bag)),
        ("pool_max", f"{BAG[0]}x{BAG[1]}", lambda mod: mod.pool_max(bag)),
        ("weighted_rowsum", f"{BAG[0]}x{BAG[1]}",
         lambda mod: mod.weighted_rowsum(bag, weights)),
        ("relu", str(HIDDEN), lambda mod: mod.relu(hidden)),
        ("relu_bwd", str(HIDDEN), lambda mod: mod.relu_bwd(hidden, g_hidden)),
        ("gelu", str(HIDDEN), lambda mod: mod.gelu(hidden)),
        ("gelu_bwd", str(HIDDEN), lambda mod: mod.gelu_bwd(hidden, g_hidden)),
        ("silu_gate", str(HIDDEN),
         lambda mod: mod.silu_gate(value, gate)),
        ("silu_gate_bwd", str(HIDDEN),
         lambda mod: mod.silu_gate_bwd(value, gate, g_hidden)),
        ("stable_softmax", str(CLASSES),
         lambda mod: mod.stable_softmax(logits)),
        ("softmax_xent", str(CLASSES),
         lambda mod: mod.softmax_xent(logits, 3)),
        ("adamw_update", str(FC1_WEIGHTS), adamw),
    ]


def _best_us(fn, mod) -> float:
    fn(mod)  # warm-up; first numba call pays JIT compilation
    number = 1
    while timeit.timeit(lambda: fn(mod), number=number) < 0.01:
        number *= 4
    best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=5))
    return best / number * 1e6


def bench_kernels() -> None:
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'size':>12} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, size, fn in _cases(rng):
        t_np = _best_us(fn, npk)
        t_nb = _best_us(fn, nbk)
        print(f"{name:<16} {size:>12} {t_np:>10.2f} {t_nb:>10.2f} "
              f"{t_np / t_nb:>7.1f}x")


def _train_once() -> None:
    # Imports bind kernels to SLIDEKIT_BACKEND as set by the parent.
    from slidekit.aggregate import SlideBag
    from slidekit.heads import build_model, spec_for_method
    from slidekit.kernels import BACKEND
    from slidekit.optim import TrainConfig, train

    rng = np.random.default_rng(7)
    bags, labels = [], []
    for i in range(90):
        label = i % 3
        center = np.zeros(256)
        center[label] = 3.0
        bags.append(SlideBag(f"s{i}", rng.normal(size=(16, 256)) + center))
        labels.append(label)

    model = build_model(spec_for_method("simlp", 256, 3), seed=0)
    config = TrainConfig(epochs=5)
    train(model, bags, labels, config, seed=0)  # warm-up epochs included
    started = time.perf_counter()
    train(model, bags, labels, config, seed=0)
    print(f"{BACKEND}: {time.perf_counter() - started:.3f}s "
          f"(90 bags x {config.epochs} epochs, simlp d=256)")


def bench_end_to_end() -> None:
    # Flush so child output lands after the table when stdout is piped.
    print("\nend-to-end training, one process per backend:", flush=True)
    for backend in ("numpy", "numba"):
        env = dict(os.environ, SLIDEKIT_BACKEND=backend)
        subprocess.run([sys.executable, __file__, "--train-once"],
                       env=env, check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-once", action="store_true",
                        help=argparse.SUPPRESS)
    parser.add_argument("--skip-e2e", action="store_true",
                        help="only run the per-kernel table")
    args = parser.parse_args()
    if args.train_once:
        _train_once()
        return
    bench_kernels()
    if not args.skip_e2e:
        bench_end_to_end()


if __name__ == "__main__":
    main()
