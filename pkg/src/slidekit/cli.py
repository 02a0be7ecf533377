"""Command-line interface.

Subcommands: synth, train, eval, fewshot, transfer, ablate, report,
gradcheck. Every command validates its configuration before touching data.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime or
numeric failure.

Output locations default under the SLIDEKIT_OUT environment variable
(falling back to ./slidekit_out); every command also takes an explicit
--out. The compute backend is selected by SLIDEKIT_BACKEND (auto|numba|
numpy), read at import time.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .data import (
    SynthConfig,
    generate_synthetic_corpus,
    load_bags,
    read_manifest,
    validate_manifest_files,
)
from .errors import (
    ConfigError,
    DegenerateDataError,
    EmptyBagError,
    FormatError,
    ManifestError,
    NumericError,
    ShapeError,
    StateError,
    UndefinedMetricError,
)
from .harness import (
    BENCHMARK_METHODS,
    FEWSHOT_K,
    PLAN_NAME,
    RECORDS_NAME,
    ExperimentPlan,
    Protocol,
    ablation_grid,
    load_records,
    run_plan,
    write_summaries,
)
from .heads import (
    build_model,
    gradcheck_suite,
    load_checkpoint,
    save_checkpoint,
    spec_for_method,
)
from .metrics import evaluate_predictions, write_report_csv
from .optim import TrainConfig, train, write_loss_trace

_CONFIG_ERRORS = (ConfigError, ManifestError, FormatError, ShapeError, EmptyBagError)
_RUNTIME_ERRORS = (NumericError, UndefinedMetricError, DegenerateDataError, StateError)


class _Parser(argparse.ArgumentParser):
    # route usage errors through the package taxonomy so they exit 1, not 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _default_out(sub: str) -> str:
    return str(Path(os.environ.get("SLIDEKIT_OUT", "slidekit_out")) / sub)


def _parse_int_list(text: str) -> list[int]:
    """Comma-separated integers; 'a-b' tokens expand to inclusive ranges."""
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        lo, sep, hi = token.partition("-")
        if sep and lo and hi:
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(token))
    if not values:
        raise ConfigError(f"empty integer list: {text!r}")
    return values


def _train_config(args) -> TrainConfig:
    config = TrainConfig(
        learning_rate=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        epsilon=args.epsilon,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
    )
    config.validate()
    return config


def _add_train_config_flags(parser, *, epochs_default: int = 20) -> None:
    parser.add_argument("--lr", type=float, default=1e-4, help="learning rate")
    parser.add_argument("--beta1", type=float, default=0.9)
    parser.add_argument("--beta2", type=float, default=0.98)
    parser.add_argument("--epsilon", type=float, default=1e-8)
    parser.add_argument("--weight-decay", type=float, default=1e-4)
    parser.add_argument("--epochs", type=int, default=epochs_default)


def _add_suite_flags(parser, sub_dir: str, default_seeds: str) -> None:
    parser.add_argument("--manifest", required=True, help="manifest.tsv path")
    parser.add_argument(
        "--seeds", default=default_seeds,
        help=f"comma/range list, default {default_seeds}",
    )
    parser.add_argument("--out", default=_default_out(sub_dir))
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel worker processes (deterministic)")
    _add_train_config_flags(parser)


def build_parser() -> _Parser:
    parser = _Parser(prog="slidekit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bag corpus")
    p.add_argument("--out", default=_default_out("corpus"))
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--test-per-class", type=int, default=10)
    p.add_argument("--patches-min", type=int, default=8)
    p.add_argument("--patches-max", type=int, default=32)
    p.add_argument("--separation", type=float, default=3.0,
                   help="class-center scale sigma_sep")
    p.add_argument("--noise", type=float, default=1.0, help="patch noise sigma")
    p.add_argument("--rho", type=float, default=1.0,
                   help="informative patch fraction in (0, 1]")
    p.add_argument("--cohort-shift", type=float, default=0.0)
    p.add_argument("--cohorts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", default="synth")
    p.add_argument("--force", action="store_true",
                   help="write into an existing non-empty directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one method on a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True,
                   help="linear | simlp | abmil | {mean,max}+{relu,gelu,swiglu}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_out("train"))
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--bootstrap", type=int, default=1000,
                   help="bootstrap resamples for 95%% CIs; 0 disables CIs")
    p.add_argument("--seed", type=int, default=0, help="bootstrap stream seed")
    p.add_argument("--method-label", default="",
                   help="method name recorded in the report")
    p.add_argument("--out", default=_default_out("eval"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fewshot", help="few-shot curves over K slides per class")
    _add_suite_flags(p, "fewshot", "0-4")
    p.add_argument("--methods", default=",".join(BENCHMARK_METHODS))
    p.add_argument("--k", default=",".join(str(k) for k in FEWSHOT_K),
                   help="comma list of shots per class")
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("transfer", help="cross-cohort transfer sweep")
    _add_suite_flags(p, "transfer", "0-9")
    p.add_argument("--methods", default=",".join(BENCHMARK_METHODS))
    p.add_argument("--train-cohort", required=True)
    p.add_argument("--test-cohorts", default="",
                   help="comma list; default = every cohort in the manifest")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ablate", help="pooling x activation ablation grid")
    _add_suite_flags(p, "ablation", "0-4")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="re-render summary tables from a record log")
    p.add_argument("--records", default="",
                   help=f"records file; default <out>/{RECORDS_NAME}")
    p.add_argument("--out", default=_default_out("fewshot"),
                   help="directory holding the record log / receiving tables")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient check of every model family")
    p.add_argument("--inits", type=int, default=5, help="initializations per method")
    p.add_argument("--step", type=float, default=1e-5, help="finite-difference h")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    config = SynthConfig(
        num_classes=args.classes,
        feature_dim=args.dim,
        train_slides_per_class=args.train_per_class,
        test_slides_per_class=args.test_per_class,
        patches_min=args.patches_min,
        patches_max=args.patches_max,
        class_separation=args.separation,
        noise_scale=args.noise,
        informative_fraction=args.rho,
        cohort_shift=args.cohort_shift,
        num_cohorts=args.cohorts,
        seed=args.seed,
        task_name=args.task,
    )
    config.validate()  # before any directory or file is touched
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out_dir} is not empty; pass --force to reuse it"
        )
    manifest, manifest_path = generate_synthetic_corpus(config, out_dir)
    n_train = len(manifest.train_entries())
    n_test = len(manifest.test_entries())
    print(
        f"corpus '{config.task_name}': {config.num_classes} classes, "
        f"dim {config.feature_dim}, {len(manifest.entries)} slides "
        f"({n_train} train, {n_test} test), {config.num_cohorts} cohort(s), "
        f"rho={config.informative_fraction}"
    )
    print(f"manifest: {manifest_path}")
    return 0


def cmd_train(args) -> int:
    config = _train_config(args)
    manifest = read_manifest(args.manifest)
    validate_manifest_files(manifest)
    spec = spec_for_method(args.method, manifest.feature_dim, len(manifest.classes))
    model = build_model(spec, args.seed)
    bags, labels = load_bags(manifest, manifest.train_entries())
    result = train(model, bags, labels, config, args.seed,
                   record_train_accuracy=True)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{args.method}_seed{args.seed}"
    ckpt_path = out_dir / f"{stem}.ckpt"
    trace_path = out_dir / f"{stem}_trace.csv"
    save_checkpoint(model, ckpt_path)
    write_loss_trace(trace_path, result.loss_trace, result.train_accuracy_trace)
    if result.final_loss is None:
        print("final train loss: n/a (0 epochs; checkpoint equals initialization)")
    else:
        print(f"final train loss: {result.final_loss:.6f}")
        print(f"final train balanced accuracy: {result.final_train_accuracy:.4f}")
    print(f"parameters: {model.param_count()}")
    print(f"checkpoint: {ckpt_path}")
    print(f"loss trace: {trace_path}")
    return 0


def cmd_eval(args) -> int:
    manifest = read_manifest(args.manifest)
    model = load_checkpoint(args.checkpoint)
    if model.spec.input_dim != manifest.feature_dim:
        raise ConfigError(
            f"checkpoint dim {model.spec.input_dim} does not match manifest "
            f"dim {manifest.feature_dim}"
        )
    if model.spec.num_classes != len(manifest.classes):
        raise ConfigError(
            f"checkpoint has {model.spec.num_classes} classes, manifest has "
            f"{len(manifest.classes)}"
        )
    validate_manifest_files(manifest)
    entries = {
        "train": manifest.train_entries,
        "test": manifest.test_entries,
        "all": lambda: manifest.entries,
    }[args.split]()
    if not entries:
        raise ConfigError(f"manifest has no {args.split} slides")
    from .heads import predict
    import numpy as np

    bags, labels = load_bags(manifest, entries)
    predictions, probabilities = [], []
    for bag in bags:
        cls, probs = predict(model, bag)
        predictions.append(cls)
        probabilities.append(probs)
    report = evaluate_predictions(
        labels, predictions, np.asarray(probabilities),
        num_classes=len(manifest.classes),
        task_name=manifest.task_name,
        method=args.method_label or Path(args.checkpoint).stem,
        seed=args.seed,
        bootstrap_resamples=args.bootstrap if args.bootstrap > 0 else None,
        bootstrap_seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = report.to_text()
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    write_report_csv([report], out_dir / "report.csv")
    sys.stdout.write(text)
    print(f"report: {out_dir / 'report.txt'}")
    return 0


def _run_suite(args, protocol: Protocol, methods: tuple[str, ...],
               bootstrap: int | None = None) -> int:
    plan = ExperimentPlan(
        manifest_path=Path(args.manifest),
        methods=methods,
        seeds=tuple(_parse_int_list(args.seeds)),
        protocol=protocol,
        train_config=_train_config(args),
        output_dir=Path(args.out),
        bootstrap_resamples=bootstrap,
    )
    records = run_plan(plan, jobs=args.jobs)
    failures = [r for r in records if r.status == "failed"]
    out_dir = Path(args.out)
    for suite in sorted({r.suite for r in records}):
        text_path = out_dir / f"summary_{suite}.txt"
        sys.stdout.write(text_path.read_text(encoding="utf-8"))
        print(f"summary: {text_path}")
    print(f"records: {out_dir / RECORDS_NAME} (plan: {out_dir / PLAN_NAME})")
    if failures:
        print(f"{len(failures)} run(s) failed; see summary", file=sys.stderr)
        return 2
    return 0


def cmd_fewshot(args) -> int:
    k_values = tuple(_parse_int_list(args.k))
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return _run_suite(args, Protocol("fewshot", k_values=k_values), methods)


def cmd_transfer(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    test_cohorts = tuple(
        c.strip() for c in args.test_cohorts.split(",") if c.strip()
    )
    if not test_cohorts:
        test_cohorts = tuple(read_manifest(args.manifest).cohorts())
    protocol = Protocol(
        "transfer", train_cohort=args.train_cohort, test_cohorts=test_cohorts
    )
    return _run_suite(args, protocol, methods)


def cmd_ablate(args) -> int:
    return _run_suite(args, Protocol("ablation"), tuple(ablation_grid()))


def cmd_report(args) -> int:
    records_path = Path(args.records) if args.records else Path(args.out) / RECORDS_NAME
    if not records_path.is_file():
        raise ConfigError(f"no records: {records_path} does not exist")
    records = load_records(records_path)
    if not records:
        raise ConfigError(f"no records in {records_path}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = sorted({r.plan_hash for r in records})
    for hash_ in hashes:
        group = [r for r in records if r.plan_hash == hash_]
        suffix = "" if len(hashes) == 1 else f"_{hash_[:8]}"
        written = write_summaries(group, out_dir, suffix=suffix)
        if len(hashes) > 1:
            print(f"plan {hash_}:")
        for path in written:
            if path.suffix == ".txt":
                sys.stdout.write(path.read_text(encoding="utf-8"))
            print(f"summary: {path}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(
        inits_per_method=args.inits,
        seed=args.seed,
        h=args.step,
        tolerance=args.tolerance,
    )
    worst = 0.0
    all_passed = True
    for label, report in results:
        status = "ok" if report.passed else "FAIL"
        print(f"{status:4s} {label:24s} max_rel_err={report.max_rel_err:.3e}")
        worst = max(worst, report.max_rel_err)
        all_passed = all_passed and report.passed
    print(f"worst max_rel_err={worst:.3e} (tolerance {args.tolerance:g})")
    if not all_passed:
        raise NumericError("finite-difference gradient check failed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
