"""Experiment suites: benchmark, few-shot curves, cohort transfer, ablation.

A suite is described by an ExperimentPlan and executed at (method, seed)
granularity; each unit of work returns one or more RunRecords (one per
few-shot K or per test cohort). Records are appended to a JSONL log bound
to a plan hash, and summary tables are pure functions of the record set,
so re-rendering from the log reproduces the tables exactly.

Determinism: every split, shuffle, initialization, and bootstrap stream is
keyed by declared seeds, never by wall clock or execution order, so running
with ``jobs > 1`` produces the same records and tables as a serial run
(wall_time_s fields aside).
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    ManifestEntry,
    few_shot_sample,
    load_bags,
    read_manifest,
    split_by_cohort,
)
from .errors import ConfigError, SlidekitError
from .heads import build_model, predict, save_checkpoint, spec_for_method
from .metrics import evaluate_predictions
from .optim import TrainConfig, train

BENCHMARK_SEEDS = (0, 1, 2, 3, 4)
TRANSFER_SEEDS = tuple(range(10))
FEWSHOT_K = (1, 5, 10, 20, 50)
BENCHMARK_METHODS = ("linear", "simlp", "abmil")
ABLATION_POOLS = ("mean", "max")
ABLATION_ACTIVATIONS = ("relu", "gelu", "swiglu")

SUITES = ("benchmark", "fewshot", "transfer", "ablation")
RECORDS_NAME = "records.jsonl"
PLAN_NAME = "plan.json"


@dataclass(frozen=True)
class Protocol:
    kind: str
    k_values: tuple[int, ...] = FEWSHOT_K
    train_cohort: str = ""
    test_cohorts: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.kind not in SUITES:
            raise ConfigError(f"unknown protocol {self.kind!r}; expected one of {SUITES}")
        if self.kind == "fewshot":
            if not self.k_values or any(k < 1 for k in self.k_values):
                raise ConfigError(f"fewshot needs k values >= 1, got {self.k_values}")
            if len(set(self.k_values)) != len(self.k_values):
                raise ConfigError(f"duplicate k values: {self.k_values}")
        if self.kind == "transfer":
            if not self.train_cohort:
                raise ConfigError("transfer protocol needs a train cohort")
            if not self.test_cohorts:
                raise ConfigError("transfer protocol needs >= 1 test cohort")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "fewshot":
            d["k_values"] = list(self.k_values)
        if self.kind == "transfer":
            d["train_cohort"] = self.train_cohort
            d["test_cohorts"] = list(self.test_cohorts)
        return d


def ablation_grid() -> list[str]:
    return [f"{p}+{a}" for p in ABLATION_POOLS for a in ABLATION_ACTIVATIONS]


@dataclass(frozen=True)
class ExperimentPlan:
    manifest_path: Path
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    protocol: Protocol
    train_config: TrainConfig
    output_dir: Path
    bootstrap_resamples: int | None = None

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("plan has no methods")
        if not self.seeds:
            raise ConfigError("plan has no seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds: {self.seeds}")
        self.protocol.validate()
        self.train_config.validate()
        for method in self.methods:
            spec_for_method(method, 8, 2)  # name check only

    def resolved_specs(self, manifest: DatasetManifest) -> dict[str, str]:
        dim, classes = manifest.feature_dim, len(manifest.classes)
        return {
            m: spec_for_method(m, dim, classes).to_text() for m in self.methods
        }


def plan_hash(plan: ExperimentPlan) -> str:
    """Binds records to the exact manifest bytes, methods, seeds, protocol."""
    manifest_digest = hashlib.sha256(
        Path(plan.manifest_path).read_bytes()
    ).hexdigest()
    manifest = read_manifest(plan.manifest_path)
    payload = {
        "record_version": 1,
        "manifest_sha256": manifest_digest,
        "methods": plan.resolved_specs(manifest),
        "seeds": list(plan.seeds),
        "protocol": plan.protocol.to_dict(),
        "train_config": asdict(plan.train_config),
        "bootstrap_resamples": plan.bootstrap_resamples,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunRecord:
    plan_hash: str
    suite: str
    method: str
    seed: int
    cell: str
    status: str = "ok"
    error: str = ""
    checkpoint: str = ""
    n_train: int = 0
    n_test: int = 0
    train_hash: str = ""
    test_hash: str = ""
    metrics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    wall_time_s: float = 0.0  # informational; excluded from idempotency checks

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))

    def metric_value(self, name: str) -> float:
        return self.metrics[name]["value"]


def _ids_hash(entries: list[ManifestEntry]) -> str:
    blob = "\n".join(sorted(e.slide_id for e in entries))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _evaluate_model(model, manifest, entries):
    bags, labels = load_bags(manifest, entries)
    predictions = []
    probabilities = []
    for bag in bags:
        cls, probs = predict(model, bag)
        predictions.append(cls)
        probabilities.append(probs)
    return labels, predictions, np.asarray(probabilities)


def _report_to_metrics(report) -> dict:
    out = {}
    for name, result in report.metrics.items():
        entry = {"value": result.value}
        if result.ci_lower is not None:
            entry["ci_lower"] = result.ci_lower
            entry["ci_upper"] = result.ci_upper
        out[name] = entry
    return out


def _train_on_entries(plan, manifest, method, seed, train_entries):
    spec = spec_for_method(method, manifest.feature_dim, len(manifest.classes))
    model = build_model(spec, seed)
    bags, labels = load_bags(manifest, train_entries)
    train(model, bags, labels, plan.train_config, seed)
    return model


def _checkpoint_rel(suite: str, method: str, seed: int, cell: str = "") -> str:
    stem = f"{suite}_{method}_seed{seed}"
    if cell:
        stem += f"_{cell.replace('=', '')}"
    return f"checkpoints/{stem}.ckpt"


def run_unit(plan: ExperimentPlan, hash_: str, method: str, seed: int) -> list[RunRecord]:
    """All records for one (method, seed) under the plan's protocol."""
    manifest = read_manifest(plan.manifest_path)
    suite = plan.protocol.kind
    out_dir = Path(plan.output_dir)
    records: list[RunRecord] = []

    def failed(cell: str, exc: Exception) -> RunRecord:
        return RunRecord(
            plan_hash=hash_, suite=suite, method=method, seed=seed,
            cell=cell, status="failed", error=f"{type(exc).__name__}: {exc}",
        )

    def evaluate_to_record(
        model, train_entries, test_entries, cell: str, *,
        checkpoint_rel: str, warnings: list[str], started: float,
    ) -> RunRecord:
        labels, preds, probs = _evaluate_model(model, manifest, test_entries)
        report = evaluate_predictions(
            labels, preds, probs,
            num_classes=len(manifest.classes),
            task_name=manifest.task_name, method=method, seed=seed,
            bootstrap_resamples=plan.bootstrap_resamples, bootstrap_seed=seed,
        )
        return RunRecord(
            plan_hash=hash_, suite=suite, method=method, seed=seed, cell=cell,
            checkpoint=checkpoint_rel,
            n_train=len(train_entries), n_test=len(test_entries),
            train_hash=_ids_hash(train_entries), test_hash=_ids_hash(test_entries),
            metrics=_report_to_metrics(report),
            warnings=list(warnings) + list(report.notes),
            wall_time_s=round(time.perf_counter() - started, 6),
        )

    if suite in ("benchmark", "ablation"):
        cell = method if suite == "ablation" else "full"
        started = time.perf_counter()
        try:
            train_entries = manifest.train_entries()
            test_entries = manifest.test_entries()
            model = _train_on_entries(plan, manifest, method, seed, train_entries)
            rel = _checkpoint_rel(suite, method, seed)
            save_checkpoint(model, out_dir / rel)
            records.append(evaluate_to_record(
                model, train_entries, test_entries, cell,
                checkpoint_rel=rel, warnings=[], started=started,
            ))
        except SlidekitError as exc:
            records.append(failed(cell, exc))

    elif suite == "fewshot":
        test_entries = manifest.test_entries()
        for k in plan.protocol.k_values:
            cell = f"K={k}"
            started = time.perf_counter()
            try:
                subset, warnings = few_shot_sample(manifest, k, seed)
                train_entries = subset.train_entries()
                model = _train_on_entries(plan, manifest, method, seed, train_entries)
                rel = _checkpoint_rel(suite, method, seed, cell)
                save_checkpoint(model, out_dir / rel)
                records.append(evaluate_to_record(
                    model, train_entries, test_entries, cell,
                    checkpoint_rel=rel, warnings=warnings, started=started,
                ))
            except SlidekitError as exc:
                records.append(failed(cell, exc))

    elif suite == "transfer":
        proto = plan.protocol
        started = time.perf_counter()
        try:
            split = split_by_cohort(manifest, proto.train_cohort, list(proto.test_cohorts))
            model = _train_on_entries(plan, manifest, method, seed, split.train)
            rel = _checkpoint_rel(suite, method, seed)
            save_checkpoint(model, out_dir / rel)
        except SlidekitError as exc:
            records.append(failed("train", exc))
            return records
        for cohort in proto.test_cohorts:
            try:
                records.append(evaluate_to_record(
                    model, split.train, split.test_sets[cohort], cohort,
                    checkpoint_rel=rel, warnings=[], started=started,
                ))
            except SlidekitError as exc:
                records.append(failed(cohort, exc))
            started = time.perf_counter()

    else:
        raise ConfigError(f"unknown suite {suite!r}")
    return records


def _run_unit_star(args) -> list[RunRecord]:
    return run_unit(*args)


def run_plan(plan: ExperimentPlan, *, jobs: int = 1) -> list[RunRecord]:
    """Execute the plan, append records, and write summary tables.

    Units run independently (optionally in parallel processes); records are
    collected in plan order and appended by this single writer.
    """
    plan.validate()
    manifest = read_manifest(plan.manifest_path)  # validates early
    if plan.protocol.kind == "transfer":
        missing = set([plan.protocol.train_cohort, *plan.protocol.test_cohorts]) - set(
            manifest.cohorts()
        )
        if missing:
            raise ConfigError(f"cohorts not in manifest: {sorted(missing)}")
    out_dir = Path(plan.output_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    hash_ = plan_hash(plan)
    (out_dir / PLAN_NAME).write_text(json.dumps({
        "plan_hash": hash_,
        "manifest_path": str(plan.manifest_path),
        "methods": list(plan.methods),
        "resolved_specs": plan.resolved_specs(manifest),
        "seeds": list(plan.seeds),
        "protocol": plan.protocol.to_dict(),
        "train_config": asdict(plan.train_config),
        "bootstrap_resamples": plan.bootstrap_resamples,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    units = [(plan, hash_, method, seed) for method in plan.methods for seed in plan.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_unit = list(pool.map(_run_unit_star, units))
    else:
        per_unit = [_run_unit_star(unit) for unit in units]
    records = [record for unit_records in per_unit for record in unit_records]
    with open(out_dir / RECORDS_NAME, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
    write_summaries(records, out_dir)
    return records


def load_records(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(line))
    return records


# -- summary tables -----------------------------------------------------------

_TABLE_METRICS = ("balanced_accuracy", "roc_auc", "weighted_f1")


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


def _group(records, key):
    groups: dict = {}
    for record in records:
        if record.status == "ok":
            groups.setdefault(key(record), []).append(record)
    return groups


def _render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells):
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(cells)).rstrip()
    ruler = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), ruler] + [fmt(r) for r in rows]) + "\n"


def _write_csv(path: Path, headers: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def summarize_benchmark(records: list[RunRecord]) -> tuple[list[str], list[list[str]]]:
    """One row per method, ranked by seed-mean balanced accuracy."""
    groups = _group(records, key=lambda r: r.method)
    headers = ["method", "seeds"]
    for metric in _TABLE_METRICS:
        headers += [f"{metric}_mean", f"{metric}_std"]
    rows = []
    for method, recs in groups.items():
        row = [method, str(len(recs))]
        for metric in _TABLE_METRICS:
            values = [r.metric_value(metric) for r in recs if metric in r.metrics]
            if values:
                mean, std = _mean_std(values)
                row += [f"{mean:.4f}", f"{std:.4f}"]
            else:
                row += ["--", "--"]
        rows.append(row)
    rows.sort(key=lambda row: (row[2] != "--", row[2]), reverse=True)
    return headers, rows


def summarize_fewshot(records: list[RunRecord]) -> tuple[list[str], list[list[str]]]:
    """Mean +/- std balanced accuracy per (method, K)."""
    groups = _group(records, key=lambda r: (r.method, int(r.cell.split("=")[1])))
    headers = ["method", "k", "seeds", "balanced_accuracy_mean", "balanced_accuracy_std"]
    rows = []
    for (method, k), recs in sorted(groups.items()):
        mean, std = _mean_std([r.metric_value("balanced_accuracy") for r in recs])
        rows.append([method, str(k), str(len(recs)), f"{mean:.4f}", f"{std:.4f}"])
    return headers, rows


def summarize_transfer(records: list[RunRecord]) -> tuple[list[str], list[list[str]]]:
    """Per-method per-cohort mean and std over seeds (stability table)."""
    groups = _group(records, key=lambda r: (r.method, r.cell))
    headers = ["method", "cohort", "seeds",
               "balanced_accuracy_mean", "balanced_accuracy_std"]
    rows = []
    for (method, cohort), recs in sorted(groups.items()):
        mean, std = _mean_std([r.metric_value("balanced_accuracy") for r in recs])
        rows.append([method, cohort, str(len(recs)), f"{mean:.4f}", f"{std:.4f}"])
    return headers, rows


def summarize_ablation(records: list[RunRecord]) -> tuple[list[str], list[list[str]]]:
    """Pooling x activation grid; one row per cell with all three metrics."""
    groups = _group(records, key=lambda r: r.method)
    headers = ["pooling", "activation", "seeds"] + [
        f"{metric}_mean" for metric in _TABLE_METRICS
    ]
    rows = []
    for cell in sorted(groups):
        recs = groups[cell]
        pool, _, act = cell.partition("+")
        row = [pool, act, str(len(recs))]
        for metric in _TABLE_METRICS:
            values = [r.metric_value(metric) for r in recs if metric in r.metrics]
            row.append(f"{_mean_std(values)[0]:.4f}" if values else "--")
        rows.append(row)
    return headers, rows


_SUMMARIZERS = {
    "benchmark": summarize_benchmark,
    "fewshot": summarize_fewshot,
    "transfer": summarize_transfer,
    "ablation": summarize_ablation,
}


def write_summaries(
    records: list[RunRecord], out_dir: str | Path, *, suffix: str = ""
) -> list[Path]:
    """Render CSV + aligned-text tables for every suite present in records."""
    out_dir = Path(out_dir)
    written = []
    suites = sorted({r.suite for r in records})
    for suite in suites:
        suite_records = [r for r in records if r.suite == suite]
        headers, rows = _SUMMARIZERS[suite](suite_records)
        csv_path = out_dir / f"summary_{suite}{suffix}.csv"
        txt_path = out_dir / f"summary_{suite}{suffix}.txt"
        _write_csv(csv_path, headers, rows)
        text = _render_table(headers, rows)
        failures = [r for r in suite_records if r.status == "failed"]
        if failures:
            text += "\nfailed runs:\n" + "".join(
                f"  {r.method} seed={r.seed} cell={r.cell}: {r.error}\n"
                for r in failures
            )
        txt_path.write_text(text, encoding="utf-8")
        written += [csv_path, txt_path]
    return written
