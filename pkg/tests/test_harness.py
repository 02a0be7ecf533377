"""Experiment planning, execution, failure recording, and summaries."""

import json
import shutil
from dataclasses import asdict
from pathlib import Path

import pytest

from slidekit.data import SynthConfig, generate_synthetic_corpus, read_manifest
from slidekit.errors import ConfigError
from slidekit.harness import (
    ExperimentPlan,
    Protocol,
    RunRecord,
    ablation_grid,
    load_records,
    plan_hash,
    run_plan,
    summarize_benchmark,
    write_summaries,
)
from slidekit.optim import TrainConfig

FAST_TRAIN = TrainConfig(learning_rate=1e-3, epochs=2)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    config = SynthConfig(num_classes=3, feature_dim=8, train_slides_per_class=4,
                         test_slides_per_class=2, patches_min=2, patches_max=4,
                         num_cohorts=2, cohort_shift=1.0, class_separation=3.0,
                         seed=11)
    root = tmp_path_factory.mktemp("harness_corpus")
    _, manifest_path = generate_synthetic_corpus(config, root)
    return manifest_path


def make_plan(manifest_path, out_dir, *, methods=("linear", "simlp"),
              seeds=(0, 1), protocol=Protocol("benchmark"),
              bootstrap=None, train_config=FAST_TRAIN):
    return ExperimentPlan(
        manifest_path=Path(manifest_path),
        methods=tuple(methods),
        seeds=tuple(seeds),
        protocol=protocol,
        train_config=train_config,
        output_dir=Path(out_dir),
        bootstrap_resamples=bootstrap,
    )


def strip_timing(records):
    rows = []
    for record in records:
        row = asdict(record)
        row.pop("wall_time_s")
        rows.append(row)
    return rows


# -- plan validation and hashing ------------------------------------------------


def test_plan_validation(corpus, tmp_path):
    with pytest.raises(ConfigError):
        make_plan(corpus, tmp_path, methods=()).validate()
    with pytest.raises(ConfigError):
        make_plan(corpus, tmp_path, seeds=(0, 0)).validate()
    with pytest.raises(ConfigError):
        make_plan(corpus, tmp_path, methods=("resnet",)).validate()
    with pytest.raises(ConfigError):
        make_plan(corpus, tmp_path,
                  protocol=Protocol("fewshot", k_values=(1, 1))).validate()
    with pytest.raises(ConfigError):
        make_plan(corpus, tmp_path, protocol=Protocol("transfer")).validate()
    with pytest.raises(ConfigError):
        Protocol("holdout").validate()


def test_ablation_grid_is_the_full_product():
    grid = ablation_grid()
    assert len(grid) == 6
    assert "mean+relu" in grid and "max+swiglu" in grid


def test_plan_hash_sensitivity(corpus, tmp_path):
    base = plan_hash(make_plan(corpus, tmp_path / "a"))
    assert len(base) == 16
    # output location does not alter identity
    assert plan_hash(make_plan(corpus, tmp_path / "b")) == base
    # every scientific knob does
    assert plan_hash(make_plan(corpus, tmp_path, seeds=(0, 2))) != base
    assert plan_hash(make_plan(corpus, tmp_path, methods=("linear",))) != base
    assert plan_hash(make_plan(corpus, tmp_path, bootstrap=200)) != base
    assert plan_hash(make_plan(
        corpus, tmp_path, train_config=TrainConfig(learning_rate=2e-3, epochs=2),
    )) != base
    assert plan_hash(make_plan(
        corpus, tmp_path, protocol=Protocol("fewshot", k_values=(1, 2)),
    )) != base


def test_plan_hash_tracks_manifest_bytes(corpus, tmp_path):
    base = plan_hash(make_plan(corpus, tmp_path))
    moved = tmp_path / "copy"
    shutil.copytree(Path(corpus).parent, moved)
    # identical bytes elsewhere: same identity
    assert plan_hash(make_plan(moved / "manifest.tsv", tmp_path)) == base
    # touch one byte of the manifest: new identity
    text = (moved / "manifest.tsv").read_text().replace("synth", "synthx")
    (moved / "manifest.tsv").write_text(text)
    assert plan_hash(make_plan(moved / "manifest.tsv", tmp_path)) != base


# -- benchmark protocol ------------------------------------------------------------


def test_benchmark_run_records_and_artifacts(corpus, tmp_path):
    plan = make_plan(corpus, tmp_path, bootstrap=100)
    records = run_plan(plan)
    assert len(records) == 2 * 2  # methods x seeds
    assert all(r.status == "ok" for r in records)
    assert {(r.method, r.seed) for r in records} == {
        ("linear", 0), ("linear", 1), ("simlp", 0), ("simlp", 1)
    }
    hash_ = plan_hash(plan)
    for record in records:
        assert record.plan_hash == hash_
        assert record.suite == "benchmark" and record.cell == "full"
        assert (tmp_path / record.checkpoint).is_file()
        assert record.n_train == 24 and record.n_test == 12
        assert set(record.metrics) == {"balanced_accuracy", "weighted_f1",
                                       "accuracy", "roc_auc"}
        for entry in record.metrics.values():
            assert {"value", "ci_lower", "ci_upper"} <= set(entry)
    # every method trains and tests on the same split under one plan
    assert len({r.train_hash for r in records}) == 1
    assert len({r.test_hash for r in records}) == 1
    # artifacts on disk
    assert (tmp_path / "plan.json").is_file()
    assert (tmp_path / "records.jsonl").is_file()
    assert (tmp_path / "summary_benchmark.csv").is_file()
    assert (tmp_path / "summary_benchmark.txt").is_file()
    plan_doc = json.loads((tmp_path / "plan.json").read_text())
    assert plan_doc["plan_hash"] == hash_
    assert set(plan_doc["resolved_specs"]) == {"linear", "simlp"}
    # point estimates only when bootstrap is off
    plain = run_plan(make_plan(corpus, tmp_path / "plain"))
    assert all(set(e) == {"value"}
               for r in plain for e in r.metrics.values())


def test_records_file_roundtrip(corpus, tmp_path):
    plan = make_plan(corpus, tmp_path, methods=("linear",), seeds=(0,))
    records = run_plan(plan)
    loaded = load_records(tmp_path / "records.jsonl")
    assert strip_timing(loaded) == strip_timing(records)


def test_rerun_is_idempotent(corpus, tmp_path):
    plan = make_plan(corpus, tmp_path, methods=("linear", "abmil"), seeds=(0,))
    first = run_plan(plan)
    checkpoints = {r.checkpoint: (tmp_path / r.checkpoint).read_bytes()
                   for r in first}
    summary = (tmp_path / "summary_benchmark.txt").read_text()
    second = run_plan(plan)
    assert strip_timing(first) == strip_timing(second)
    for rel, payload in checkpoints.items():
        assert (tmp_path / rel).read_bytes() == payload
    assert (tmp_path / "summary_benchmark.txt").read_text() == summary
    # the append-only log now holds both passes
    assert len(load_records(tmp_path / "records.jsonl")) == len(first) * 2


def test_parallel_execution_matches_serial(corpus, tmp_path):
    serial = run_plan(make_plan(corpus, tmp_path / "serial"))
    parallel = run_plan(make_plan(corpus, tmp_path / "parallel"), jobs=2)
    assert strip_timing(serial) == strip_timing(parallel)
    for name in ("summary_benchmark.csv", "summary_benchmark.txt"):
        assert (tmp_path / "serial" / name).read_bytes() == (
            tmp_path / "parallel" / name).read_bytes()


# -- fewshot protocol ----------------------------------------------------------


def test_fewshot_records(corpus, tmp_path):
    plan = make_plan(corpus, tmp_path, methods=("linear",), seeds=(0, 1),
                     protocol=Protocol("fewshot", k_values=(1, 2, 99)))
    records = run_plan(plan)
    assert len(records) == 1 * 2 * 3  # methods x seeds x K
    by_cell = {}
    for record in records:
        assert record.status == "ok"
        by_cell.setdefault(record.cell, []).append(record)
    assert set(by_cell) == {"K=1", "K=2", "K=99"}
    for record in by_cell["K=1"]:
        assert record.n_train == 3  # one slide per class
    for record in by_cell["K=2"]:
        assert record.n_train == 6
    for record in by_cell["K=99"]:
        assert record.n_train == 24  # clamped to the full train split
        assert any("clamped" in w for w in record.warnings)
    # the test set never moves across K or seeds
    assert len({r.test_hash for r in records}) == 1
    # but the sampled train sets do move with the seed
    k1 = by_cell["K=1"]
    assert k1[0].train_hash != k1[1].train_hash
    assert (tmp_path / "summary_fewshot.txt").is_file()


# -- transfer protocol ------------------------------------------------------------


def test_transfer_records(corpus, tmp_path):
    protocol = Protocol("transfer", train_cohort="cohort_00",
                        test_cohorts=("cohort_00", "cohort_01"))
    plan = make_plan(corpus, tmp_path, methods=("linear",), seeds=(0, 1, 2),
                     protocol=protocol)
    records = run_plan(plan)
    assert len(records) == 1 * 3 * 2  # methods x seeds x cohorts
    manifest = read_manifest(corpus)
    internal = [r for r in records if r.cell == "cohort_00"]
    external = [r for r in records if r.cell == "cohort_01"]
    assert len(internal) == len(external) == 3
    for record in internal:
        assert record.n_train == 12  # train split of the train cohort
        assert record.n_test == 6  # its held-out test split
    for record in external:
        assert record.n_test == 18  # every cohort_01 slide
    assert len(manifest.entries) == 36
    # one checkpoint per (method, seed), shared by both cohort evaluations
    assert len({r.checkpoint for r in records}) == 3
    assert (tmp_path / "summary_transfer.txt").is_file()


def test_transfer_unknown_cohort_fails_before_running(corpus, tmp_path):
    protocol = Protocol("transfer", train_cohort="cohort_07",
                        test_cohorts=("cohort_00",))
    with pytest.raises(ConfigError, match="cohort_07"):
        run_plan(make_plan(corpus, tmp_path, protocol=protocol))
    assert not (tmp_path / "records.jsonl").exists()


# -- failure recording -----------------------------------------------------------


def test_missing_embedding_becomes_a_failed_record(corpus, tmp_path):
    broken_root = tmp_path / "broken"
    shutil.copytree(Path(corpus).parent, broken_root)
    manifest = read_manifest(broken_root / "manifest.tsv")
    victim = next(e for e in manifest.entries if e.split == "train")
    manifest.embedding_path(victim).unlink()

    plan = make_plan(broken_root / "manifest.tsv", tmp_path / "out",
                     methods=("linear",), seeds=(0,))
    records = run_plan(plan)
    assert len(records) == 1
    assert records[0].status == "failed"
    assert victim.slide_id in records[0].error
    assert "ManifestError" in records[0].error
    summary = (tmp_path / "out" / "summary_benchmark.txt").read_text()
    assert "failed runs:" in summary
    assert victim.slide_id in summary


# -- summary tables ----------------------------------------------------------------


def fake_record(method, seed, bal_acc, status="ok"):
    metrics = {} if status != "ok" else {
        "balanced_accuracy": {"value": bal_acc},
        "roc_auc": {"value": bal_acc},
        "weighted_f1": {"value": bal_acc},
    }
    return RunRecord(plan_hash="x", suite="benchmark", method=method, seed=seed,
                     cell="full", status=status, metrics=metrics,
                     error="boom" if status == "failed" else "")


def test_summarize_benchmark_ranks_methods():
    records = [fake_record("weak", s, 0.6 + 0.01 * s) for s in range(3)]
    records += [fake_record("strong", s, 0.9) for s in range(3)]
    headers, rows = summarize_benchmark(records)
    assert rows[0][0] == "strong"
    assert rows[1][0] == "weak"
    assert headers[2] == "balanced_accuracy_mean"
    assert rows[0][2] == "0.9000"


def test_write_summaries_reports_failures(tmp_path):
    records = [fake_record("linear", 0, 0.8),
               fake_record("linear", 1, 0.0, status="failed")]
    paths = write_summaries(records, tmp_path, suffix="_test")
    assert {p.name for p in paths} == {"summary_benchmark_test.csv",
                                       "summary_benchmark_test.txt"}
    text = (tmp_path / "summary_benchmark_test.txt").read_text()
    assert "failed runs:" in text and "boom" in text
