"""End-to-end command-line behavior: artifacts, exit codes, wiring."""

import numpy as np
import pytest

from slidekit.cli import main
from slidekit.data import read_manifest
from slidekit.heads import SlideModel, load_checkpoint, spec_for_method

SYNTH_SMALL = [
    "synth", "--classes", "3", "--dim", "8", "--train-per-class", "4",
    "--test-per-class", "2", "--patches-min", "4", "--patches-max", "8",
    "--separation", "3.0", "--seed", "1",
]
FAST = ["--lr", "3e-3", "--epochs", "6"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    assert main(SYNTH_SMALL + ["--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    code = main(["train", "--manifest", str(corpus / "manifest.tsv"),
                 "--method", "linear", "--seed", "0", "--out", str(out)] + FAST)
    assert code == 0
    return out / "linear_seed0.ckpt"


# -- synth ----------------------------------------------------------------------


def test_synth_writes_corpus_and_prints_summary(corpus, capsys):
    manifest = read_manifest(corpus / "manifest.tsv")
    assert len(manifest.entries) == 3 * (4 + 2)
    for entry in manifest.entries:
        assert manifest.embedding_path(entry).is_file()


def test_synth_is_deterministic_across_directories(tmp_path):
    assert main(SYNTH_SMALL + ["--out", str(tmp_path / "a")]) == 0
    assert main(SYNTH_SMALL + ["--out", str(tmp_path / "b")]) == 0
    a_manifest = (tmp_path / "a" / "manifest.tsv").read_bytes()
    assert a_manifest == (tmp_path / "b" / "manifest.tsv").read_bytes()
    manifest = read_manifest(tmp_path / "a" / "manifest.tsv")
    for entry in manifest.entries:
        assert (tmp_path / "a" / entry.path).read_bytes() == (
            tmp_path / "b" / entry.path).read_bytes()


def test_synth_validates_before_touching_disk(tmp_path, capsys):
    target = tmp_path / "never_created"
    code = main(SYNTH_SMALL[:1] + ["--rho", "1.5", "--out", str(target)])
    assert code == 1
    assert not target.exists()
    assert "informative_fraction" in capsys.readouterr().err


def test_synth_refuses_nonempty_dir_without_force(tmp_path, capsys):
    target = tmp_path / "busy"
    target.mkdir()
    (target / "keep.txt").write_text("x")
    assert main(SYNTH_SMALL + ["--out", str(target)]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(SYNTH_SMALL + ["--out", str(target), "--force"]) == 0


def test_usage_errors_exit_one(capsys):
    assert main(["synth", "--no-such-flag"]) == 1
    assert main(["teleport"]) == 1
    assert main([]) == 1
    capsys.readouterr()  # swallow usage noise


# -- train ------------------------------------------------------------------------


def test_train_writes_checkpoint_and_trace(corpus, trained, capsys):
    assert trained.is_file()
    trace = trained.with_name("linear_seed0_trace.csv")
    lines = trace.read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,train_bal_acc"
    assert len(lines) == 1 + 6  # header + one row per epoch
    losses = [float(line.split(",")[1]) for line in lines[1:]]
    assert losses[-1] < losses[0]


def test_train_zero_epochs_equals_initialization(corpus, tmp_path, capsys):
    out = tmp_path / "zero"
    code = main(["train", "--manifest", str(corpus / "manifest.tsv"),
                 "--method", "simlp", "--seed", "3", "--out", str(out),
                 "--epochs", "0"])
    assert code == 0
    assert "0 epochs" in capsys.readouterr().out
    loaded = load_checkpoint(out / "simlp_seed3.ckpt")
    fresh = SlideModel.build(spec_for_method("simlp", 8, 3), seed=3)
    for (_, a, _), (_, b, _) in zip(loaded.parameter_blocks(),
                                    fresh.parameter_blocks()):
        np.testing.assert_array_equal(a, b)


def test_train_missing_embedding_exits_one_naming_slide(corpus, tmp_path, capsys):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(corpus, broken)
    manifest = read_manifest(broken / "manifest.tsv")
    victim = manifest.entries[0]
    manifest.embedding_path(victim).unlink()
    code = main(["train", "--manifest", str(broken / "manifest.tsv"),
                 "--method", "linear", "--out", str(tmp_path / "out")] + FAST)
    assert code == 1
    assert victim.slide_id in capsys.readouterr().err


def test_train_rejects_unknown_method(corpus, tmp_path, capsys):
    code = main(["train", "--manifest", str(corpus / "manifest.tsv"),
                 "--method", "transformer", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "transformer" in capsys.readouterr().err


# -- eval -------------------------------------------------------------------------


def test_eval_train_split_of_separable_corpus_is_perfect(corpus, trained,
                                                         tmp_path, capsys):
    out = tmp_path / "eval"
    code = main(["eval", "--manifest", str(corpus / "manifest.tsv"),
                 "--checkpoint", str(trained), "--split", "train",
                 "--bootstrap", "0", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "balanced_accuracy: 1.0000" in text
    assert (out / "report.txt").is_file()
    assert (out / "report.csv").is_file()


def test_eval_bootstrap_changes_cis_not_point_estimates(corpus, trained,
                                                        tmp_path, capsys):
    def run(bootstrap, sub):
        out = tmp_path / sub
        assert main(["eval", "--manifest", str(corpus / "manifest.tsv"),
                     "--checkpoint", str(trained), "--bootstrap", bootstrap,
                     "--out", str(out)]) == 0
        capsys.readouterr()
        return (out / "report.txt").read_text()

    plain = run("0", "plain")
    booted = run("150", "booted")
    assert "95% CI" not in plain
    assert "95% CI" in booted
    assert "150 resamples" in booted

    def points(text):
        return [line.split(" (")[0] for line in text.splitlines()
                if line.split(":")[0] in ("balanced_accuracy", "weighted_f1",
                                          "accuracy", "roc_auc")]

    assert points(plain) == points(booted)


def test_eval_rejects_mismatched_checkpoint(trained, tmp_path, capsys):
    other = tmp_path / "other_corpus"
    assert main(["synth", "--classes", "3", "--dim", "12",
                 "--train-per-class", "2", "--test-per-class", "1",
                 "--patches-min", "2", "--patches-max", "3",
                 "--out", str(other)]) == 0
    code = main(["eval", "--manifest", str(other / "manifest.tsv"),
                 "--checkpoint", str(trained), "--out", str(tmp_path / "e")])
    assert code == 1
    assert "does not match manifest" in capsys.readouterr().err


# -- experiment suites --------------------------------------------------------------


def test_fewshot_command_runs_and_prints_summary(corpus, tmp_path, capsys):
    out = tmp_path / "fs"
    code = main(["fewshot", "--manifest", str(corpus / "manifest.tsv"),
                 "--methods", "linear", "--k", "1,2", "--seeds", "0-1",
                 "--out", str(out)] + FAST)
    assert code == 0
    stdout = capsys.readouterr().out
    assert "balanced_accuracy_mean" in stdout
    assert (out / "records.jsonl").is_file()
    assert (out / "summary_fewshot.csv").is_file()


def test_transfer_command_defaults_to_all_cohorts(tmp_path, capsys):
    root = tmp_path / "cohorts"
    assert main(SYNTH_SMALL + ["--out", str(root), "--cohorts", "2",
                               "--cohort-shift", "1.0"]) == 0
    out = tmp_path / "tr"
    code = main(["transfer", "--manifest", str(root / "manifest.tsv"),
                 "--methods", "linear", "--train-cohort", "cohort_00",
                 "--seeds", "0", "--out", str(out)] + FAST)
    assert code == 0
    stdout = capsys.readouterr().out
    assert "cohort_00" in stdout and "cohort_01" in stdout


def test_ablate_command_covers_the_grid(corpus, tmp_path, capsys):
    out = tmp_path / "ab"
    code = main(["ablate", "--manifest", str(corpus / "manifest.tsv"),
                 "--seeds", "0", "--out", str(out), "--lr", "1e-3",
                 "--epochs", "1"])
    assert code == 0
    stdout = capsys.readouterr().out
    for pool in ("mean", "max"):
        assert pool in stdout
    records = (out / "records.jsonl").read_text().splitlines()
    assert len(records) == 6  # pools x activations, one seed


def test_report_rerenders_from_records(corpus, tmp_path, capsys):
    out = tmp_path / "fs"
    assert main(["fewshot", "--manifest", str(corpus / "manifest.tsv"),
                 "--methods", "linear", "--k", "1", "--seeds", "0",
                 "--out", str(out)] + FAST) == 0
    capsys.readouterr()
    assert main(["report", "--records", str(out / "records.jsonl"),
                 "--out", str(tmp_path / "rerender")]) == 0
    stdout = capsys.readouterr().out
    assert "balanced_accuracy_mean" in stdout
    assert (tmp_path / "rerender" / "summary_fewshot.txt").is_file()


def test_report_with_no_records_exits_one(tmp_path, capsys):
    assert main(["report", "--records", str(tmp_path / "none.jsonl"),
                 "--out", str(tmp_path)]) == 1
    (tmp_path / "empty.jsonl").write_text("")
    assert main(["report", "--records", str(tmp_path / "empty.jsonl"),
                 "--out", str(tmp_path)]) == 1
    capsys.readouterr()


# -- gradcheck ------------------------------------------------------------------------


def test_gradcheck_command_passes_and_prints_lines(capsys):
    code = main(["gradcheck", "--inits", "1"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert stdout.count("ok") >= 5  # one line per method at least
    assert "worst max_rel_err=" in stdout
    assert "FAIL" not in stdout
