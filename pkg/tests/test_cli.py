"""End-to-end command-line contract tests: exit codes, manifests, run-dir
protection, config merging, and each subcommand's artifacts.

All invocations run in-process through ``nob.cli.main`` against small
datasets generated once per module.
"""

from __future__ import annotations

import json
import os
import shutil

import pytest

from nob.cli import main

DON_TINY = {"architecture": "don",
            "model": {"p": 4, "branch_layers": 1, "branch_width": 5,
                      "trunk_layers": 1, "trunk_width": 5},
            "epochs": 2, "batch_size": 3, "seeds": [0]}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Module sandbox with generated train/test containers and one run."""
    root = tmp_path_factory.mktemp("cli")
    train = str(root / "train.bin")
    test = str(root / "test.bin")
    assert main(["generate", "--split", "train", "--n", "6", "--seed", "0",
                 "--resolution", "16x16", "--out", train]) == 0
    assert main(["generate", "--split", "test", "--n", "4", "--seed", "1",
                 "--resolution", "16x16", "--norm-from", train,
                 "--out", test]) == 0
    cfg_path = str(root / "don.json")
    with open(cfg_path, "w") as fh:
        json.dump(DON_TINY, fh)
    run = str(root / "train_run")
    assert main(["train", "--config", cfg_path, "--train-data", train,
                 "--val-data", test, "--out", run]) == 0
    return {"root": root, "train": train, "test": test, "config": cfg_path,
            "run": run, "checkpoint": os.path.join(run, "checkpoint_seed0.bin")}


@pytest.mark.parametrize("cmd", [[], ["generate"], ["train"], ["eval"],
                                 ["bench"], ["tune"], ["invariance"],
                                 ["report"]])
def test_help_exits_zero_and_lists_defaults(cmd, capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(cmd + ["--help"])
    assert exit_info.value.code == 0
    out = capsys.readouterr().out
    assert "usage:" in out
    if cmd:
        assert "default" in out       # ArgumentDefaultsHelpFormatter


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(["--version"])
    assert exit_info.value.code == 0
    assert capsys.readouterr().out.strip()


def test_generate_sidecar_and_overwrite_protection(work, capsys):
    sidecar = json.load(open(work["train"] + ".manifest.json"))
    assert sidecar["command"] == "generate"
    assert sidecar["config"]["n"] == 6
    digest = sidecar["dataset_hashes"][work["train"]]
    assert digest.startswith("sha256:")
    assert main(["generate", "--split", "train", "--n", "2",
                 "--out", work["train"]]) == 2
    assert "config error at generate.out" in capsys.readouterr().err
    # --force replaces; write to a scratch copy so the fixture data survives
    scratch = str(work["root"] / "scratch.bin")
    assert main(["generate", "--split", "test", "--n", "2",
                 "--resolution", "16x16", "--out", scratch]) == 0
    assert main(["generate", "--split", "test", "--n", "2",
                 "--resolution", "16x16", "--out", scratch, "--force"]) == 0


def test_generate_rejects_bad_resolution(work, capsys):
    assert main(["generate", "--split", "train", "--n", "1",
                 "--resolution", "16by16",
                 "--out", str(work["root"] / "bad.bin")]) == 2
    assert "generate.resolution" in capsys.readouterr().err


def test_train_artifacts_and_manifest(work):
    run = work["run"]
    expected = {"checkpoint_seed0.bin", "history_seed0.csv", "summary.json",
                "manifest.json"}
    assert expected <= set(os.listdir(run))
    manifest = json.load(open(os.path.join(run, "manifest.json")))
    assert sorted(manifest) == ["artifacts", "command", "config",
                                "dataset_hashes", "input_paths", "seeds",
                                "tool_version"]
    assert manifest["command"] == "train"
    assert manifest["config"]["architecture"] == "don"
    assert manifest["config"]["epochs"] == 2
    assert manifest["seeds"] == [0]
    assert manifest["artifacts"] == sorted(manifest["artifacts"])
    assert set(manifest["input_paths"]) == {"train_data", "val_data"}
    summary = json.load(open(os.path.join(run, "summary.json")))
    assert summary["architecture"] == "don"


def test_train_run_dir_protection(work, capsys):
    assert main(["train", "--config", work["config"],
                 "--train-data", work["train"], "--out", work["run"]]) == 2
    assert "config error at train.out" in capsys.readouterr().err


def test_train_rejects_unknown_config_field(work, capsys):
    bad = str(work["root"] / "bad_cfg.json")
    with open(bad, "w") as fh:
        json.dump({"architecture": "don", "epoch": 3}, fh)
    assert main(["train", "--config", bad, "--train-data", work["train"],
                 "--out", str(work["root"] / "never")]) == 2
    assert "config error at train.epoch: unknown field" \
        in capsys.readouterr().err
    assert not os.path.exists(str(work["root"] / "never"))


def test_train_flag_overrides_config_file(work):
    out = str(work["root"] / "override_run")
    assert main(["train", "--config", work["config"], "--train-data",
                 work["train"], "--out", out, "--epochs", "1"]) == 0
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["config"]["epochs"] == 1


def test_train_multi_seed_artifacts(work):
    out = str(work["root"] / "multiseed_run")
    assert main(["train", "--config", work["config"], "--train-data",
                 work["train"], "--out", out, "--epochs", "1",
                 "--seeds", "0,1"]) == 0
    names = set(os.listdir(out))
    assert {"checkpoint_seed0.bin", "checkpoint_seed1.bin",
            "history_seed0.csv", "history_seed1.csv"} <= names
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["summary"]["train_loss"].keys() == {"mean", "std"}


def test_train_pod_variant_fits_basis_and_restores(work, capsys):
    cfg_path = str(work["root"] / "pod.json")
    with open(cfg_path, "w") as fh:
        json.dump({"architecture": "pod_don",
                   "model": {"p": 4, "branch_layers": 1, "branch_width": 5},
                   "epochs": 1, "batch_size": 3, "seeds": [0]}, fh)
    out = str(work["root"] / "pod_run")
    assert main(["train", "--config", cfg_path, "--train-data",
                 work["train"], "--out", out]) == 0
    capsys.readouterr()
    ck = os.path.join(out, "checkpoint_seed0.bin")
    assert main(["eval", "--checkpoint", ck, "--data", work["test"]]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["architecture"] == "pod_don"


def test_eval_stdout_json(work, capsys):
    assert main(["eval", "--checkpoint", work["checkpoint"],
                 "--data", work["test"]]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["architecture"] == "don"
    assert metrics["n_samples"] == 4
    assert metrics["parameters"] > 0
    assert set(metrics["l2"]) == {"mean", "median", "std"}
    assert sum(metrics["threshold_confusion"].values()) == 4


def test_eval_run_dir_artifacts(work):
    out = str(work["root"] / "eval_run")
    assert main(["eval", "--checkpoint", work["checkpoint"],
                 "--data", work["test"], "--out", out]) == 0
    metrics = json.load(open(os.path.join(out, "metrics.json")))
    rows = open(os.path.join(out, "per_sample_errors.csv")).read().splitlines()
    assert rows[0] == "sample,rel_l2,rel_l1"
    assert len(rows) == 1 + metrics["n_samples"]
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert set(manifest["input_paths"]) == {"checkpoint", "data"}
    for digest in manifest["dataset_hashes"].values():
        assert digest.startswith("sha256:")


def test_eval_invalid_checkpoint_is_runtime_error(work, capsys):
    not_checkpoint = os.path.join(work["run"], "summary.json")
    assert main(["eval", "--checkpoint", not_checkpoint,
                 "--data", work["test"]]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_bench_stdout_and_index_validation(work, capsys):
    assert main(["bench", "--checkpoint", work["checkpoint"],
                 "--data", work["test"], "--n-runs", "10",
                 "--n-warmup", "1"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["architecture"] == "don"
    assert payload["p95_ms"] >= payload["median_ms"] > 0
    assert len(payload["per_run_ms"]) == 10
    assert main(["bench", "--checkpoint", work["checkpoint"],
                 "--data", work["test"], "--index", "99"]) == 2
    assert "bench.index" in capsys.readouterr().err


def test_report_json_csv_and_missing_metrics(work, capsys):
    eval_run = str(work["root"] / "eval_for_report")
    assert main(["eval", "--checkpoint", work["checkpoint"],
                 "--data", work["test"], "--out", eval_run]) == 0
    capsys.readouterr()

    assert main(["report", "--runs", eval_run]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["run"] == eval_run

    assert main(["report", "--runs", eval_run, "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ("run,architecture,n_samples,parameters,"
                        "l2_mean,l2_median,l2_std,l1_mean,l1_median,l1_std")
    assert len(lines) == 2

    assert main(["report", "--runs", str(work["root"])]) == 2
    assert "no metrics.json" in capsys.readouterr().err
    assert main(["report", "--runs", ","]) == 2


def test_invariance_prints_pairwise_table(capsys):
    assert main(["invariance", "--dt", "0.05", "--t-max", "2",
                 "--shifts", "0.5,1.0", "--scheme", "auto"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split() == ["onset_a_ms", "onset_b_ms", "shift_ms", "rel_l2"]
    assert out[-1].startswith("worst pairwise relative L2:")
    assert float(out[-1].split(":")[1]) <= 1e-10
    assert main(["invariance", "--shifts", "abc"]) == 2
    assert main(["invariance", "--shifts", "5"]) == 2


def test_tune_micro_resume_and_hash_guard(work, capsys):
    data = str(work["root"] / "tune_data.bin")
    shutil.copyfile(work["train"], data)
    out = str(work["root"] / "tune_run")
    argv = ["tune", "--architecture", "don", "--train-data", data,
            "--out", out, "--trials", "2", "--min-epochs", "1",
            "--max-epochs", "2", "--reduction-factor", "2",
            "--batch-size", "3"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert "epoch budget bound" in first
    names = set(os.listdir(out))
    assert {"journal.jsonl", "leaderboard.csv", "best_config.json",
            "manifest.json"} <= names
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert os.path.join(out, "journal.jsonl") in manifest["artifacts"]

    assert main(argv) == 0                       # resume, nothing to redo
    assert "resuming from" in capsys.readouterr().out

    with open(data, "r+b") as fh:                # silently altered input
        fh.seek(-1, os.SEEK_END)
        last = fh.read(1)
        fh.seek(-1, os.SEEK_END)
        fh.write(bytes([last[0] ^ 0x01]))
    assert main(argv) == 2
    assert "tune.resume" in capsys.readouterr().err


def test_nob_threads_guard(work, capsys, monkeypatch):
    out = str(work["root"] / "threads.bin")
    monkeypatch.setenv("NOB_THREADS", "many")
    assert main(["generate", "--split", "test", "--n", "1",
                 "--resolution", "16x16", "--out", out]) == 2
    assert "NOB_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("NOB_THREADS", "1")
    assert main(["generate", "--split", "test", "--n", "1",
                 "--resolution", "16x16", "--out", out, "--workers", "8",
                 "--force"]) == 0
    sidecar = json.load(open(out + ".manifest.json"))
    assert sidecar["config"]["workers"] == 1     # capped by the env guard
