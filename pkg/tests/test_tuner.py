"""Search-space sampling determinism, rung-based early-stopping arithmetic,
journal resume, and the bitwise segmented-training identity."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from nob import tuner
from nob.tuner import (OPTIMIZER_KEYS, SEARCH_SPACES, Trial, asha_schedule,
                       budget_bound, run_search, rung_epochs, sample_config,
                       validate_structure)

MICRO = dict(n_trials=4, reduction_factor=2, min_epochs=1, max_epochs=4,
             batch_size=4)


def _fields(n=8, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 3, 8, 8))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_search_spaces_structure():
    assert sorted(SEARCH_SPACES) == ["cno", "don", "don_cnn", "fno",
                                     "pod_don", "tfno"]
    for space in SEARCH_SPACES.values():
        for key in OPTIMIZER_KEYS:
            assert key in space
        for entry in space.values():
            assert entry[0] in ("int", "int_even", "choice", "loguniform",
                                "uniform")


@pytest.mark.parametrize("arch", sorted(SEARCH_SPACES))
def test_sample_config_deterministic_and_valid(arch):
    for index in range(3):
        cfg = sample_config(arch, seed=7, index=index)
        again = sample_config(arch, seed=7, index=index)
        assert cfg == again
        assert set(cfg) == {"model", *OPTIMIZER_KEYS}
        assert 1e-4 <= cfg["learning_rate"] <= 1e-2
        assert 1e-6 <= cfg["weight_decay"] <= 1e-3
        assert 0.75 <= cfg["scheduler_gamma"] <= 0.99
        validate_structure(arch, cfg["model"])     # must not raise
    other = sample_config(arch, seed=8, index=0)
    assert other != sample_config(arch, seed=7, index=0)


def test_don_draws_stay_in_declared_ranges():
    for index in range(20):
        model = sample_config("don", seed=0, index=index)["model"]
        assert model["p"] % 2 == 0 and 200 <= model["p"] <= 800
        assert 1 <= model["branch_layers"] <= 6
        assert 64 <= model["trunk_width"] <= 200
        assert model["branch_activation"] in ("relu", "gelu", "silu")


def test_don_cnn_depth_respects_grid():
    # the raw space allows n_conv up to 7, which collapses a 64x64 field;
    # resampling must always deliver a depth that fits
    depths = [sample_config("don_cnn", seed=1, index=i)["model"]["n_conv"]
              for i in range(40)]
    assert max(depths) <= 6
    assert min(depths) >= 3


def test_tfno_pad_mapping_and_tucker_injection():
    seen_pads = set()
    for index in range(20):
        model = sample_config("tfno", seed=2, index=index)["model"]
        assert model["weight_variant"] == "tucker"
        assert "pad_fraction" not in model
        assert model["n_pad"] in (0, 6, 13)   # round(64 * {0, 0.1, 0.2})
        seen_pads.add(model["n_pad"])
    assert len(seen_pads) > 1


def test_sample_config_exhaustion_names_invariant():
    space = dict(SEARCH_SPACES["cno"])
    space["n_layers"] = ("int", 7, 7)         # 2^7 never divides 64
    with pytest.raises(ValueError, match="divisible"):
        sample_config("cno", seed=0, index=0, space=space)


def test_validate_structure_invariants():
    with pytest.raises(ValueError, match="k_max"):
        validate_structure("fno", {"k_max": 32, "n_pad": 1},
                           resolution=(32, 32))
    validate_structure("fno", {"k_max": 16, "n_pad": 1}, resolution=(32, 32))
    with pytest.raises(ValueError, match="divisible"):
        validate_structure("cno", {"n_layers": 5}, resolution=(48, 48))
    with pytest.raises(ValueError, match="collapses"):
        validate_structure("don_cnn", {"n_conv": 5}, resolution=(16, 16))
    with pytest.raises(ValueError, match="architecture"):
        validate_structure("mlp", {})


# ---------------------------------------------------------------------------
# rungs and promotion
# ---------------------------------------------------------------------------

def test_rung_epochs_values():
    assert rung_epochs(10, 3, 100) == [10, 30, 90, 100]
    assert rung_epochs(10, 3, 90) == [10, 30, 90]
    assert rung_epochs(5, 2, 40) == [5, 10, 20, 40]
    assert rung_epochs(10, 3, 10) == [10]
    with pytest.raises(ValueError):
        rung_epochs(0, 3, 100)
    with pytest.raises(ValueError):
        rung_epochs(10, 1, 100)
    with pytest.raises(ValueError):
        rung_epochs(10, 3, 5)


def test_trial_metric_property():
    t = Trial(0, {})
    assert t.metric is None
    t.rung_metrics = {0: 0.5, 1: 0.3}
    assert t.metric == 0.3


def test_asha_promotes_top_third():
    trials = [Trial(i, {}, rung=0, rung_metrics={0: 0.1 * (9 - i)})
              for i in range(9)]
    sched = asha_schedule(trials, reduction_factor=3, min_epochs=10,
                          max_epochs=100)
    # lowest metric wins: trials 8, 7, 6 hold 0.1, 0.2, 0.3
    assert sorted(sched["promote"][0]) == [6, 7, 8]
    assert len(sched["stop"][0]) == 6


def test_asha_singleton_promotes_and_ties_prefer_lower_id():
    lone = [Trial(3, {}, rung=0, rung_metrics={0: 0.9})]
    sched = asha_schedule(lone, 3, 10, 100)
    assert sched["promote"][0] == [3]
    tied = [Trial(i, {}, rung=0, rung_metrics={0: 0.5}) for i in range(3)]
    sched = asha_schedule(tied, 3, 10, 100)
    assert sched["promote"][0] == [0]


def test_asha_final_rung_is_completion_not_promotion():
    done = [Trial(0, {}, rung=3, rung_metrics={3: 0.1})]
    sched = asha_schedule(done, 3, 10, 100)   # rungs [10, 30, 90, 100]
    assert all(0 not in ids for ids in sched["promote"].values())


def test_budget_bound_values():
    assert budget_bound(12, 3, 10, 100) == 12 * 10 * 3 / 2 * 4
    assert budget_bound(4, 2, 1, 4) == 4 * 1 * 2 * 3


# ---------------------------------------------------------------------------
# end-to-end search
# ---------------------------------------------------------------------------

def test_run_search_micro_deterministic_and_journaled(tmp_path):
    fields = _fields()
    val = _fields(4, seed=1)
    journal = tmp_path / "journal.jsonl"
    out = tmp_path / "out"
    best, board = run_search("don", fields, val, master_seed=3,
                             journal_path=journal, out_dir=out, **MICRO)
    assert best == board[0]["config"]
    metrics = [row["metric"] for row in board]
    known = [m for m in metrics if m is not None]
    assert known == sorted(known)
    assert all(row["status"] in ("completed", "stopped", "failed")
               for row in board)
    assert any(row["status"] == "completed" for row in board)

    events = [json.loads(line) for line in journal.read_text().splitlines()]
    assert events[0]["event"] == "header"
    assert events[0]["rungs"] == [1, 2, 4]
    assert events[-1]["event"] == "done"
    names = {e["event"] for e in events}
    assert names <= {"header", "sampled", "started", "report", "completed",
                     "stopped", "failed", "done"}
    for e in events:
        if e["event"] == "report":
            assert math.isfinite(e["metric"]) and e["epochs"] in (1, 2, 4)
    consumed = events[-1]["epochs_consumed"]
    assert consumed == sum(row["epochs"] for row in board)
    assert consumed <= budget_bound(**{k: MICRO[k] for k in
                                       ("n_trials", "reduction_factor",
                                        "min_epochs", "max_epochs")})

    saved = json.loads((out / "best_config.json").read_text())
    assert saved == best
    csv_rows = (out / "leaderboard.csv").read_text().splitlines()
    assert csv_rows[0] == "trial_id,status,rung,epochs,metric,config_json"
    assert len(csv_rows) == 1 + len(board)

    _, board2 = run_search("don", fields, val, master_seed=3, **MICRO)
    assert board2 == board


def test_run_search_resume_truncated_journal(tmp_path):
    fields = _fields()
    val = _fields(4, seed=1)
    full = tmp_path / "full.jsonl"
    _, board = run_search("don", fields, val, master_seed=5,
                          journal_path=full, **MICRO)
    lines = full.read_text().splitlines()
    cut = tmp_path / "cut.jsonl"
    cut.write_text("\n".join(lines[:int(len(lines) * 0.6)]) + "\n")
    _, resumed = run_search("don", fields, val, master_seed=5,
                            journal_path=cut, **MICRO)
    assert resumed == board


def test_run_search_resume_finished_journal(tmp_path):
    fields = _fields()
    val = _fields(4, seed=1)
    journal = tmp_path / "journal.jsonl"
    _, board = run_search("don", fields, val, master_seed=6,
                          journal_path=journal, **MICRO)
    n_reports = journal.read_text().count('"event": "report"')
    _, again = run_search("don", fields, val, master_seed=6,
                          journal_path=journal, **MICRO)
    assert again == board
    # terminal trials are reused: resuming retrains nothing
    assert journal.read_text().count('"event": "report"') == n_reports


def test_run_search_failed_trial_recorded(tmp_path, monkeypatch):
    fields = _fields()
    val = _fields(4, seed=1)
    original = tuner._TrialRunner.advance_to

    def sabotage(self, target_epoch, data):
        if self.seed == 1:                    # master_seed 0 + trial 1
            raise FloatingPointError("injected blow-up")
        return original(self, target_epoch, data)

    monkeypatch.setattr(tuner._TrialRunner, "advance_to", sabotage)
    journal = tmp_path / "journal.jsonl"
    best, board = run_search("don", fields, val, master_seed=0,
                             journal_path=journal, **MICRO)
    by_id = {row["trial_id"]: row for row in board}
    assert by_id[1]["status"] == "failed" and by_id[1]["metric"] is None
    assert board[-1]["trial_id"] == 1         # unreported trials sort last
    assert best is not None
    failures = [json.loads(line) for line in journal.read_text().splitlines()
                if '"failed"' in line]
    assert failures and "injected blow-up" in failures[0]["error"]


def test_segmented_training_is_bitwise_identical():
    fields = _fields()
    config = sample_config("don", seed=9, index=0, resolution=(8, 8))
    split = tuner._TrialRunner("don", config, 9, fields, 4)
    split.advance_to(2, fields)
    split.advance_to(4, fields)
    straight = tuner._TrialRunner("don", config, 9, fields, 4)
    straight.advance_to(4, fields)
    assert split.params.keys() == straight.params.keys()
    for name in split.params:
        assert np.array_equal(split.params[name], straight.params[name])
    val = _fields(4, seed=2)
    assert split.validation_metric(val) == straight.validation_metric(val)


def test_run_search_argument_validation():
    with pytest.raises(ValueError, match="n_trials"):
        run_search("don", _fields(), _fields(4), n_trials=0)
    with pytest.raises(ValueError, match="workers"):
        run_search("don", _fields(), _fields(4), workers=0)
