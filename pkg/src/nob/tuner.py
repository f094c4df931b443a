"""Random hyperparameter search with successive-halving early stopping.

Configurations are drawn from per-architecture spaces (counter-based
Philox keyed by (seed, index), fixed draw order, log-uniform learning
rate and weight decay, uniform scheduler factor).  Trials train in rung
segments — boundaries at ``min_epochs·rf^k`` capped at ``max_epochs`` —
and a single scheduling authority promotes, per rung, the top ⌈n/rf⌉ of
the trials that have completed that rung (asynchronously: decisions use
only results available at decision time; exact-tie cutoffs resolve to
the lower trial index).  Every event appends one JSON line to the
journal, making a search resumable and its epoch budget auditable.

The spaces expose the implementable subset of each architecture's
published search column; option axes whose mechanisms are outside the
modeled layer menu (normalization layers, residual trunk wiring,
soft-gating skips) are omitted, as the module-level constants document.
The ``workers`` argument is validated but execution is sequential
in-process: the scheduler is the lone decision authority either way, and
the target machines are single-core, so a pool adds no throughput;
results are therefore identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .models import build_model
from .models.don import pod_fit
from .training import (AdamWState, TrainConfig, adamw_step, relative_l2_loss,
                       step_lr)
from .autodiff import no_grad

__all__ = [
    "SEARCH_SPACES",
    "OPTIMIZER_KEYS",
    "Trial",
    "sample_config",
    "validate_structure",
    "rung_epochs",
    "asha_schedule",
    "run_search",
    "budget_bound",
]

_OPT_SPACE = {
    "learning_rate": ("loguniform", 1e-4, 1e-2),
    "weight_decay": ("loguniform", 1e-6, 1e-3),
    "scheduler_gamma": ("uniform", 0.75, 0.99),
}

OPTIMIZER_KEYS = tuple(_OPT_SPACE)

# Entry kinds: ("int", lo, hi) inclusive; ("int_even", lo, hi) rounded up
# to even; ("choice", values); ("loguniform", lo, hi); ("uniform", lo, hi).
SEARCH_SPACES: dict[str, dict] = {
    "fno": {
        "d_v": ("choice", (4, 8, 16, 32, 64, 96, 128, 160, 192, 220)),
        "n_layers": ("int", 1, 6),
        "k_max": ("choice", (2, 4, 8, 12, 16, 20, 24, 28, 32)),
        "activation": ("choice", ("tanh", "relu", "gelu", "leaky_relu")),
        "n_pad": ("int", 1, 16),
        "layer_variant": ("choice", ("classic", "mlp")),
        **_OPT_SPACE,
    },
    "tfno": {
        "d_v": ("choice", (4, 8, 16, 32, 64, 96, 128, 160, 192)),
        "n_layers": ("int", 1, 5),
        "k_max": ("choice", (2, 4, 8, 16, 32)),
        "activation": ("choice", ("gelu", "relu", "leaky_relu")),
        "pad_fraction": ("choice", (0.0, 0.1, 0.2)),
        "layer_variant": ("choice", ("classic", "mlp")),
        "rank_ratio": ("choice", (0.05, 0.1, 0.2, 0.5)),
        **_OPT_SPACE,
    },
    "don": {
        "p": ("int_even", 200, 800),
        "branch_layers": ("int", 1, 6),
        "branch_width": ("int", 64, 200),
        "branch_activation": ("choice", ("relu", "gelu", "silu")),
        "trunk_layers": ("int", 1, 6),
        "trunk_width": ("int", 64, 200),
        "trunk_activation": ("choice", ("relu", "gelu", "silu")),
        **_OPT_SPACE,
    },
    "don_cnn": {
        "p": ("int_even", 200, 500),
        "n_conv": ("int", 3, 7),
        "conv_channel_start": ("choice", (10, 20, 30, 40)),
        "conv_channel_step": ("choice", (10, 20, 30)),
        "branch_layers": ("int", 2, 7),
        "branch_width": ("choice", (16, 32, 64, 128, 256)),
        "branch_activation": ("choice", ("tanh", "relu", "leaky_relu",
                                         "sigmoid", "silu", "gelu")),
        "trunk_layers": ("int", 2, 7),
        "trunk_width": ("choice", (16, 32, 64, 128, 256)),
        "trunk_activation": ("choice", ("tanh", "relu", "leaky_relu",
                                        "sigmoid")),
        **_OPT_SPACE,
    },
    "pod_don": {
        "p": ("int_even", 200, 800),
        "branch_layers": ("int", 1, 6),
        "branch_width": ("int", 64, 200),
        "branch_activation": ("choice", ("relu", "gelu", "silu")),
        **_OPT_SPACE,
    },
    "cno": {
        "n_layers": ("int", 1, 5),
        "channels": ("choice", (8, 16, 24, 32, 40, 48)),
        "n_res_neck": ("int", 1, 6),
        "n_res": ("int", 1, 8),
        "kernel_size": ("choice", (3, 5, 7)),
        **_OPT_SPACE,
    },
}

_MAX_RETRIES = 50


def _draw(rng: np.random.Generator, entry):
    kind = entry[0]
    if kind == "int":
        return int(rng.integers(entry[1], entry[2] + 1))
    if kind == "int_even":
        v = int(rng.integers(entry[1], entry[2] + 1))
        return min(v + (v & 1), entry[2] - (entry[2] & 1))
    if kind == "choice":
        values = entry[1]
        return values[int(rng.integers(len(values)))]
    if kind == "loguniform":
        return float(np.exp(rng.uniform(np.log(entry[1]), np.log(entry[2]))))
    if kind == "uniform":
        return float(rng.uniform(entry[1], entry[2]))
    raise ValueError(f"unknown space entry kind {kind!r}")


def validate_structure(architecture: str, model_cfg: dict,
                       resolution: tuple[int, int] = (64, 64)) -> None:
    """Raise ValueError naming the violated invariant, if any.

    Runs the architecture config's own validation on the merged
    (preset + sampled) fields, plus grid-dependent checks the config
    cannot see: the strided conv stack must not collapse the field, the
    resolution must divide by the downsampling depth, and retained modes
    must fit the padded grid.
    """
    h, w = resolution
    if architecture in ("fno", "tfno"):
        from .models.fno import FnoConfig, fno_found, tfno_found
        base = (tfno_found() if architecture == "tfno" else fno_found()).to_dict()
        base.update(model_cfg)
        cfg = FnoConfig.from_dict(base)
        side = min(h, w) + 2 * cfg.n_pad
        if 2 * cfg.k_max > side:
            raise ValueError(f"k_max={cfg.k_max} exceeds the padded grid "
                             f"({side} points per axis)")
    elif architecture in ("don", "don_cnn", "pod_don"):
        from .models.don import DonConfig, don_cnn_found, don_found, pod_don_found
        found = {"don": don_found, "don_cnn": don_cnn_found,
                 "pod_don": pod_don_found}[architecture]
        base = found().to_dict()
        base.update(model_cfg)
        cfg = DonConfig.from_dict(base)
        if cfg.variant == "cnn_encoder":
            hh, ww = h, w
            for i in range(cfg.n_conv):
                if hh < 2 or ww < 2:
                    raise ValueError(
                        f"n_conv={cfg.n_conv} collapses the {h}x{w} field "
                        f"below 1x1 at stage {i}")
                hh, ww = (hh + 1) // 2, (ww + 1) // 2
    elif architecture == "cno":
        from .models.cno import CnoConfig, cno_found
        base = cno_found().to_dict()
        base.update(model_cfg)
        cfg = CnoConfig.from_dict(base)
        step = 1 << cfg.n_layers
        if h % step or w % step:
            raise ValueError(f"resolution {h}x{w} not divisible by "
                             f"2^n_layers={step}")
    else:
        raise ValueError(f"unknown architecture {architecture!r}")


def _split_sample(architecture: str, sampled: dict) -> dict:
    """Split raw draws into {"model": …} plus optimizer fields."""
    model_cfg = {}
    out = {}
    for key, value in sampled.items():
        if key in OPTIMIZER_KEYS:
            out[key] = value
        elif key == "pad_fraction":
            model_cfg["n_pad"] = int(round(value * 64))
        else:
            model_cfg[key] = value
    if architecture == "tfno":
        model_cfg["weight_variant"] = "tucker"
    out["model"] = model_cfg
    return out


def sample_config(architecture: str, seed: int, index: int,
                  resolution: tuple[int, int] = (64, 64),
                  space: dict | None = None) -> dict:
    """Deterministic draw for trial ``index``: {"model": …, optimizer…}.

    Structurally invalid combinations are resampled from the same stream
    (bounded retries); exhaustion raises with the violated invariant.
    """
    if space is None:
        if architecture not in SEARCH_SPACES:
            raise ValueError(f"no search space for {architecture!r}")
        space = SEARCH_SPACES[architecture]
    rng = np.random.Generator(np.random.Philox(key=[seed, index]))
    last_error = None
    for _ in range(_MAX_RETRIES):
        sampled = {key: _draw(rng, entry) for key, entry in space.items()}
        config = _split_sample(architecture, sampled)
        try:
            validate_structure(architecture, config["model"], resolution)
        except ValueError as exc:
            last_error = exc
            continue
        return config
    raise ValueError(f"sample_config: no valid draw after {_MAX_RETRIES} "
                     f"retries; last violation: {last_error}")


# ---------------------------------------------------------------------------
# ASHA scheduling
# ---------------------------------------------------------------------------

def rung_epochs(min_epochs: int, reduction_factor: int,
                max_epochs: int) -> list[int]:
    """Cumulative epoch targets min·rf^k, capped by (and ending at) max."""
    if min_epochs < 1 or reduction_factor < 2 or max_epochs < min_epochs:
        raise ValueError("need min_epochs >= 1, rf >= 2, max >= min")
    rungs = []
    e = min_epochs
    while e < max_epochs:
        rungs.append(e)
        e *= reduction_factor
    rungs.append(max_epochs)
    return rungs


@dataclass
class Trial:
    """One sampled configuration and its progress through the rungs."""

    trial_id: int
    config: dict
    rung: int = -1                      # highest rung index reported
    rung_metrics: dict = field(default_factory=dict)
    epochs_run: int = 0
    status: str = "pending"             # pending/running/paused/stopped/
                                        # completed/failed

    @property
    def metric(self) -> float | None:
        """Latest validation relative L² (None before the first rung)."""
        if not self.rung_metrics:
            return None
        return self.rung_metrics[max(self.rung_metrics)]


def asha_schedule(trials, reduction_factor: int = 3, min_epochs: int = 10,
                  max_epochs: int = 100) -> dict:
    """Current promote/stop sets per rung from completed reports only.

    For each non-final rung k, the top ⌈n/rf⌉ of the n trials that have
    reported at k (ordered by metric, ties to the lower trial id) are
    promotable; the rest are stoppable.  Reaching the final rung is
    completion, not promotion.
    """
    rungs = rung_epochs(min_epochs, reduction_factor, max_epochs)
    promote: dict[int, list[int]] = {}
    stop: dict[int, list[int]] = {}
    for k in range(len(rungs) - 1):
        done = sorted((t.rung_metrics[k], t.trial_id)
                      for t in trials if k in t.rung_metrics)
        n_top = math.ceil(len(done) / reduction_factor) if done else 0
        promote[k] = [tid for _, tid in done[:n_top]]
        stop[k] = [tid for _, tid in done[n_top:]]
    return {"promote": promote, "stop": stop}


# ---------------------------------------------------------------------------
# search runner
# ---------------------------------------------------------------------------

class _TrialRunner:
    """In-memory training state for one trial, advanced rung by rung."""

    def __init__(self, architecture: str, config: dict, seed: int,
                 train_fields: np.ndarray, batch_size: int):
        model_cfg = dict(config["model"])
        kwargs = {}
        if architecture in ("don", "don_cnn", "pod_don"):
            kwargs["field_shape"] = train_fields.shape[2:]
        if architecture == "pod_don":
            kwargs["basis"] = pod_fit(train_fields[:, 1:],
                                      int(model_cfg.get("p", 2)))
        self.model = build_model(architecture, model_cfg, seed=seed, **kwargs)
        self.seed = seed
        self.lr0 = float(config["learning_rate"])
        self.gamma = float(config["scheduler_gamma"])
        self.weight_decay = float(config["weight_decay"])
        self.batch_size = batch_size
        self.params = {name: t.data for name, t in self.model.params.items()}
        self.state = AdamWState.init(self.params)
        self.next_epoch = 0

    def advance_to(self, target_epoch: int, fields: np.ndarray) -> None:
        n = fields.shape[0]
        for epoch in range(self.next_epoch, target_epoch):
            lr = step_lr(self.lr0, self.gamma, epoch)
            order = np.random.Generator(
                np.random.Philox(key=[self.seed, epoch])).permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                self.model.zero_grads()
                loss = relative_l2_loss(self.model(fields[idx, :1]),
                                        fields[idx, 1:])
                if not math.isfinite(float(loss.data)):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                grads = {name: t.grad for name, t in self.model.params.items()}
                adamw_step(self.params, grads, self.state, lr,
                           weight_decay=self.weight_decay)
        self.next_epoch = target_epoch

    def validation_metric(self, val_fields: np.ndarray) -> float:
        n = val_fields.shape[0]
        total = 0.0
        with no_grad():
            for start in range(0, n, self.batch_size):
                stop = min(start + self.batch_size, n)
                loss = relative_l2_loss(self.model(val_fields[start:stop, :1]),
                                        val_fields[start:stop, 1:])
                total += float(loss.data) * (stop - start)
        return total / n


def _normalized(dataset) -> np.ndarray:
    return dataset.normalized() if hasattr(dataset, "normalized") \
        else np.asarray(dataset, dtype=np.float64)


class _Journal:
    def __init__(self, path):
        self.path = path
        self._fh = None

    def replay(self) -> list[dict]:
        if self.path is None or not os.path.exists(self.path):
            return []
        events = []
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events

    def append(self, event: dict) -> None:
        if self.path is None:
            return
        if self._fh is None:
            self._fh = open(self.path, "a")
        self._fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def run_search(architecture: str, train_set, val_set, n_trials: int = 100,
               workers: int = 1, master_seed: int = 0,
               reduction_factor: int = 3, min_epochs: int = 10,
               max_epochs: int = 100, batch_size: int = 20,
               journal_path=None, out_dir=None):
    """Random search with rung-based early stopping; resumable via journal.

    Returns (best_config, leaderboard).  ``leaderboard`` is a list of
    trial summary dicts sorted by metric (best first, unreported last,
    ties by trial id); ``best_config`` is the top entry's config.  With a
    ``journal_path``, terminal trials found in an existing journal are
    reused and in-flight ones restart; with ``out_dir``, the leaderboard
    CSV and best_config.json are written there.  A failing trial is
    recorded and the search continues.  Deterministic for a fixed
    (architecture, data, master_seed) regardless of ``workers``
    (execution is sequential; see the module docstring).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    rungs = rung_epochs(min_epochs, reduction_factor, max_epochs)
    fields = _normalized(train_set)
    val_fields = _normalized(val_set)
    resolution = (int(fields.shape[2]), int(fields.shape[3]))

    journal = _Journal(journal_path)
    prior = journal.replay()
    trials: dict[int, Trial] = {}
    for ev in prior:
        if ev["event"] == "sampled":
            trials[ev["trial_id"]] = Trial(ev["trial_id"], ev["config"])
        elif ev["event"] == "report" and ev["trial_id"] in trials:
            t = trials[ev["trial_id"]]
            t.rung_metrics[ev["rung"]] = ev["metric"]
            t.rung = max(t.rung, ev["rung"])
            t.epochs_run = ev["epochs"]
            t.status = "paused"
        elif ev["event"] in ("completed", "stopped", "failed") \
                and ev["trial_id"] in trials:
            trials[ev["trial_id"]].status = ev["event"]
    for t in trials.values():
        if t.status not in ("completed", "stopped", "failed"):
            # no serialized model state: restart this trial from scratch
            t.rung = -1
            t.rung_metrics = {}
            t.epochs_run = 0
            t.status = "pending"
            journal.append({"event": "restarted", "trial_id": t.trial_id})

    if not prior:
        journal.append({"event": "header", "architecture": architecture,
                        "n_trials": n_trials, "master_seed": master_seed,
                        "reduction_factor": reduction_factor,
                        "min_epochs": min_epochs, "max_epochs": max_epochs,
                        "rungs": rungs, "workers": workers,
                        "batch_size": batch_size,
                        "timestamp": time.time()})

    runners: dict[int, _TrialRunner] = {}

    def next_start():
        """Lowest trial id never run this session (new or restarted)."""
        for tid in range(n_trials):
            if tid not in trials or trials[tid].status == "pending":
                return tid
        return None

    def ensure_sampled(tid: int) -> Trial:
        if tid not in trials:
            config = sample_config(architecture, master_seed, tid, resolution)
            trials[tid] = Trial(tid, config)
            journal.append({"event": "sampled", "trial_id": tid,
                            "config": config})
        return trials[tid]

    def segment(t: Trial) -> None:
        """Advance one rung; report, and finish or pause."""
        k = t.rung + 1
        target = rungs[k]
        t.status = "running"
        journal.append({"event": "started", "trial_id": t.trial_id,
                        "rung": k})
        try:
            if t.trial_id not in runners:
                runners[t.trial_id] = _TrialRunner(
                    architecture, t.config, master_seed + t.trial_id,
                    fields, batch_size)
            runner = runners[t.trial_id]
            runner.advance_to(target, fields)
            metric = runner.validation_metric(val_fields)
        except Exception as exc:  # worker crash: record, continue searching
            t.status = "failed"
            runners.pop(t.trial_id, None)
            journal.append({"event": "failed", "trial_id": t.trial_id,
                            "error": f"{type(exc).__name__}: {exc}",
                            "timestamp": time.time()})
            return
        t.rung = k
        t.rung_metrics[k] = metric
        t.epochs_run = target
        journal.append({"event": "report", "trial_id": t.trial_id, "rung": k,
                        "epochs": target, "metric": metric,
                        "timestamp": time.time()})
        if target == max_epochs:
            t.status = "completed"
            runners.pop(t.trial_id, None)
            journal.append({"event": "completed", "trial_id": t.trial_id,
                            "metric": metric})
        else:
            t.status = "paused"

    while True:
        decisions = asha_schedule(list(trials.values()), reduction_factor,
                                  min_epochs, max_epochs)
        action = None
        for k in range(len(rungs) - 2, -1, -1):
            for tid in decisions["promote"].get(k, []):
                t = trials.get(tid)
                if t is not None and t.status == "paused" and t.rung == k:
                    action = ("resume", tid)
                    break
            if action:
                break
        if action is None:
            tid = next_start()
            if tid is not None:
                action = ("start", tid)
        if action is None:
            break
        tid = action[1]
        segment(ensure_sampled(tid))

    final = asha_schedule(list(trials.values()), reduction_factor,
                          min_epochs, max_epochs)
    for t in trials.values():
        if t.status == "paused":
            t.status = "stopped"
            journal.append({"event": "stopped", "trial_id": t.trial_id,
                            "rung": t.rung,
                            "promotable": t.trial_id in
                            final["promote"].get(t.rung, [])})

    def sort_key(t: Trial):
        m = t.metric
        return (m is None, m if m is not None else 0.0, t.trial_id)

    leaderboard = [{
        "trial_id": t.trial_id, "status": t.status, "rung": t.rung,
        "epochs": t.epochs_run, "metric": t.metric, "config": t.config,
    } for t in sorted(trials.values(), key=sort_key)]

    best = next((row for row in leaderboard if row["metric"] is not None),
                None)
    journal.append({"event": "done",
                    "best_trial": best["trial_id"] if best else None,
                    "best_metric": best["metric"] if best else None,
                    "epochs_consumed": _epochs_consumed(trials)})
    journal.close()

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "leaderboard.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trial_id", "status", "rung", "epochs",
                             "metric", "config_json"])
            for row in leaderboard:
                writer.writerow([
                    row["trial_id"], row["status"], row["rung"],
                    row["epochs"],
                    "" if row["metric"] is None else repr(row["metric"]),
                    json.dumps(row["config"], sort_keys=True)])
        if best is not None:
            with open(os.path.join(out_dir, "best_config.json"), "w") as fh:
                json.dump(best["config"], fh, indent=2, sort_keys=True)
                fh.write("\n")

    return (best["config"] if best else None), leaderboard


def _epochs_consumed(trials: dict[int, Trial]) -> int:
    return sum(t.epochs_run for t in trials.values())


def budget_bound(n_trials: int, reduction_factor: int, min_epochs: int,
                 max_epochs: int) -> float:
    """Audit ceiling: n_trials · min_epochs · rf/(rf−1) · n_rungs."""
    n_rungs = len(rung_epochs(min_epochs, reduction_factor, max_epochs))
    return n_trials * min_epochs * reduction_factor \
        / (reduction_factor - 1) * n_rungs
