"""Command-line entry point: reproducible runs of every pipeline stage.

One ``nob`` tool with subcommands — ``generate`` (reference-solver dataset
containers), ``train`` / ``eval`` / ``bench`` (surrogate fitting, error
metrics, single-sample latency), ``tune`` (rung-based random search),
``invariance`` (stimulus time-shift check of the solver), and ``report``
(aggregation across run directories).  Every command that creates a run
directory writes exactly one ``manifest.json`` recording the command, the
merged config snapshot, the seeds, SHA-256 hashes of its input files, the
artifact paths, and the tool version; a run is reproducible from that
manifest alone in single-threaded mode.  Run directories are never
overwritten without ``--force``; ``tune`` re-invoked on an existing run
directory resumes from its journal after re-verifying the input hashes.

Train/tune config files are JSON objects with the fields of TrainConfig:

    {
      "architecture": "fno" | "tfno" | "don" | "don_cnn" | "pod_don" | "cno",
      "model":           {<architecture config fields>},   # optional
      "epochs":          int >= 0,
      "batch_size":      int >= 1,
      "learning_rate":   float > 0 | null (best-found default),
      "weight_decay":    float > 0 | null,
      "scheduler_gamma": float in (0, 1] | null,
      "grad_clip":       float > 0 | null,
      "seeds":           [int, ...]
    }

Flags override file values; the merged snapshot is what the manifest
stores.  Exit codes: 0 success; 2 schema/usage violations (message names
the offending field); 1 runtime failures (message names the module
error).  ``NOB_THREADS`` caps every worker pool.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import sys

import numpy as np

from . import __version__, fhn
from .dataset import Dataset, SplitSpec, generate
from .evaluation import (evaluate_model, inference_benchmark,
                         threshold_confusion)
from .models import ARCHITECTURES, build_model, restore_model
from .training import TrainConfig, multi_seed, train
from .tuner import budget_bound, run_search

__all__ = ["main", "ConfigError"]


class ConfigError(Exception):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _threads_cap(requested: int) -> int:
    """Apply the NOB_THREADS ceiling to a requested worker count."""
    env = os.environ.get("NOB_THREADS")
    if env is None:
        return requested
    try:
        cap = int(env)
    except ValueError:
        raise ConfigError("NOB_THREADS", f"must be an integer, got {env!r}")
    if cap < 1:
        raise ConfigError("NOB_THREADS", "must be >= 1")
    return max(1, min(requested, cap))


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return "sha256:" + digest.hexdigest()


def _prepare_run_dir(path, force: bool, command: str):
    if os.path.exists(path):
        if not force:
            raise ConfigError(f"{command}.out",
                              f"{path} exists; pass --force to replace it")
        shutil.rmtree(path)
    os.makedirs(path)


def _write_manifest(run_dir, command: str, config: dict, seeds,
                    inputs: dict, artifacts: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "dataset_hashes": {str(p): _sha256(p) for p in inputs.values()},
        "input_paths": {k: str(p) for k, p in inputs.items()},
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"{path} does not exist")
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return obj


def _parse_seeds(text: str):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip() != "")
    except ValueError:
        raise ConfigError("seeds", f"expected comma-separated integers, "
                                   f"got {text!r}")


def _merged_train_config(args) -> TrainConfig:
    """File config + flag overrides, validated field by field."""
    merged = _load_config_file(args.config)
    overrides = {
        "architecture": args.architecture,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "weight_decay": args.weight_decay,
        "scheduler_gamma": args.scheduler_gamma,
        "grad_clip": args.grad_clip,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if getattr(args, "seeds", None) is not None:
        merged["seeds"] = list(_parse_seeds(args.seeds))

    checks = {
        "architecture": lambda v: isinstance(v, str) and v in ARCHITECTURES,
        "model": lambda v: isinstance(v, dict),
        "epochs": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "batch_size": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "learning_rate": lambda v: v is None or isinstance(v, (int, float)),
        "weight_decay": lambda v: v is None or isinstance(v, (int, float)),
        "scheduler_gamma": lambda v: v is None or isinstance(v, (int, float)),
        "grad_clip": lambda v: v is None or isinstance(v, (int, float)),
        "seeds": lambda v: isinstance(v, (list, tuple))
        and all(isinstance(s, int) and not isinstance(s, bool) for s in v),
    }
    for key, value in merged.items():
        if key not in checks:
            raise ConfigError(f"train.{key}", "unknown field")
        if not checks[key](value):
            raise ConfigError(f"train.{key}", f"invalid value {value!r}")
    try:
        return TrainConfig.from_dict(merged)
    except (ValueError, TypeError) as exc:
        raise ConfigError("train", str(exc))


def _require_file(path, field: str):
    if not os.path.exists(path):
        raise ConfigError(field, f"{path} does not exist")
    return path


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    if os.path.exists(args.out) and not args.force:
        raise ConfigError("generate.out",
                          f"{args.out} exists; pass --force to replace it")
    try:
        h, w = (int(s) for s in args.resolution.lower().split("x"))
    except ValueError:
        raise ConfigError("generate.resolution",
                          f"expected HxW, got {args.resolution!r}")
    spec = (SplitSpec.train(args.n) if args.split == "train"
            else SplitSpec.test(args.n))
    norm = None
    if args.norm_from is not None:
        norm = Dataset.load(_require_file(args.norm_from,
                                          "generate.norm-from")).norm
    workers = _threads_cap(args.workers)
    ds = generate(spec, args.seed, out_resolution=(h, w),
                  scheme=args.scheme, workers=workers, norm=norm)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    ds.save(args.out)
    sidecar = args.out + ".manifest.json"
    with open(sidecar, "w") as fh:
        json.dump({
            "command": "generate",
            "config": {"split": args.split, "n": spec.n_samples,
                       "seed": args.seed, "resolution": [h, w],
                       "scheme": args.scheme, "workers": workers,
                       "norm_from": args.norm_from},
            "seeds": [args.seed],
            "dataset_hashes": {args.out: _sha256(args.out)},
            "artifacts": [args.out],
            "tool_version": __version__,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {spec.n_samples} samples to {args.out}")
    return 0


def _model_factory(cfg: TrainConfig, dataset):
    """Seed→model builder aware of the dataset grid.

    The fixed-basis variant additionally fits its spatial basis from the
    training split's output channels before any seed builds.
    """
    arch = cfg.architecture
    kwargs = {}
    if arch in ("don", "don_cnn", "pod_don"):
        kwargs["field_shape"] = dataset.resolution
    if arch == "pod_don":
        from .models.don import pod_don_found, pod_fit
        p = int(cfg.model.get("p", pod_don_found().p))
        kwargs["basis"] = pod_fit(dataset.normalized()[:, 1:], p)
    return lambda seed: build_model(arch, cfg.model, seed=seed, **kwargs)


def _cmd_train(args) -> int:
    cfg = _merged_train_config(args)
    train_path = _require_file(args.train_data, "train.train-data")
    train_ds = Dataset.load(train_path)
    inputs = {"train_data": train_path}
    val_ds = None
    if args.val_data is not None:
        inputs["val_data"] = _require_file(args.val_data, "train.val-data")
        val_ds = Dataset.load(args.val_data)

    _prepare_run_dir(args.out, args.force, "train")
    factory = _model_factory(cfg, train_ds)
    artifacts = []
    if len(cfg.seeds) == 1:
        seed = cfg.seeds[0]
        checkpoint, history = train(factory, train_ds, val_ds, cfg, seed=seed)
        per_seed = {seed: (checkpoint, history)}
        summary = {"final_train_loss": history.train_loss[-1]
                   if history.train_loss else None}
    else:
        per_seed, summary = multi_seed(train_ds, val_ds, cfg, model=factory)
    for seed, (checkpoint, history) in per_seed.items():
        ck_path = os.path.join(args.out, f"checkpoint_seed{seed}.bin")
        checkpoint.save(ck_path)
        hist_path = os.path.join(args.out, f"history_seed{seed}.csv")
        history.to_csv(hist_path)
        artifacts += [ck_path, hist_path]
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump({"architecture": cfg.architecture, "summary": summary},
                  fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    artifacts.append(summary_path)
    _write_manifest(args.out, "train", cfg.to_dict(), cfg.seeds, inputs,
                    artifacts)
    print(f"trained {cfg.architecture} for {cfg.epochs} epochs "
          f"({len(cfg.seeds)} seed(s)); artifacts in {args.out}")
    return 0


def _load_model_and_data(args, command: str):
    ck_path = _require_file(args.checkpoint, f"{command}.checkpoint")
    data_path = _require_file(args.data, f"{command}.data")
    dataset = Dataset.load(data_path)
    model, header = restore_model(ck_path, field_shape=dataset.resolution)
    return model, header, dataset, {"checkpoint": ck_path, "data": data_path}


def _cmd_eval(args) -> int:
    model, header, dataset, inputs = _load_model_and_data(args, "eval")
    stats = evaluate_model(model, dataset, batch_size=args.batch_size)
    confusion = threshold_confusion(model, dataset, threshold=args.threshold,
                                    batch_size=args.batch_size)
    metrics = {
        "architecture": header["architecture"],
        "n_samples": dataset.n_samples,
        "parameters": model.parameter_count(),
        "l2": stats.summary()["l2"],
        "l1": stats.summary()["l1"],
        "threshold_confusion": confusion,
    }
    if args.out is None:
        _print_json(metrics)
        return 0
    _prepare_run_dir(args.out, args.force, "eval")
    metrics_path = os.path.join(args.out, "metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    errors_path = os.path.join(args.out, "per_sample_errors.csv")
    with open(errors_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "rel_l2", "rel_l1"])
        for i in range(len(stats.l2)):
            writer.writerow([i, repr(float(stats.l2[i])),
                             repr(float(stats.l1[i]))])
    _write_manifest(args.out, "eval",
                    {"batch_size": args.batch_size,
                     "threshold": args.threshold},
                    [], inputs, [metrics_path, errors_path])
    print(f"eval {header['architecture']}: "
          f"mean rel L2 {metrics['l2']['mean']:.6g} "
          f"over {dataset.n_samples} samples -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    model, header, dataset, inputs = _load_model_and_data(args, "bench")
    if not 0 <= args.index < dataset.n_samples:
        raise ConfigError("bench.index",
                          f"sample {args.index} outside 0..{dataset.n_samples - 1}")
    sample = dataset.fields.astype(np.float64)[args.index]
    result = inference_benchmark(model, sample, dataset.norm,
                                 n_warmup=args.n_warmup, n_runs=args.n_runs,
                                 solver_seconds=args.solver_seconds)
    payload = {"architecture": header["architecture"],
               "sample_index": args.index, **result}
    if args.out is None:
        _print_json(payload)
        return 0
    _prepare_run_dir(args.out, args.force, "bench")
    bench_path = os.path.join(args.out, "bench.json")
    with open(bench_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    _write_manifest(args.out, "bench",
                    {"index": args.index, "n_runs": args.n_runs,
                     "n_warmup": args.n_warmup,
                     "solver_seconds": args.solver_seconds},
                    [], inputs, [bench_path])
    print(f"bench {header['architecture']}: median "
          f"{payload['median_ms']:.3f} ms -> {args.out}")
    return 0


def _cmd_tune(args) -> int:
    if args.architecture not in ARCHITECTURES:
        raise ConfigError("tune.architecture",
                          f"expected one of {ARCHITECTURES}")
    train_path = _require_file(args.train_data, "tune.train-data")
    inputs = {"train_data": train_path}
    if args.val_data is not None:
        inputs["val_data"] = _require_file(args.val_data, "tune.val-data")
    train_ds = Dataset.load(train_path)
    val_ds = Dataset.load(args.val_data) if args.val_data else train_ds

    journal_path = os.path.join(args.out, "journal.jsonl")
    manifest_path = os.path.join(args.out, "manifest.json")
    resuming = os.path.exists(journal_path) and not args.force
    config = {"architecture": args.architecture, "n_trials": args.trials,
              "master_seed": args.seed,
              "reduction_factor": args.reduction_factor,
              "min_epochs": args.min_epochs, "max_epochs": args.max_epochs,
              "batch_size": args.batch_size,
              "workers": _threads_cap(args.workers)}
    if resuming:
        if os.path.exists(manifest_path):
            with open(manifest_path) as fh:
                manifest = json.load(fh)
            for path, recorded in manifest.get("dataset_hashes", {}).items():
                actual = _sha256(path) if os.path.exists(path) else "missing"
                if actual != recorded:
                    raise ConfigError(
                        "tune.resume",
                        f"input {path} changed since the journal was "
                        f"written ({actual} != {recorded})")
        print(f"resuming from {journal_path}")
    else:
        _prepare_run_dir(args.out, args.force, "tune")
        _write_manifest(args.out, "tune", config, [args.seed], inputs, [])

    best, leaderboard = run_search(
        args.architecture, train_ds, val_ds, n_trials=args.trials,
        workers=config["workers"], master_seed=args.seed,
        reduction_factor=args.reduction_factor, min_epochs=args.min_epochs,
        max_epochs=args.max_epochs, batch_size=args.batch_size,
        journal_path=journal_path, out_dir=args.out)
    artifacts = [journal_path, os.path.join(args.out, "leaderboard.csv")]
    if best is not None:
        artifacts.append(os.path.join(args.out, "best_config.json"))
    _write_manifest(args.out, "tune", config, [args.seed], inputs, artifacts)
    bound = budget_bound(args.trials, args.reduction_factor,
                         args.min_epochs, args.max_epochs)
    top = leaderboard[0] if leaderboard else None
    metric = (f"{top['metric']:.6g}" if top and top["metric"] is not None
              else "n/a")
    print(f"searched {len(leaderboard)} trials (epoch budget bound "
          f"{bound:.0f}); best metric {metric} -> {args.out}")
    return 0


def _cmd_invariance(args) -> int:
    try:
        onsets = sorted(float(s) for s in args.shifts.split(","))
    except ValueError:
        raise ConfigError("invariance.shifts",
                          f"expected comma-separated onsets, got "
                          f"{args.shifts!r}")
    if len(onsets) < 2:
        raise ConfigError("invariance.shifts", "need at least two onsets")
    grid = fhn.Grid1D(dt=args.dt, t_max=args.t_max)
    p = fhn.TissueParams()
    print("onset_a_ms onset_b_ms shift_ms rel_l2")
    worst = 0.0
    for i in range(len(onsets)):
        for j in range(i + 1, len(onsets)):
            spec = fhn.StimulusSpec(args.i, args.x, onsets[i],
                                    width=args.width,
                                    duration=args.duration)
            err = fhn.check_translation_invariance(
                p, grid, spec, onsets[j] - onsets[i], scheme=args.scheme)
            worst = max(worst, err)
            print(f"{onsets[i]:10g} {onsets[j]:10g} "
                  f"{onsets[j] - onsets[i]:8g} {err:.3e}")
    print(f"worst pairwise relative L2: {worst:.3e}")
    return 0


def _cmd_report(args) -> int:
    runs = [r for r in args.runs.split(",") if r.strip()]
    if not runs:
        raise ConfigError("report.runs", "need at least one run directory")
    rows = []
    for run in runs:
        metrics_path = os.path.join(run, "metrics.json")
        if not os.path.exists(metrics_path):
            raise ConfigError("report.runs",
                              f"{run} has no metrics.json (not an eval run?)")
        with open(metrics_path) as fh:
            metrics = json.load(fh)
        rows.append({"run": run, **metrics})

    if args.format == "json":
        payload = json.dumps(rows, indent=2, sort_keys=True)
        lines = payload + "\n"
        name = "report.json"
    else:
        columns = ["run", "architecture", "n_samples", "parameters",
                   "l2_mean", "l2_median", "l2_std",
                   "l1_mean", "l1_median", "l1_std"]
        out_rows = []
        for row in rows:
            flat = {"run": row["run"], "architecture": row["architecture"],
                    "n_samples": row["n_samples"],
                    "parameters": row["parameters"]}
            for norm in ("l2", "l1"):
                for stat in ("mean", "median", "std"):
                    flat[f"{norm}_{stat}"] = row[norm][stat]
            out_rows.append(flat)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=columns)
        writer.writeheader()
        writer.writerows(out_rows)
        lines = buf.getvalue()
        name = "report.csv"

    if args.out is None:
        sys.stdout.write(lines)
        return 0
    _prepare_run_dir(args.out, args.force, "report")
    out_path = os.path.join(args.out, name)
    with open(out_path, "w") as fh:
        fh.write(lines)
    _write_manifest(args.out, "report",
                    {"runs": runs, "format": args.format}, [],
                    {f"run{i}": os.path.join(r, "metrics.json")
                     for i, r in enumerate(runs)},
                    [out_path])
    print(f"report over {len(runs)} run(s) -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="nob", description=__doc__.splitlines()[0],
        formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", formatter_class=fmt,
                       help="solve stimulus samples into a dataset container")
    g.add_argument("--split", choices=("train", "test"), required=True,
                   help="sampling protocol for stimulus parameters")
    g.add_argument("--n", type=int, default=None,
                   help="sample count (default: 2000 train / 500 test)")
    g.add_argument("--seed", type=int, default=0, help="master RNG seed")
    g.add_argument("--out", required=True, help="output container path")
    g.add_argument("--workers", type=int, default=1,
                   help="parallel solver processes")
    g.add_argument("--scheme", choices=("auto", "explicit", "imex"),
                   default="auto", help="time integrator")
    g.add_argument("--resolution", default="64x64",
                   help="output grid as HxW")
    g.add_argument("--norm-from", default=None,
                   help="container whose normalization stats to reuse")
    g.add_argument("--force", action="store_true",
                   help="replace an existing output file")
    g.set_defaults(func=_cmd_generate, default_n={"train": 2000, "test": 500})

    t = sub.add_parser("train", formatter_class=fmt,
                       help="fit a surrogate on a generated dataset")
    t.add_argument("--config", default=None, help="JSON config file")
    t.add_argument("--train-data", required=True, help="training container")
    t.add_argument("--val-data", default=None, help="validation container")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--architecture", choices=ARCHITECTURES, default=None,
                   help="surrogate family (overrides config file)")
    t.add_argument("--epochs", type=int, default=None, help="training epochs")
    t.add_argument("--batch-size", type=int, default=None, help="batch size")
    t.add_argument("--learning-rate", type=float, default=None,
                   help="initial step size")
    t.add_argument("--weight-decay", type=float, default=None,
                   help="decoupled weight decay")
    t.add_argument("--scheduler-gamma", type=float, default=None,
                   help="stepwise decay factor")
    t.add_argument("--grad-clip", type=float, default=None,
                   help="global gradient-norm ceiling")
    t.add_argument("--seeds", default=None,
                   help="comma-separated training seeds")
    t.add_argument("--force", action="store_true",
                   help="replace an existing run directory")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", formatter_class=fmt,
                       help="error metrics of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset container")
    e.add_argument("--out", default=None,
                   help="run directory (omit to print JSON)")
    e.add_argument("--batch-size", type=int, default=20, help="batch size")
    e.add_argument("--threshold", type=float, default=0.5,
                   help="firing threshold on V")
    e.add_argument("--force", action="store_true",
                   help="replace an existing run directory")
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("bench", formatter_class=fmt,
                       help="single-sample inference latency")
    b.add_argument("--checkpoint", required=True, help="checkpoint file")
    b.add_argument("--data", required=True, help="dataset container")
    b.add_argument("--index", type=int, default=0, help="sample index")
    b.add_argument("--n-runs", type=int, default=30, help="timed runs")
    b.add_argument("--n-warmup", type=int, default=3, help="warmup runs")
    b.add_argument("--solver-seconds", type=float, default=None,
                   help="reference-solver seconds for the latency ratio")
    b.add_argument("--out", default=None,
                   help="run directory (omit to print JSON)")
    b.add_argument("--force", action="store_true",
                   help="replace an existing run directory")
    b.set_defaults(func=_cmd_bench)

    u = sub.add_parser("tune", formatter_class=fmt,
                       help="random search with rung-based early stopping")
    u.add_argument("--architecture", required=True, choices=ARCHITECTURES,
                   help="search space to sample")
    u.add_argument("--train-data", required=True, help="training container")
    u.add_argument("--val-data", default=None,
                   help="validation container (default: score on train)")
    u.add_argument("--out", required=True, help="run directory")
    u.add_argument("--trials", type=int, default=12, help="configurations")
    u.add_argument("--workers", type=int, default=1, help="worker count")
    u.add_argument("--seed", type=int, default=0, help="master RNG seed")
    u.add_argument("--reduction-factor", type=int, default=3,
                   help="rung promotion fraction denominator")
    u.add_argument("--min-epochs", type=int, default=10,
                   help="first rung boundary")
    u.add_argument("--max-epochs", type=int, default=100,
                   help="final rung boundary")
    u.add_argument("--batch-size", type=int, default=20, help="batch size")
    u.add_argument("--force", action="store_true",
                   help="start fresh, discarding any journal")
    u.set_defaults(func=_cmd_tune)

    i = sub.add_parser("invariance", formatter_class=fmt,
                       help="time-shift consistency of the reference solver")
    i.add_argument("--i", type=float, default=3.0, help="stimulus amplitude")
    i.add_argument("--x", type=float, default=0.5, help="stimulus left edge")
    i.add_argument("--shifts", default="5,25,35",
                   help="comma-separated onset times (ms)")
    i.add_argument("--scheme", choices=("auto", "explicit", "imex"),
                   default="explicit", help="time integrator")
    i.add_argument("--dt", type=float, default=0.01, help="time step (ms)")
    i.add_argument("--t-max", type=float, default=40.0, help="horizon (ms)")
    i.add_argument("--width", type=float, default=0.04,
                   help="stimulus spatial width")
    i.add_argument("--duration", type=float, default=1.0,
                   help="stimulus duration (ms)")
    i.set_defaults(func=_cmd_invariance)

    r = sub.add_parser("report", formatter_class=fmt,
                       help="aggregate eval runs into one table")
    r.add_argument("--runs", required=True,
                   help="comma-separated eval run directories")
    r.add_argument("--format", choices=("json", "csv"), default="json",
                   help="output format")
    r.add_argument("--out", default=None,
                   help="run directory (omit to print)")
    r.add_argument("--force", action="store_true",
                   help="replace an existing run directory")
    r.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "generate" and args.n is None:
        args.n = args.default_n[args.split]
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc.message}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
