"""Error statistics, cost metrics, latency benchmarking, and report export.

Metrics here operate on *denormalized* (physical-unit) fields; the
training loss lives in :mod:`nob.training` and operates on normalized
targets.  Aggregates use the population standard deviation (divisor n)
and the midpoint median convention.  Reported per-run stds are across the
evaluated samples; across-seed spreads come from
:func:`nob.training.multi_seed` summaries and are labeled there.

``REFERENCE_RESULTS`` stores the published benchmark table for all seven
architectures (parameter counts in millions, training hours, per-epoch
seconds, and error statistics); the cost metrics recomputed from it obey
the documented ordering (the dense Fourier operator's training cost is
the highest, the convolutional operator's is second).
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .dataset import NormStats, denormalize

__all__ = [
    "EPS_NORM",
    "REFERENCE_RESULTS",
    "P_MIN",
    "T_MIN",
    "ErrorStats",
    "CostInputs",
    "relative_error",
    "aggregate",
    "cost_c",
    "cost_c_log",
    "reference_costs",
    "evaluate_model",
    "inference_benchmark",
    "action_potential_triggered",
    "threshold_confusion",
    "RunResult",
    "export_report",
]

EPS_NORM = 1e-12

# Published benchmark table: per-architecture trainable parameters
# (millions), training time (hours and seconds/epoch), training relative
# L² (mean/std across five seeds), and test error statistics (mean and
# median, each with its across-seed std).
REFERENCE_RESULTS: dict[str, dict] = {
    "cno": {
        "params_millions": 8.2, "train_hours": 10.0, "epoch_seconds": 36.4,
        "train_l2": {"mean": 0.0323, "std": 0.0059},
        "test_l2": {"mean": 0.1501, "mean_std": 0.0443,
                    "median": 0.0985, "median_std": 0.0152},
        "test_l1": {"mean": 0.0941, "mean_std": 0.0332,
                    "median": 0.0535, "median_std": 0.0123},
    },
    "don": {
        "params_millions": 1.5, "train_hours": 0.5, "epoch_seconds": 1.73,
        "train_l2": {"mean": 0.0273, "std": 0.0041},
        "test_l2": {"mean": 0.7190, "mean_std": 0.0380,
                    "median": 0.8161, "median_std": 0.0001},
        "test_l1": {"mean": 0.5756, "mean_std": 0.0536,
                    "median": 0.6532, "median_std": 0.0132},
    },
    "don_cnn": {
        "params_millions": 0.5, "train_hours": 0.25, "epoch_seconds": 0.88,
        "train_l2": {"mean": 0.1701, "std": 0.0066},
        "test_l2": {"mean": 0.6861, "mean_std": 0.0068,
                    "median": 0.7772, "median_std": 0.0178},
        "test_l1": {"mean": 0.6008, "mean_std": 0.0155,
                    "median": 0.6559, "median_std": 0.0241},
    },
    "pod_don": {
        "params_millions": 1.0, "train_hours": 16.0 / 60.0, "epoch_seconds": 0.98,
        "train_l2": {"mean": 0.0439, "std": 0.0012},
        "test_l2": {"mean": 0.6953, "mean_std": 0.0007,
                    "median": 0.8146, "median_std": 0.0009},
        "test_l1": {"mean": 0.5535, "mean_std": 0.0028,
                    "median": 0.6497, "median_std": 0.0010},
    },
    "fno": {
        "params_millions": 151.1, "train_hours": 4.0, "epoch_seconds": 15.8,
        "train_l2": {"mean": 0.0081, "std": 0.0003},
        "test_l2": {"mean": 1.0333, "mean_std": 0.6000,
                    "median": 0.5393, "median_std": 0.1218},
        "test_l1": {"mean": 1.4655, "mean_std": 1.0330,
                    "median": 0.4894, "median_std": 0.1041},
    },
    "local_no": {
        "params_millions": 0.15, "train_hours": 1.0, "epoch_seconds": 4.91,
        "train_l2": {"mean": 0.0423, "std": 0.0121},
        "test_l2": {"mean": 2.8717, "mean_std": 2.3716,
                    "median": 1.4850, "median_std": 1.4840},
        "test_l1": {"mean": 4.2232, "mean_std": 3.5578,
                    "median": 1.5667, "median_std": 1.6579},
    },
    "tfno": {
        "params_millions": 0.3, "train_hours": 9.0, "epoch_seconds": 35.95,
        "train_l2": {"mean": 0.0444, "std": 0.0067},
        "test_l2": {"mean": 0.9378, "mean_std": 0.1813,
                    "median": 0.4378, "median_std": 0.1259},
        "test_l1": {"mean": 1.5174, "mean_std": 0.4191,
                    "median": 0.4070, "median_std": 0.0905},
    },
}

# Log-cost floors: the smallest parameter count and the shortest training
# time across the reference table.
P_MIN = 0.15
T_MIN = 0.25


# ---------------------------------------------------------------------------
# per-sample errors and aggregates
# ---------------------------------------------------------------------------

def _channel_ratio(diff: np.ndarray, ref: np.ndarray, order: int) -> np.ndarray:
    """[B, C, S] arrays -> [B, C] ratio ‖diff‖_p / ‖ref‖_p with eps guard."""
    if order == 1:
        num = np.sum(np.abs(diff), axis=2)
        den = np.sum(np.abs(ref), axis=2)
    else:
        num = np.sqrt(np.sum(diff * diff, axis=2))
        den = np.sqrt(np.sum(ref * ref, axis=2))
    zero = den == 0.0
    if np.any(zero):
        warnings.warn("relative_error: reference channel with zero norm; "
                      f"using eps={EPS_NORM} denominator", RuntimeWarning,
                      stacklevel=4)
        den = den + EPS_NORM * zero
    return num / den


def relative_error(pred, ref, norm: str = "l2"):
    """Per-sample channel-averaged relative error: ½ Σ_channels ratio_p.

    ``norm`` is "l1" or "l2".  A single sample ([C, ...spatial]) returns a
    float; a batch ([B, C, ...]) returns a 1-D array.  Zero-norm reference
    channels get an eps=1e−12 denominator with a warning.
    """
    order = {"l1": 1, "l2": 2}.get(norm.lower())
    if order is None:
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"pred shape {pred.shape} != ref shape {ref.shape}")
    single = ref.ndim <= 3
    if single:
        pred, ref = pred[None], ref[None]
    b, c = ref.shape[0], ref.shape[1]
    ratios = _channel_ratio(pred.reshape(b, c, -1) - ref.reshape(b, c, -1),
                            ref.reshape(b, c, -1), order)
    out = np.mean(ratios, axis=1)
    return float(out[0]) if single else out


def aggregate(errors) -> tuple[float, float, float]:
    """(mean, median, population std) of a nonempty error sequence.

    Median uses the midpoint convention for even counts; std divides by n.
    """
    arr = np.asarray(list(errors), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("aggregate: empty error sequence")
    return float(np.mean(arr)), float(np.median(arr)), float(np.std(arr))


@dataclass
class ErrorStats:
    """Per-sample relative errors plus recomputable aggregates."""

    l2: np.ndarray
    l1: np.ndarray

    def __post_init__(self):
        self.l2 = np.asarray(self.l2, dtype=np.float64)
        self.l1 = np.asarray(self.l1, dtype=np.float64)
        if self.l2.shape != self.l1.shape:
            raise ValueError("per-sample error lists must align")
        if np.any(self.l2 < 0) or np.any(self.l1 < 0):
            raise ValueError("relative errors must be >= 0")

    @property
    def n_samples(self) -> int:
        return int(self.l2.size)

    def summary(self) -> dict:
        l2m, l2med, l2s = aggregate(self.l2)
        l1m, l1med, l1s = aggregate(self.l1)
        return {"l2": {"mean": l2m, "median": l2med, "std": l2s},
                "l1": {"mean": l1m, "median": l1med, "std": l1s}}


# ---------------------------------------------------------------------------
# cost metrics
# ---------------------------------------------------------------------------

@dataclass
class CostInputs:
    """Inputs to the log-damped cost: error, size (M params), time (hours)."""

    e: float
    p: float
    t: float
    p_min: float = P_MIN
    t_min: float = T_MIN
    alpha: float = 0.5
    beta: float = 0.5


def cost_c(e: float, p: float, t: float) -> float:
    """Plain cost: error × parameters (millions) × training time (hours)."""
    if e < 0 or p < 0 or t < 0:
        raise ValueError("cost inputs must be nonnegative")
    return e * p * t


def cost_c_log(inputs: CostInputs) -> float:
    """Log-damped cost E·[1+α·log₁₀(P/P_min)]·[1+β·log₁₀(T/T_min)]."""
    if inputs.p_min <= 0 or inputs.t_min <= 0:
        raise ValueError("cost floors must be positive")
    if inputs.p < inputs.p_min or inputs.t < inputs.t_min:
        raise ValueError("cost_c_log requires P >= P_min and T >= T_min")
    return (inputs.e
            * (1.0 + inputs.alpha * math.log10(inputs.p / inputs.p_min))
            * (1.0 + inputs.beta * math.log10(inputs.t / inputs.t_min)))


def reference_costs(split: str = "train") -> dict[str, dict[str, float]]:
    """Recompute both cost metrics from the stored reference table.

    ``split`` selects the error column: "train" uses the training relative
    L² mean, "test" the test relative L² mean.
    """
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    out = {}
    for arch, row in REFERENCE_RESULTS.items():
        e = (row["train_l2"]["mean"] if split == "train"
             else row["test_l2"]["mean"])
        p, t = row["params_millions"], row["train_hours"]
        out[arch] = {
            "cost_c": cost_c(e, p, t),
            "cost_c_log": cost_c_log(CostInputs(e=e, p=p, t=t)),
        }
    return out


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def _output_stats(stats: NormStats) -> NormStats:
    """Stats restricted to the two output channels (drop the input channel)."""
    return NormStats(mins=stats.mins[1:], maxs=stats.maxs[1:])


def evaluate_model(model, dataset, batch_size: int = 20) -> ErrorStats:
    """Per-sample denormalized relative errors of ``model`` on ``dataset``.

    The model consumes normalized inputs; predictions and references are
    mapped back to physical units before the error ratios.
    """
    fields = dataset.normalized()
    ref_raw = dataset.fields.astype(np.float64)[:, 1:]
    out_stats = _output_stats(dataset.norm)
    n = fields.shape[0]
    l1 = np.empty(n)
    l2 = np.empty(n)
    with no_grad():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            pred = model(fields[start:stop, :1]).data
            pred_raw = denormalize(pred, out_stats)
            l2[start:stop] = relative_error(pred_raw, ref_raw[start:stop], "l2")
            l1[start:stop] = relative_error(pred_raw, ref_raw[start:stop], "l1")
    return ErrorStats(l2=l2, l1=l1)


def inference_benchmark(model, sample, norm: NormStats, n_warmup: int = 3,
                        n_runs: int = 30,
                        solver_seconds: float | None = None) -> dict:
    """Wall-clock latency of the end-to-end single-sample path.

    Each run times normalize → forward → denormalize on one raw input
    field ([3, H, W] or [1, 3, H, W]; only channel 0 is consumed).
    Returns median and 95th-percentile milliseconds, the per-run list,
    and the ratio of the median to a stored reference-solver timing
    measured on the same machine (NaN when not supplied).  Single-threaded
    by construction — pin BLAS threads for stable numbers.
    """
    if n_runs < 10:
        raise ValueError("n_runs must be >= 10")
    raw = np.asarray(sample, dtype=np.float64)
    if raw.ndim == 3:
        raw = raw[None]
    out_stats = _output_stats(norm)

    def once() -> float:
        tic = time.perf_counter()
        with no_grad():
            x = (raw[:, :1] - norm.mins[0]) / max(norm.maxs[0] - norm.mins[0],
                                                  EPS_NORM)
            pred = model(x).data
            denormalize(pred, out_stats)
        return time.perf_counter() - tic

    for _ in range(n_warmup):
        once()
    runs_ms = np.array([once() * 1e3 for _ in range(n_runs)])
    median = float(np.median(runs_ms))
    return {
        "median_ms": median,
        "p95_ms": float(np.percentile(runs_ms, 95)),
        "per_run_ms": runs_ms.tolist(),
        "ratio_vs_solver": (median / (solver_seconds * 1e3)
                            if solver_seconds else math.nan),
    }


# ---------------------------------------------------------------------------
# threshold (firing) diagnostics
# ---------------------------------------------------------------------------

def action_potential_triggered(v_field, threshold: float = 0.5):
    """Fired iff max over the space–time field of V ≥ threshold.

    2-D input returns a bool; leading axes return a bool array.  The
    default threshold is half the depolarization plateau in normalized
    potential units.
    """
    arr = np.asarray(v_field, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError("v_field must have space-time trailing axes")
    fired = arr.max(axis=(-2, -1)) >= threshold
    return bool(fired) if arr.ndim == 2 else fired


def threshold_confusion(model, dataset, threshold: float = 0.5,
                        batch_size: int = 20) -> dict[str, int]:
    """Firing-decision confusion counts of model vs reference over a split.

    Returns {"both_fired", "model_only", "reference_only", "neither"};
    decisions compare denormalized predicted V against the stored
    reference V under the same threshold.
    """
    fields = dataset.normalized()
    ref_v = dataset.fields.astype(np.float64)[:, 1]
    out_stats = _output_stats(dataset.norm)
    n = fields.shape[0]
    model_fired = np.empty(n, dtype=bool)
    with no_grad():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            pred = model(fields[start:stop, :1]).data
            pred_v = denormalize(pred, out_stats)[:, 0]
            model_fired[start:stop] = action_potential_triggered(pred_v,
                                                                 threshold)
    ref_fired = action_potential_triggered(ref_v, threshold)
    return {
        "both_fired": int(np.sum(model_fired & ref_fired)),
        "model_only": int(np.sum(model_fired & ~ref_fired)),
        "reference_only": int(np.sum(~model_fired & ref_fired)),
        "neither": int(np.sum(~model_fired & ~ref_fired)),
    }


# ---------------------------------------------------------------------------
# report export
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    """One architecture's evaluated run, ready for the report table."""

    architecture: str
    params_millions: float
    train_hours: float
    epoch_seconds: float
    train_l2_mean: float
    train_l2_std: float
    errors: ErrorStats
    latency_median_ms: float = math.nan
    latency_ratio: float = math.nan

    def report_row(self) -> dict:
        test = self.errors.summary()
        row = {
            "architecture": self.architecture,
            "params_millions": self.params_millions,
            "train_hours": self.train_hours,
            "epoch_seconds": self.epoch_seconds,
            "train_l2": {"mean": self.train_l2_mean, "std": self.train_l2_std},
            "test": test,
            "cost_c": cost_c(self.train_l2_mean, self.params_millions,
                             self.train_hours),
            "cost_c_log": math.nan,
            "latency": {"median_ms": self.latency_median_ms,
                        "ratio_vs_solver": self.latency_ratio},
        }
        try:
            row["cost_c_log"] = cost_c_log(CostInputs(
                e=self.train_l2_mean, p=self.params_millions,
                t=self.train_hours))
        except ValueError:
            pass  # below the published floors: log cost undefined, kept NaN
        return row


def _svg_header(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<title>{title}</title>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class _Scale:
    """Linear data→pixel scale for one axis."""

    def __init__(self, lo: float, hi: float, a: float, b: float):
        if hi <= lo:
            hi = lo + 1.0
        self.lo, self.hi, self.a, self.b = lo, hi, a, b

    def __call__(self, v: float) -> float:
        frac = (v - self.lo) / (self.hi - self.lo)
        return self.a + frac * (self.b - self.a)


def _svg_boxplot(rows: list[dict], stats: list[ErrorStats]) -> str:
    """Quartile box plot of per-sample test L² errors per architecture."""
    width, height = 640, 400
    parts = _svg_header(width, height, "test relative L2 error distribution")
    all_vals = np.concatenate([s.l2 for s in stats])
    sy = _Scale(0.0, float(all_vals.max()), height - 40, 20)
    n = len(rows)
    slot = (width - 80) / max(n, 1)
    parts.append(f'<line x1="60" y1="20" x2="60" y2="{height - 40}" '
                 'stroke="black"/>')
    for k in range(5):
        v = sy.lo + k * (sy.hi - sy.lo) / 4
        y = _fmt(sy(v))
        parts.append(f'<line x1="55" y1="{y}" x2="60" y2="{y}" stroke="black"/>')
        parts.append(f'<text x="50" y="{y}" font-size="10" '
                     f'text-anchor="end">{_fmt(v)}</text>')
    for i, (row, es) in enumerate(zip(rows, stats)):
        q0, q1, q2, q3, q4 = (float(np.percentile(es.l2, q))
                              for q in (0, 25, 50, 75, 100))
        cx = 80 + (i + 0.5) * slot
        half = min(30.0, slot * 0.3)
        parts.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(sy(q0))}" '
                     f'x2="{_fmt(cx)}" y2="{_fmt(sy(q4))}" stroke="black"/>')
        parts.append(f'<rect x="{_fmt(cx - half)}" y="{_fmt(sy(q3))}" '
                     f'width="{_fmt(2 * half)}" '
                     f'height="{_fmt(sy(q1) - sy(q3))}" fill="lightsteelblue" '
                     'stroke="black"/>')
        parts.append(f'<line x1="{_fmt(cx - half)}" y1="{_fmt(sy(q2))}" '
                     f'x2="{_fmt(cx + half)}" y2="{_fmt(sy(q2))}" '
                     'stroke="black" stroke-width="2"/>')
        parts.append(f'<text x="{_fmt(cx)}" y="{height - 24}" font-size="11" '
                     f'text-anchor="middle">{row["architecture"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _svg_cost_bars(rows: list[dict]) -> str:
    """Bar chart of the plain cost metric per architecture."""
    width, height = 640, 400
    parts = _svg_header(width, height, "cost metric per architecture")
    costs = [row["cost_c"] for row in rows]
    sy = _Scale(0.0, max(costs) if costs else 1.0, height - 40, 20)
    n = len(rows)
    slot = (width - 80) / max(n, 1)
    parts.append(f'<line x1="60" y1="20" x2="60" y2="{height - 40}" '
                 'stroke="black"/>')
    for i, row in enumerate(rows):
        cx = 80 + (i + 0.5) * slot
        half = min(30.0, slot * 0.3)
        y_top = sy(row["cost_c"])
        parts.append(f'<rect x="{_fmt(cx - half)}" y="{_fmt(y_top)}" '
                     f'width="{_fmt(2 * half)}" '
                     f'height="{_fmt(sy(0.0) - y_top)}" fill="salmon" '
                     'stroke="black"/>')
        parts.append(f'<text x="{_fmt(cx)}" y="{_fmt(y_top - 4)}" '
                     f'font-size="10" text-anchor="middle">'
                     f'{_fmt(row["cost_c"])}</text>')
        parts.append(f'<text x="{_fmt(cx)}" y="{height - 24}" font-size="11" '
                     f'text-anchor="middle">{row["architecture"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _svg_scatter(rows: list[dict]) -> str:
    """Test error vs inference latency scatter."""
    width, height = 640, 400
    parts = _svg_header(width, height, "error vs inference latency")
    pts = [(row["latency"]["median_ms"], row["test"]["l2"]["mean"],
            row["architecture"]) for row in rows
           if math.isfinite(row["latency"]["median_ms"])]
    xs = [p[0] for p in pts] or [1.0]
    ys = [p[1] for p in pts] or [1.0]
    sx = _Scale(0.0, max(xs), 60, width - 20)
    sy = _Scale(0.0, max(ys), height - 40, 20)
    parts.append(f'<line x1="60" y1="{height - 40}" x2="{width - 20}" '
                 f'y2="{height - 40}" stroke="black"/>')
    parts.append(f'<line x1="60" y1="20" x2="60" y2="{height - 40}" '
                 'stroke="black"/>')
    for x, y, name in pts:
        parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="5" '
                     'fill="seagreen"/>')
        parts.append(f'<text x="{_fmt(sx(x) + 8)}" y="{_fmt(sy(y) + 4)}" '
                     f'font-size="11">{name}</text>')
    parts.append(f'<text x="{width // 2}" y="{height - 6}" font-size="11" '
                 f'text-anchor="middle">median latency (ms)</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _jsonable(obj):
    """Strict-JSON copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def export_report(runs: list[RunResult], out_dir) -> list[str]:
    """Write report.json, per_sample_errors.csv, and three SVG plots.

    ``report.json`` holds one row per run with the frozen field names
    (non-finite values serialized as null); the CSV lists every per-sample
    error so aggregates are recomputable bit-exactly (floats written via
    repr).  Output bytes are deterministic for fixed inputs.  Returns the
    written paths.
    """
    import os

    if not runs:
        raise ValueError("export_report needs at least one run")
    os.makedirs(out_dir, exist_ok=True)
    rows = [r.report_row() for r in runs]

    paths = []
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as fh:
        json.dump(_jsonable({"runs": rows}), fh, indent=2, sort_keys=True,
                  allow_nan=False)
        fh.write("\n")
    paths.append(report_path)

    csv_path = os.path.join(out_dir, "per_sample_errors.csv")
    with open(csv_path, "w") as fh:
        fh.write("architecture,sample_index,rel_l2,rel_l1\n")
        for r in runs:
            for i in range(r.errors.n_samples):
                fh.write(f"{r.architecture},{i},{float(r.errors.l2[i])!r},"
                         f"{float(r.errors.l1[i])!r}\n")
    paths.append(csv_path)

    for name, text in (("boxplot.svg", _svg_boxplot(rows, [r.errors for r in runs])),
                       ("cost_bars.svg", _svg_cost_bars(rows)),
                       ("error_vs_latency.svg", _svg_scatter(rows))):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
            fh.write("\n")
        paths.append(path)
    return paths
