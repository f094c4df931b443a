"""Loss, optimizer, scheduler, and the deterministic training loop.

The loss is the batched-mean relative L² over the two output channels,
optimized with decoupled-weight-decay Adam (AdamW) under a stepped
learning-rate schedule (multiply by gamma every ten epochs).  A training
run is single-threaded and bitwise deterministic given (config, seed):
parameter initialization and the per-epoch minibatch shuffle both derive
from counter-based Philox streams, and all arithmetic is float64.

Checkpoints reuse the shared framed-container format via
:mod:`nob.models.common`; histories export as CSV with one row per
completed epoch.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, constant, mul, no_grad, reshape, scalar_mul, sqrt, square, sub, tsum
from .models import ARCHITECTURES, build_model
from .models.common import save_checkpoint

__all__ = [
    "FOUND_OPTIMIZER",
    "TrainConfig",
    "History",
    "Checkpoint",
    "DivergenceError",
    "relative_l2_loss",
    "AdamWState",
    "adamw_step",
    "step_lr",
    "train",
    "multi_seed",
]

EPS_NORM = 1e-12

# Tuned optimizer settings shipped with each architecture preset:
# initial learning rate, weight decay, and the every-ten-epochs decay factor.
FOUND_OPTIMIZER: dict[str, dict[str, float]] = {
    "fno": {"learning_rate": 1.8e-3, "weight_decay": 4e-6, "scheduler_gamma": 0.85},
    "tfno": {"learning_rate": 5.5e-3, "weight_decay": 5.5e-4, "scheduler_gamma": 0.8},
    "don": {"learning_rate": 1.8e-3, "weight_decay": 4.5e-4, "scheduler_gamma": 0.97},
    "don_cnn": {"learning_rate": 6.6e-3, "weight_decay": 4.6e-4, "scheduler_gamma": 0.84},
    "pod_don": {"learning_rate": 6.7e-4, "weight_decay": 4.25e-4, "scheduler_gamma": 0.92},
    "cno": {"learning_rate": 1.9e-4, "weight_decay": 3.2e-3, "scheduler_gamma": 0.91},
}


@dataclass
class TrainConfig:
    """Optimizer/schedule settings plus the architecture they apply to.

    ``model`` holds overrides merged onto the architecture's preset when the
    training entry points build the network themselves.  Optimizer fields
    left as None resolve to the architecture's tuned values.
    """

    architecture: str = "fno"
    model: dict = field(default_factory=dict)
    epochs: int = 1000
    batch_size: int = 20
    learning_rate: float | None = None
    weight_decay: float | None = None
    scheduler_gamma: float | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    grad_clip: float | None = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; "
                             f"expected one of {ARCHITECTURES}")
        found = FOUND_OPTIMIZER[self.architecture]
        if self.learning_rate is None:
            self.learning_rate = found["learning_rate"]
        if self.weight_decay is None:
            self.weight_decay = found["weight_decay"]
        if self.scheduler_gamma is None:
            self.scheduler_gamma = found["scheduler_gamma"]
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.weight_decay > 0:
            raise ValueError("weight_decay must be > 0")
        if not 0.0 < self.scheduler_gamma <= 1.0:
            raise ValueError("scheduler_gamma must satisfy 0 < gamma <= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be > 0 when set")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "model": dict(self.model),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "scheduler_gamma": self.scheduler_gamma,
            "seeds": list(self.seeds),
            "grad_clip": self.grad_clip,
        }

    @staticmethod
    def from_dict(obj: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown TrainConfig fields: {sorted(extra)}")
        kwargs = dict(obj)
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _target_norms(target: np.ndarray) -> np.ndarray:
    """Per-(sample, channel) L² norms with the zero-norm guard applied."""
    flat = target.reshape(target.shape[0], target.shape[1], -1)
    norms = np.sqrt(np.sum(flat * flat, axis=2))
    zero = norms == 0.0
    if np.any(zero):
        warnings.warn("relative_l2_loss: target channel with zero norm; "
                      f"using eps={EPS_NORM} denominator", RuntimeWarning,
                      stacklevel=3)
        norms = norms + EPS_NORM * zero
    return norms


def relative_l2_loss(pred, target) -> Tensor:
    """Mean over samples of ½·Σ_channels ‖pred − target‖₂ / ‖target‖₂.

    Accepts a single sample ([2, ...spatial]) or a batch ([B, 2, ...]);
    channel norms use the discrete sum over all spatial points.  ``target``
    is treated as a constant; a zero-norm target channel gets an
    eps=1e−12 denominator and a warning.  Returns a scalar Tensor
    (``float(loss.data)`` for the plain value).
    """
    if not isinstance(pred, Tensor):
        pred = constant(np.asarray(pred, dtype=np.float64))
    tdata = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != tdata.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {tdata.shape}")
    single = tdata.ndim <= 3
    if single:
        pred = reshape(pred, (1,) + pred.shape)
        tdata = tdata[None]
    if tdata.shape[1] != 2:
        raise ValueError(f"expected 2 output channels, got {tdata.shape[1]}")
    b = tdata.shape[0]
    norms = _target_norms(tdata)

    diff = sub(pred, constant(tdata))
    sq = reshape(square(diff), (b, 2, -1))
    per_channel = sqrt(tsum(sq, axis=2))            # [B, 2]
    scaled = mul(per_channel, constant(1.0 / norms))
    return scalar_mul(tsum(scaled), 0.5 / b)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @staticmethod
    def init(params: dict) -> "AdamWState":
        return AdamWState(m={k: np.zeros_like(p) for k, p in params.items()},
                          v={k: np.zeros_like(p) for k, p in params.items()},
                          t=0)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float,
               weight_decay: float = 0.0, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update, in place.

    θ ← θ − lr·(m̂/(√v̂ + eps) + weight_decay·θ) with bias-corrected
    moments; the decay term multiplies the parameter directly and never
    enters the moment accumulators.  Raises FloatingPointError naming the
    offending parameter if its gradient is not finite.
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g is None:
            raise FloatingPointError(f"missing gradient for parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * p
        p -= lr * update


def step_lr(eta0: float, gamma: float, epoch: int) -> float:
    """Stepped schedule: eta0 · gamma^⌊epoch/10⌋ (piecewise constant)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return eta0 * gamma ** (epoch // 10)


# ---------------------------------------------------------------------------
# history and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class History:
    """Per-epoch training record; list lengths equal epochs completed."""

    train_loss: list = field(default_factory=list)
    val_rel_l2: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def append(self, train_loss: float, val_rel_l2: float, lr: float,
               seconds: float) -> None:
        self.train_loss.append(float(train_loss))
        self.val_rel_l2.append(float(val_rel_l2))
        self.lr.append(float(lr))
        self.seconds.append(float(seconds))

    @property
    def best_val_epoch(self) -> int | None:
        """Epoch index with the lowest validation error (final-epoch
        selection is the reporting default; this is logged alongside)."""
        vals = np.asarray(self.val_rel_l2)
        if vals.size == 0 or np.all(np.isnan(vals)):
            return None
        return int(np.nanargmin(vals))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_rel_l2", "lr", "seconds"])
            for e in range(len(self)):
                writer.writerow([e, repr(self.train_loss[e]),
                                 repr(self.val_rel_l2[e]), repr(self.lr[e]),
                                 repr(self.seconds[e])])

    @staticmethod
    def from_csv(path) -> "History":
        hist = History()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                hist.append(float(row["train_loss"]), float(row["val_rel_l2"]),
                            float(row["lr"]), float(row["seconds"]))
        return hist


@dataclass
class Checkpoint:
    """Trained (or initial) model state plus the recipe that produced it.

    ``state`` maps parameter names to float64 arrays; ``extras`` carries
    non-trained arrays such as a fitted spatial basis.  ``meta`` holds only
    deterministic fields so two same-seed runs serialize byte-identically.
    """

    architecture: str
    config: dict
    state: dict
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_checkpoint(path, self.architecture, self.config, self.state,
                        extras=self.extras, meta=self.meta)


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss or gradient.

    Carries the last epoch-boundary checkpoint (``.checkpoint``) and the
    history up to the failure (``.history``).
    """

    def __init__(self, message: str, checkpoint: Checkpoint, history: History):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _as_fields(dataset) -> np.ndarray:
    """Normalized [n, 3, H, W] float64 fields from a Dataset or array."""
    if hasattr(dataset, "normalized"):
        return dataset.normalized()
    arr = np.asarray(dataset, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValueError(f"expected [n, 3, H, W] fields, got shape {arr.shape}")
    return arr


def _resolve_model(model, cfg: TrainConfig, seed: int):
    if model is None:
        return build_model(cfg.architecture, cfg.model, seed=seed)
    if callable(model) and not hasattr(model, "params"):
        return model(seed)
    return model


def _snapshot(model, cfg: TrainConfig, seed: int, meta: dict) -> Checkpoint:
    extras = model.checkpoint_extras() if hasattr(model, "checkpoint_extras") else {}
    return Checkpoint(architecture=cfg.architecture,
                      config=model.config.to_dict(),
                      state=model.state_arrays(),
                      extras=extras,
                      meta=dict(meta, seed=seed))


def _epoch_eval(model, fields: np.ndarray, batch_size: int) -> float:
    """Sample-weighted mean relative L² on a normalized field array."""
    n = fields.shape[0]
    total = 0.0
    with no_grad():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            pred = model(fields[start:stop, :1])
            loss = relative_l2_loss(pred, fields[start:stop, 1:])
            total += float(loss.data) * (stop - start)
    return total / n


def train(model, train_set, val_set, cfg: TrainConfig, seed: int = 0,
          on_epoch=None):
    """Run the full loop; returns (Checkpoint, History).

    ``model`` may be a built model, a seed→model factory, or None (build
    from ``cfg``).  Datasets are normalized [n, 3, H, W] stacks (channel 0
    the input field, channels 1–2 the targets) or Dataset objects.  The
    run is deterministic given (cfg, seed); per-epoch wall-clock seconds
    land only in the History, never in checkpoint bytes.  A non-finite
    loss or gradient raises DivergenceError carrying the last good
    checkpoint.  ``on_epoch(epoch, history)``, when given, is invoked
    after each epoch (used by the tuner for rung reporting).
    """
    model = _resolve_model(model, cfg, seed)
    fields = _as_fields(train_set)
    val_fields = None if val_set is None else _as_fields(val_set)
    n = fields.shape[0]
    meta = {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate, "weight_decay": cfg.weight_decay,
            "scheduler_gamma": cfg.scheduler_gamma}

    history = History()
    last_good = _snapshot(model, cfg, seed, meta)
    if cfg.epochs == 0:
        return last_good, history

    params = {name: t.data for name, t in model.params.items()}
    state = AdamWState.init(params)

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        lr = step_lr(cfg.learning_rate, cfg.scheduler_gamma, epoch)
        order = np.random.Generator(
            np.random.Philox(key=[seed, epoch])).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = fields[idx, :1]
            yb = fields[idx, 1:]
            model.zero_grads()
            loss = relative_l2_loss(model(xb), yb)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", last_good, history)
            loss.backward()
            grads = {name: t.grad for name, t in model.params.items()}
            if cfg.grad_clip is not None:
                gnorm = math.sqrt(sum(float(np.sum(g * g))
                                      for g in grads.values() if g is not None))
                if gnorm > cfg.grad_clip:
                    scale = cfg.grad_clip / gnorm
                    grads = {k: (g * scale if g is not None else None)
                             for k, g in grads.items()}
            try:
                adamw_step(params, grads, state, lr,
                           weight_decay=cfg.weight_decay)
            except FloatingPointError as exc:
                raise DivergenceError(
                    f"{exc} at epoch {epoch}", last_good, history) from exc
            epoch_loss += value * len(idx)
        epoch_loss /= n
        val_err = (math.nan if val_fields is None
                   else _epoch_eval(model, val_fields, cfg.batch_size))
        history.append(epoch_loss, val_err, lr, time.perf_counter() - tic)
        last_good = _snapshot(model, cfg, seed, meta)
        if on_epoch is not None:
            on_epoch(epoch, history)

    final_meta = dict(meta, best_val_epoch=history.best_val_epoch,
                      final_train_loss=history.train_loss[-1])
    return _snapshot(model, cfg, seed, final_meta), history


def multi_seed(train_set, val_set, cfg: TrainConfig,
               seeds: tuple[int, ...] | None = None, model=None):
    """Train one run per seed; aggregate final losses (mean / population std).

    Returns (per_seed, summary): ``per_seed`` maps seed → (Checkpoint,
    History); ``summary`` holds mean/std of the final train loss and final
    validation relative L² across seeds.
    """
    seeds = cfg.seeds if seeds is None else tuple(int(s) for s in seeds)
    per_seed = {}
    for s in seeds:
        per_seed[s] = train(model, train_set, val_set, cfg, seed=s)
    finals = np.array([per_seed[s][1].train_loss[-1] if len(per_seed[s][1])
                       else math.nan for s in seeds])
    vals = np.array([per_seed[s][1].val_rel_l2[-1] if len(per_seed[s][1])
                     else math.nan for s in seeds])
    summary = {
        "seeds": list(seeds),
        "train_loss": {"mean": float(np.mean(finals)), "std": float(np.std(finals))},
        "val_rel_l2": {"mean": float(np.mean(vals)), "std": float(np.std(vals))},
    }
    return per_seed, summary
