"""Dataset protocol: sampling, solving, resampling, normalization, file IO.

A sample is a stimulus spec plus the solved fields, stored as three channels
(``i_app``, ``v``, ``w``) on a common coarse grid (64 x 64 by default).
Files use the framed container of :mod:`nob.container` with a JSON header
describing split, grid, per-channel min-max stats, and the exact stimulus
specs; the payload is raw little-endian float32, sample-major then
channel-major, with space as the outer and time as the inner axis.

Sampling protocol:

* train split: amplitude ~ U[0.1, 3], x_min ~ U[0, 0.96], onset fixed at 5 ms;
* test split: amplitude and x_min as above, onset ~ U[0, 37] ms.

The 500-sample test-protocol pool is split into validation/test halves by
index parity (even -> validation, odd -> test), see :func:`split_pool`.

Each sample's random draws come from a counter-based generator keyed by
(seed, split, index), so generation is reproducible and independent of worker
count or ordering: files produced with 1 worker and N workers are
byte-identical.
"""

from __future__ import annotations

import math
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import container, fhn

__all__ = [
    "CHANNELS", "FORMAT_VERSION", "SplitSpec", "NormStats", "Dataset",
    "sample_spec", "resample", "compute_norm_stats", "normalize",
    "denormalize", "generate", "split_pool", "max_workers",
]

CHANNELS = ("i_app", "v", "w")
FORMAT_VERSION = 1


def max_workers(requested: int) -> int:
    """Cap a worker count by the NOB_THREADS environment variable."""
    cap = os.environ.get("NOB_THREADS")
    if cap is not None:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            warnings.warn(f"ignoring non-integer NOB_THREADS={cap!r}")
    return max(1, requested)


@dataclass(frozen=True)
class SplitSpec:
    """Sampling ranges for one dataset split.

    ``t_min_range=None`` means the onset is fixed at ``t_min_fixed``.
    """

    name: str
    n_samples: int
    amplitude_range: tuple[float, float] = (0.1, 3.0)
    x_min_range: tuple[float, float] = (0.0, 0.96)
    t_min_range: tuple[float, float] | None = None
    t_min_fixed: float = 5.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")

    @staticmethod
    def train(n_samples: int = 2000) -> "SplitSpec":
        return SplitSpec(name="train", n_samples=n_samples)

    @staticmethod
    def test(n_samples: int = 500) -> "SplitSpec":
        return SplitSpec(name="test", n_samples=n_samples,
                         t_min_range=(0.0, 37.0))


def sample_spec(split: SplitSpec, seed: int, index: int) -> fhn.StimulusSpec:
    """Stimulus spec for one sample, a pure function of (split, seed, index).

    Uses a counter-based (Philox) stream keyed by seed, a CRC of the split
    name, and the sample index; draw order is amplitude, x_min, t_min.
    """
    if index < 0 or index >= 2 ** 32:
        raise ValueError("index out of range")
    salt = zlib.crc32(split.name.encode("utf-8"))
    key = np.array([seed % 2 ** 64, (salt << 32) | index], dtype=np.uint64)
    g = np.random.Generator(np.random.Philox(key=key))
    amplitude = g.uniform(*split.amplitude_range)
    x_min = g.uniform(*split.x_min_range)
    if split.t_min_range is None:
        t_min = split.t_min_fixed
    else:
        t_min = g.uniform(*split.t_min_range)
    return fhn.StimulusSpec(amplitude=amplitude, x_min=x_min, t_min=t_min)


def _interp_matrix(n_src: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix taking n_src samples to n_out samples at
    uniformly spaced positions including both endpoints.

    Rows are pure unit picks when the target position lands on a source index
    (within 1e-9), linear two-point mixes otherwise.
    """
    if n_out > n_src:
        raise ValueError(f"upsampling not supported ({n_src} -> {n_out})")
    if n_out < 2:
        raise ValueError("need at least two output samples per axis")
    w = np.zeros((n_out, n_src))
    scale = (n_src - 1) / (n_out - 1)
    for j in range(n_out):
        pos = j * scale
        i0 = int(math.floor(pos))
        frac = pos - i0
        if frac < 1e-9 or i0 + 1 >= n_src:
            w[j, i0] = 1.0
        else:
            w[j, i0] = 1.0 - frac
            w[j, i0 + 1] = frac
    return w


def resample(field: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Subsample a (space, time) field to ``out_shape``, endpoints included.

    Separable: exact index picks where the stride divides evenly, linear
    interpolation otherwise.  Upsampling is refused.
    """
    ws = _interp_matrix(field.shape[0], out_shape[0])
    wt = _interp_matrix(field.shape[1], out_shape[1])
    return ws @ field @ wt.T


@dataclass(frozen=True)
class NormStats:
    """Per-channel min-max statistics (computed from a training corpus)."""

    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def degenerate(self) -> tuple[bool, ...]:
        return tuple(mx <= mn for mn, mx in zip(self.mins, self.maxs))

    def to_json(self) -> dict:
        return {ch: {"min": mn, "max": mx, "degenerate": deg}
                for ch, mn, mx, deg in zip(CHANNELS, self.mins, self.maxs,
                                           self.degenerate())}

    @staticmethod
    def from_json(obj: dict) -> "NormStats":
        return NormStats(mins=tuple(obj[ch]["min"] for ch in CHANNELS),
                         maxs=tuple(obj[ch]["max"] for ch in CHANNELS))


def compute_norm_stats(fields: np.ndarray) -> NormStats:
    """Min/max per channel over a (n, channels, space, time) block."""
    mins = fields.min(axis=(0, 2, 3))
    maxs = fields.max(axis=(0, 2, 3))
    return NormStats(mins=tuple(float(x) for x in mins),
                     maxs=tuple(float(x) for x in maxs))


def normalize(fields: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map each channel to [0, 1] with the given stats (degenerate -> 0)."""
    out = np.empty(fields.shape, dtype=np.float64)
    for ci, (mn, mx) in enumerate(zip(stats.mins, stats.maxs)):
        if mx <= mn:
            warnings.warn(f"channel {CHANNELS[ci]} is degenerate "
                          f"(min == max == {mn}); normalized to 0")
            out[:, ci] = 0.0
        else:
            out[:, ci] = (fields[:, ci] - mn) / (mx - mn)
    return out


def denormalize(fields: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of :func:`normalize` (degenerate channels map back to min)."""
    out = np.empty(fields.shape, dtype=np.float64)
    for ci, (mn, mx) in enumerate(zip(stats.mins, stats.maxs)):
        if mx <= mn:
            out[:, ci] = mn
        else:
            out[:, ci] = fields[:, ci] * (mx - mn) + mn
    return out


@dataclass
class Dataset:
    """In-memory dataset: raw physical fields plus bookkeeping.

    ``fields`` has shape (n, 3, space, time), float32, unnormalized;
    ``norm`` holds the stats to be used for normalization (for test-protocol
    files these should come from the training corpus).
    """

    split: str
    seed: int
    fields: np.ndarray
    specs: list[fhn.StimulusSpec]
    norm: NormStats
    grid: fhn.Grid1D = field(default_factory=fhn.Grid1D)
    scheme: str = "auto"

    @property
    def n_samples(self) -> int:
        return self.fields.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.fields.shape[2], self.fields.shape[3]

    def normalized(self) -> np.ndarray:
        return normalize(self.fields.astype(np.float64), self.norm)

    def denormalize(self, fields: np.ndarray) -> np.ndarray:
        return denormalize(fields, self.norm)

    def subset(self, idx) -> "Dataset":
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        return replace(self, fields=self.fields[idx],
                       specs=[self.specs[int(i)] for i in idx])

    # -- file IO ------------------------------------------------------------

    def save(self, path) -> None:
        nx, nt = self.resolution
        header = {
            "kind": "dataset",
            "format_version": FORMAT_VERSION,
            "split": self.split,
            "n_samples": self.n_samples,
            "nx": nx,
            "nt": nt,
            "channels": list(CHANNELS),
            "dtype": "f32le",
            "grid": {"nx": self.grid.nx, "dt": self.grid.dt,
                     "t_max": self.grid.t_max, "scheme": self.scheme},
            "norm_stats": self.norm.to_json(),
            "specs": [{"i": s.amplitude, "x_min": s.x_min, "t_min": s.t_min,
                       "width": s.width, "duration": s.duration}
                      for s in self.specs],
            "generator_seed": self.seed,
        }
        payload = np.ascontiguousarray(self.fields, dtype="<f4").tobytes()
        container.write_frame(path, header, payload)

    @staticmethod
    def load(path) -> "Dataset":
        header, payload = container.read_frame(path)
        if header.get("kind") != "dataset":
            raise container.HeaderMismatchError(
                f"{path}: not a dataset container (kind={header.get('kind')!r})")
        if header.get("format_version") != FORMAT_VERSION:
            raise container.ContainerError(
                f"{path}: unsupported format_version {header.get('format_version')!r}")
        if header.get("dtype") != "f32le":
            raise container.HeaderMismatchError(
                f"{path}: unsupported dtype {header.get('dtype')!r}")
        if list(header.get("channels", [])) != list(CHANNELS):
            raise container.HeaderMismatchError(
                f"{path}: unexpected channel list {header.get('channels')!r}")
        try:
            n = int(header["n_samples"])
            nx = int(header["nx"])
            nt = int(header["nt"])
            grid_h = header["grid"]
            specs_h = header["specs"]
            norm = NormStats.from_json(header["norm_stats"])
        except (KeyError, TypeError, ValueError) as exc:
            raise container.ContainerError(f"{path}: bad header field: {exc}") from exc
        container.expect_payload_size(path, payload, n * len(CHANNELS) * nx * nt * 4)
        if len(specs_h) != n:
            raise container.HeaderMismatchError(
                f"{path}: {len(specs_h)} specs for {n} samples")
        fields = np.frombuffer(payload, dtype="<f4").reshape(n, len(CHANNELS), nx, nt).copy()
        specs = [fhn.StimulusSpec(amplitude=s["i"], x_min=s["x_min"],
                                  t_min=s["t_min"], width=s.get("width", 0.04),
                                  duration=s.get("duration", 1.0))
                 for s in specs_h]
        grid = fhn.Grid1D(nx=int(grid_h["nx"]), dt=float(grid_h["dt"]),
                          t_max=float(grid_h["t_max"]))
        return Dataset(split=str(header["split"]), seed=int(header["generator_seed"]),
                       fields=fields, specs=specs, norm=norm, grid=grid,
                       scheme=str(grid_h.get("scheme", "auto")))


def _solve_one(args) -> np.ndarray:
    """Worker: solve one stimulus spec and return the coarse f32 channels."""
    p, grid, spec, out_res, scheme = args
    sol = fhn.solve(p, grid, spec, scheme=scheme)
    stim = fhn.stimulus_field(spec, grid)
    out = np.stack([resample(stim, out_res),
                    resample(sol.v, out_res),
                    resample(sol.w, out_res)])
    return out.astype("<f4")


def generate(split: SplitSpec, seed: int,
             p: fhn.TissueParams | None = None,
             grid: fhn.Grid1D | None = None,
             out_resolution: tuple[int, int] = (64, 64),
             scheme: str = "auto",
             workers: int = 1,
             norm: NormStats | None = None) -> Dataset:
    """Generate one split: sample specs, solve, resample, collect stats.

    ``norm=None`` computes min-max stats from this split's own data (the
    right thing for the training split); pass the training stats when
    generating test-protocol splits.  ``workers`` > 1 distributes solves over
    processes; output bytes are identical for any worker count.
    """
    p = p or fhn.TissueParams()
    grid = grid or fhn.Grid1D()
    specs = [sample_spec(split, seed, i) for i in range(split.n_samples)]
    jobs = [(p, grid, s, out_resolution, scheme) for s in specs]
    workers = max_workers(workers)
    if workers == 1:
        blocks = [_solve_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_solve_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    fields = np.stack(blocks)
    if norm is None:
        norm = compute_norm_stats(fields)
    return Dataset(split=split.name, seed=seed, fields=fields, specs=specs,
                   norm=norm, grid=grid, scheme=scheme)


def split_pool(pool: Dataset) -> tuple[Dataset, Dataset]:
    """Split a test-protocol pool into (validation, test) halves by index
    parity: even indices -> validation, odd -> test."""
    even = np.arange(0, pool.n_samples, 2)
    odd = np.arange(1, pool.n_samples, 2)
    val = replace(pool, split=pool.split + "-validation",
                  fields=pool.fields[even], specs=[pool.specs[i] for i in even])
    test = replace(pool, split=pool.split + "-test",
                   fields=pool.fields[odd], specs=[pool.specs[i] for i in odd])
    return val, test
