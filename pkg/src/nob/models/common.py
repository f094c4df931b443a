"""Shared model plumbing: parameter registry, initializers, checkpoints.

Models register named float64 parameters in insertion order; that order is
also the checkpoint manifest order and the initializer draw order, which
keeps runs bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import math

import numpy as np

from .. import container
from ..autodiff import Tensor, channel_mix

__all__ = [
    "Model", "make_rng", "kaiming_uniform", "uniform_symmetric",
    "pointwise", "save_checkpoint", "load_checkpoint",
]


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for parameter initialization."""
    return np.random.Generator(np.random.Philox(key=seed))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """U[-b, b] with b = sqrt(6 / fan_in) (rectifier-oriented init)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def uniform_symmetric(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


class Model:
    """Base class holding an ordered name -> Tensor parameter registry."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def add_param(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(array, dtype=np.float64),
                   requires_grad=True)
        self.params[name] = t
        return t

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, t in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {t.data.shape}")
            t.data = np.ascontiguousarray(arr)

    def forward(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


def pointwise(x, w: Tensor, b: Tensor | None = None):
    """Per-pixel linear map on channels-first fields.

    ``x``: [B, C_in, H, W] -> [B, C_out, H, W] using ``w``: [C_in, C_out].
    """
    return channel_mix(x, w, b)


def save_checkpoint(path, architecture: str, config: dict,
                    params: dict[str, np.ndarray],
                    extras: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write model state using the framed container (f64le payload).

    ``extras`` carries non-trained arrays (e.g. a fitted spatial basis);
    they are stored in the same manifest under their own names.
    """
    manifest = []
    chunks = []
    offset = 0
    entries = list(params.items()) + list((extras or {}).items())
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape),
                         "dtype": "f64le", "offset": offset})
        chunks.append(arr.tobytes())
        offset += len(chunks[-1])
    header = {
        "kind": "checkpoint",
        "format_version": 1,
        "architecture": architecture,
        "config": config,
        "n_params": len(params),
        "manifest": manifest,
        "meta": meta or {},
    }
    container.write_frame(path, header, b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint, returning (header, name -> array)."""
    header, payload = container.read_frame(path)
    if header.get("kind") != "checkpoint":
        raise container.HeaderMismatchError(
            f"{path}: not a checkpoint container (kind={header.get('kind')!r})")
    arrays = {}
    total = 0
    for ent in header["manifest"]:
        shape = tuple(int(s) for s in ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        total = max(total, int(ent["offset"]) + count * 8)
    container.expect_payload_size(path, payload, total)
    for ent in header["manifest"]:
        shape = tuple(int(s) for s in ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(ent["offset"])
        arrays[ent["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    return header, arrays
