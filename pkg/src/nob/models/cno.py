"""Bandlimit-respecting convolutional operator U-Net on 2D fields.

All resolution changes are ideal (periodic-sinc) resampling steps and the
pointwise nonlinearity is applied on a 2x-oversampled grid and filtered
back, so every sub-operation maps bandlimited fields to bandlimited
fields.  Assembly: pointwise lifting, ``n_layers`` encoder stages of
{conv, filtered activation, downsample} with channels doubling up to a 4x
cap, a residual bottleneck, and a mirrored decoder whose skip connections
pass through chains of residual blocks and are merged by invariant
(conv + filtered activation) blocks; a pointwise projection emits the two
output channels.

Resampling is implemented with per-axis constant transform matrices (the
circulant periodic-sinc kernel in matrix form): downsampling keeps modes
strictly below the new Nyquist frequency and zeroes the rest; upsampling
zero-embeds the spectrum (splitting the Nyquist bin) so values at original
sample locations are preserved exactly.  Non-periodic fields are handled
by even reflection to a doubled periodic domain and cropping afterwards
(``boundary="reflect"``, the default); ``boundary="periodic"`` exposes the
raw periodic operators, which are exactly equivariant to cyclic shifts.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..autodiff import (activation, channel_mix, concat, constant, conv2d,
                        matmul, reshape)
from .common import Model, kaiming_uniform, make_rng, pointwise

__all__ = ["CnoConfig", "Cno", "cno_found", "downsample2", "upsample2",
           "filtered_activation", "spectral_energy_above",
           "down_matrix", "up_matrix"]

BOUNDARIES = ("reflect", "periodic")


@dataclass(frozen=True)
class CnoConfig:
    n_layers: int = 4
    channels: int = 32
    n_res: int = 7
    n_res_neck: int = 2
    kernel_size: int = 3
    activation: str = "leaky_relu"
    oversample: int = 2
    boundary: str = "reflect"

    def __post_init__(self):
        if self.n_layers < 1 or self.channels < 1:
            raise ValueError("n_layers and channels must be positive")
        if self.n_res < 0 or self.n_res_neck < 0:
            raise ValueError("residual counts must be non-negative")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd")
        if self.oversample < 1:
            raise ValueError("oversample must be at least 1")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        activation(self.activation)

    def width(self, level: int) -> int:
        """Channel count at level ``level`` (0 = finest): doubling, 4x cap."""
        return self.channels * 2 ** min(level, 2)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "CnoConfig":
        return CnoConfig(**obj)


def cno_found() -> CnoConfig:
    """Best configuration found."""
    return CnoConfig()


# -- periodic-sinc resampling matrices ---------------------------------------

_MAT_CACHE: dict[tuple[str, int], np.ndarray] = {}


def down_matrix(n: int) -> np.ndarray:
    """[n, n//2] matrix of periodic-sinc downsampling by 2 along an axis.

    Keeps modes strictly below the new Nyquist frequency and zeroes the
    rest; columns are shifted copies of the (periodic-sinc) kernel.
    """
    if n % 2:
        raise ValueError(f"cannot halve odd size {n}")
    key = ("down", n)
    if key not in _MAT_CACHE:
        m = n // 2
        spec = np.fft.rfft(np.eye(n), axis=1)[:, :m // 2 + 1] * (m / n)
        if m % 2 == 0:
            spec[:, m // 2] = 0.0
        _MAT_CACHE[key] = np.ascontiguousarray(np.fft.irfft(spec, n=m, axis=1))
    return _MAT_CACHE[key]


def up_matrix(n: int) -> np.ndarray:
    """[n, 2n] matrix of spectral zero-embedding upsampling by 2.

    The Nyquist bin (even n) is split so the map is the function-space
    identity: values at the original sample locations are unchanged.
    """
    key = ("up", n)
    if key not in _MAT_CACHE:
        spec = np.fft.rfft(np.eye(n), axis=1) * 2.0
        if n % 2 == 0:
            spec[:, n // 2] *= 0.5
        pad = np.zeros((n, n + 1 - spec.shape[1]), dtype=complex)
        _MAT_CACHE[key] = np.ascontiguousarray(
            np.fft.irfft(np.concatenate([spec, pad], axis=1), n=2 * n, axis=1))
    return _MAT_CACHE[key]


def _apply_separable(v, mat_h: np.ndarray, mat_w: np.ndarray):
    """Apply per-axis matrices to the two trailing axes of [B, C, H, W]."""
    b, c, h, w = v.shape
    x = reshape(v, (b * c, h, w))
    x = channel_mix(x, constant(mat_h))
    x = matmul(x, constant(mat_w))
    return reshape(x, (b, c) + x.shape[1:])


def _reflect_mat(kind: str, n: int) -> np.ndarray:
    """Composite matrix: evenly extend to 2n, resample periodically, crop.

    Folding the extension and the crop into the resampling matrix keeps
    every intermediate at the physical field size instead of the doubled
    extended domain; the result is the same linear map.
    """
    key = (kind + "_reflect", n)
    if key not in _MAT_CACHE:
        base = down_matrix(2 * n) if kind == "down" else up_matrix(2 * n)
        m = n // 2 if kind == "down" else 2 * n
        ext = np.concatenate([np.eye(n), np.eye(n)[::-1]], axis=0)
        _MAT_CACHE[key] = np.ascontiguousarray(ext.T @ base[:, :m])
    return _MAT_CACHE[key]


def _axis_mats(kind: str, h: int, w: int, boundary: str):
    if boundary == "periodic":
        fn = down_matrix if kind == "down" else up_matrix
        return fn(h), fn(w)
    return _reflect_mat(kind, h), _reflect_mat(kind, w)


def downsample2(v, boundary: str = "periodic"):
    """Halve both trailing axes of [B, C, H, W] by periodic-sinc filtering."""
    b, c, h, w = v.shape
    return _apply_separable(v, *_axis_mats("down", h, w, boundary))


def upsample2(v, boundary: str = "periodic"):
    """Double both trailing axes of [B, C, H, W] by spectral zero-embedding."""
    b, c, h, w = v.shape
    return _apply_separable(v, *_axis_mats("up", h, w, boundary))


def filtered_activation(v, act, oversample: int = 2,
                        boundary: str = "periodic"):
    """Anti-aliased pointwise nonlinearity: upsample, apply, filter back."""
    if oversample == 1:
        return act(v)
    if oversample != 2:
        raise ValueError("only oversampling factors 1 and 2 are supported")
    return downsample2(act(upsample2(v, boundary)), boundary)


def spectral_energy_above(field: np.ndarray, cutoff: int) -> float:
    """Fraction of spectral energy in modes with max(|kx|, |kt|) >= cutoff.

    ``field``: [..., H, W] real; energies are summed over leading axes.
    """
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape[-2], field.shape[-1]
    spec = np.fft.fft2(field)
    kx = np.minimum(np.arange(h), h - np.arange(h))
    kt = np.minimum(np.arange(w), w - np.arange(w))
    mask = np.maximum(kx[:, None], kt[None, :]) >= cutoff
    e = np.abs(spec) ** 2
    total = float(e.sum())
    return float(e[..., mask].sum()) / total if total > 0 else 0.0


class Cno(Model):
    """U-Net of bandlimited operator blocks: [B, 1, H, W] -> [B, 2, H, W]."""

    def __init__(self, config: CnoConfig, seed: int = 0):
        super().__init__()
        self.config = config
        c = config
        rng = make_rng(seed)
        k = c.kernel_size

        def conv_param(name, cin, cout):
            self.add_param(f"{name}_w",
                           kaiming_uniform(rng, (cout, cin, k, k), cin * k * k))
            self.add_param(f"{name}_b", np.zeros(cout))

        self.add_param("lift_w", kaiming_uniform(rng, (1, c.width(0)), 1))
        self.add_param("lift_b", np.zeros(c.width(0)))
        for ell in range(c.n_layers):
            conv_param(f"enc{ell}", c.width(ell), c.width(ell + 1))
        neck = c.width(c.n_layers)
        conv_param("neck_in", neck, neck)
        for r in range(c.n_res_neck):
            conv_param(f"neck_res{r}a", neck, neck)
            conv_param(f"neck_res{r}b", neck, neck)
        conv_param("neck_out", neck, neck)
        for ell in range(c.n_layers):
            ch = c.width(ell + 1)
            for r in range(c.n_res):
                conv_param(f"skip{ell}_res{r}a", ch, ch)
                conv_param(f"skip{ell}_res{r}b", ch, ch)
            conv_param(f"dec{ell}_merge", 2 * ch, c.width(ell))
            conv_param(f"dec{ell}_post", c.width(ell), c.width(ell))
        self.add_param("proj_w", kaiming_uniform(rng, (c.width(0), 2),
                                                 c.width(0)))
        self.add_param("proj_b", np.zeros(2))

    # -- blocks --------------------------------------------------------------

    def _conv(self, v, name: str):
        pad = "periodic" if self.config.boundary == "periodic" else "reflect"
        return conv2d(v, self.params[f"{name}_w"], self.params[f"{name}_b"],
                      padding=pad)

    def _act(self, v):
        c = self.config
        return filtered_activation(v, activation(c.activation), c.oversample,
                                   c.boundary)

    def invariant_block(self, v, name: str):
        """Filtered activation after convolution."""
        return self._act(self._conv(v, name))

    def residual_block(self, v, name: str):
        """v + conv(filtered activation(conv(v))); identity at zero weights."""
        return v + self._conv(self._act(self._conv(v, f"{name}a")), f"{name}b")

    # -- forward -------------------------------------------------------------

    def forward(self, x):
        x = constant(x)
        c = self.config
        h, w = x.shape[2], x.shape[3]
        div = 2 ** c.n_layers
        if h % div or w % div:
            raise ValueError(f"{h}x{w} fields are not divisible by "
                             f"2^{c.n_layers}")
        v = pointwise(x, self.params["lift_w"], self.params["lift_b"])
        skips = []
        for ell in range(c.n_layers):
            v = self.invariant_block(v, f"enc{ell}")
            skips.append(v)
            v = downsample2(v, c.boundary)
        v = self.invariant_block(v, "neck_in")
        for r in range(c.n_res_neck):
            v = self.residual_block(v, f"neck_res{r}")
        v = self.invariant_block(v, "neck_out")
        for ell in reversed(range(c.n_layers)):
            v = upsample2(v, c.boundary)
            s = skips[ell]
            for r in range(c.n_res):
                s = self.residual_block(s, f"skip{ell}_res{r}")
            v = self.invariant_block(concat([v, s], axis=1), f"dec{ell}_merge")
            v = self.invariant_block(v, f"dec{ell}_post")
        return pointwise(v, self.params["proj_w"], self.params["proj_b"])
