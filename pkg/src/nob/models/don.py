"""Branch/trunk operator networks with a two-channel output split.

A branch network encodes the flattened stimulus field into ``p``
coefficients; a trunk provides ``p`` basis functions evaluated at the
output coordinates.  The first p/2 coefficient/basis pairs form the
membrane-potential prediction, the second half the recovery variable:

    V(x,t) = sum_{j <  p/2} b_j T_j(x,t)
    w(x,t) = sum_{j >= p/2} b_j T_j(x,t)

Variants: ``vanilla`` (fully connected branch), ``cnn_encoder`` (strided
convolution stack before the branch head), and ``pod`` (the trunk is a
fixed orthonormal basis of proper-orthogonal-decomposition modes fitted
to training snapshots; the stored mean field is added back).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy.linalg import svd as _svd

from ..autodiff import (activation, add, concat, constant, conv2d, matmul,
                        reshape, transpose)
from .common import Model, kaiming_uniform, make_rng

__all__ = ["DonConfig", "Don", "PodBasis", "pod_fit", "split_combine",
           "grid_coords", "don_found", "don_cnn_found", "pod_don_found"]

VARIANTS = ("vanilla", "cnn_encoder", "pod")


@dataclass(frozen=True)
class DonConfig:
    variant: str = "vanilla"
    p: int = 762
    branch_layers: int = 6
    branch_width: int = 124
    branch_activation: str = "relu"
    trunk_layers: int = 4
    trunk_width: int = 148
    trunk_activation: str = "relu"
    n_conv: int = 3
    conv_channel_start: int = 40
    conv_channel_step: int = 30
    pod_centered: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.p % 2:
            warnings.warn(f"basis count p={self.p} is odd; the output split "
                          f"needs an even count, using {self.p + 1}")
            object.__setattr__(self, "p", self.p + 1)
        for field in ("branch_layers", "branch_width", "trunk_layers",
                      "trunk_width", "n_conv", "conv_channel_start"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        activation(self.branch_activation)
        activation(self.trunk_activation)

    def conv_channels(self) -> list[int]:
        return [self.conv_channel_start + i * self.conv_channel_step
                for i in range(self.n_conv)]

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "DonConfig":
        return DonConfig(**obj)


def don_found() -> DonConfig:
    """Best configuration found for the fully connected variant."""
    return DonConfig()


def don_cnn_found() -> DonConfig:
    """Best configuration found for the convolutional-encoder variant."""
    return DonConfig(variant="cnn_encoder", p=332, branch_layers=3,
                     branch_width=16, branch_activation="relu",
                     trunk_layers=4, trunk_width=16,
                     trunk_activation="leaky_relu",
                     n_conv=3, conv_channel_start=40, conv_channel_step=30)


def pod_don_found() -> DonConfig:
    """Best configuration found for the fixed-basis variant."""
    return DonConfig(variant="pod", p=500, branch_layers=6, branch_width=92,
                     branch_activation="gelu")


def grid_coords(height: int, width: int) -> np.ndarray:
    """Normalized (x, t) coordinates of a field grid, flattened row-major.

    Space and time both map to [0, 1]; index s = ix * width + it matches
    the layout of flattened [height, width] fields.
    """
    xs = np.linspace(0.0, 1.0, height)
    ts = np.linspace(0.0, 1.0, width)
    gx, gt = np.meshgrid(xs, ts, indexing="ij")
    return np.column_stack([gx.ravel(), gt.ravel()])


def split_combine(coeffs, basis):
    """Contract coefficients [B, p] with basis [S, p] into two channels.

    The first p/2 pairs give channel 0, the rest channel 1; returns
    ([B, S], [B, S]).
    """
    p = coeffs.shape[-1]
    if p % 2 or basis.shape[-1] != p:
        raise ValueError(f"need matching even basis counts, got "
                         f"{p} and {basis.shape[-1]}")
    half = p // 2
    bt = transpose(basis, (1, 0))
    v = matmul(coeffs[:, :half], bt[:half])
    w = matmul(coeffs[:, half:], bt[half:])
    return v, w


class PodBasis:
    """Orthonormal spatial modes and mean field for two output channels.

    ``mean``: [2, H, W]; ``modes``: list of two [H*W, r] column-orthonormal
    arrays; ``singular_values``: list of two non-increasing arrays.
    """

    def __init__(self, mean, modes, singular_values, field_shape):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.modes = [np.asarray(m, dtype=np.float64) for m in modes]
        self.singular_values = [np.asarray(s, dtype=np.float64)
                                for s in singular_values]
        self.field_shape = tuple(field_shape)

    @property
    def n_modes(self) -> int:
        return sum(m.shape[1] for m in self.modes)

    def energy_fraction(self, channel: int, r: int) -> float:
        s2 = self.singular_values[channel] ** 2
        total = float(s2.sum())
        return float(s2[:r].sum()) / total if total > 0 else 1.0

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"pod_mean": self.mean,
                "pod_modes_v": self.modes[0], "pod_modes_w": self.modes[1],
                "pod_sv_v": self.singular_values[0],
                "pod_sv_w": self.singular_values[1]}

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray],
                    field_shape=(64, 64)) -> "PodBasis":
        return PodBasis(arrays["pod_mean"],
                        [arrays["pod_modes_v"], arrays["pod_modes_w"]],
                        [arrays["pod_sv_v"], arrays["pod_sv_w"]], field_shape)


def pod_fit(outputs: np.ndarray, p: int, centered: bool = True) -> PodBasis:
    """Fit p/2 orthonormal spatial modes per channel from output snapshots.

    ``outputs``: [n, 2, H, W].  Uses the Golub-Kahan bidiagonalization SVD
    (LAPACK gesvd) on the spatially flattened, optionally mean-centered
    snapshot matrix of each channel; mode signs are fixed so each mode's
    largest-magnitude entry is positive.  Requests beyond the snapshot
    rank are truncated with a warning.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.ndim != 4 or outputs.shape[1] != 2:
        raise ValueError("expected snapshots of shape [n, 2, H, W]")
    if p % 2:
        raise ValueError("p must be even")
    n, _, h, w = outputs.shape
    want = p // 2
    mean = outputs.mean(axis=0) if centered else np.zeros((2, h, w))
    modes, svals = [], []
    for ch in range(2):
        snaps = (outputs[:, ch] - mean[ch]).reshape(n, h * w)
        u, s, vt = _svd(snaps.T, full_matrices=False, lapack_driver="gesvd")
        r = min(want, len(s))
        if r < want:
            warnings.warn(f"channel {ch}: requested {want} modes but only "
                          f"{len(s)} snapshots are available; keeping {r}")
        u = u[:, :r]
        flip = np.sign(u[np.abs(u).argmax(axis=0), np.arange(r)])
        flip[flip == 0] = 1.0
        modes.append(u * flip)
        svals.append(s[:r])
    return PodBasis(mean, modes, svals, (h, w))


class Don(Model):
    """Coefficient/basis operator network; maps [B, 1, H, W] -> [B, 2, H, W]."""

    def __init__(self, config: DonConfig, seed: int = 0,
                 basis: PodBasis | None = None, field_shape=(64, 64)):
        super().__init__()
        self.config = config
        self.field_shape = tuple(field_shape)
        h, w = self.field_shape
        c = config
        rng = make_rng(seed)
        self.basis = None
        p = c.p
        if c.variant == "pod":
            if basis is None:
                raise ValueError("pod variant needs a fitted PodBasis")
            if basis.field_shape != self.field_shape:
                raise ValueError(f"basis grid {basis.field_shape} does not "
                                 f"match field grid {self.field_shape}")
            self.basis = basis
            if basis.n_modes != p:
                warnings.warn(f"basis retains {basis.n_modes} modes; "
                              f"overriding p={p}")
                p = basis.n_modes
        self.p = p

        if c.variant == "cnn_encoder":
            hh, ww = h, w
            cin = 1
            for i, cout in enumerate(c.conv_channels()):
                if hh < 2 or ww < 2:
                    raise ValueError(f"conv stage {i} would collapse the "
                                     f"{hh}x{ww} field below 1x1")
                self.add_param(f"conv{i}_w",
                               kaiming_uniform(rng, (cout, cin, 3, 3),
                                               cin * 9))
                self.add_param(f"conv{i}_b", np.zeros(cout))
                hh, ww = (hh + 1) // 2, (ww + 1) // 2
                cin = cout
            branch_in = cin * hh * ww
        else:
            branch_in = h * w
        widths = ([branch_in] + [c.branch_width] * c.branch_layers + [p])
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.add_param(f"branch{i}_w", kaiming_uniform(rng, (a, b), a))
            self.add_param(f"branch{i}_b", np.zeros(b))
        if c.variant != "pod":
            widths = [2] + [c.trunk_width] * c.trunk_layers + [p]
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                self.add_param(f"trunk{i}_w", kaiming_uniform(rng, (a, b), a))
                self.add_param(f"trunk{i}_b", np.zeros(b))
        self._grid_cache: dict[tuple[int, int], np.ndarray] = {}

    def _mlp(self, x, prefix: str, n_layers: int, act_name: str):
        act = activation(act_name)
        for i in range(n_layers + 1):
            x = add(matmul(x, self.params[f"{prefix}{i}_w"]),
                    self.params[f"{prefix}{i}_b"])
            if i < n_layers:
                x = act(x)
        return x

    def branch(self, x):
        """Stimulus [B, 1, H, W] -> coefficients [B, p]."""
        x = constant(x)
        c = self.config
        b = x.shape[0]
        if c.variant == "cnn_encoder":
            act = activation(c.branch_activation)
            for i in range(c.n_conv):
                x = conv2d(x, self.params[f"conv{i}_w"],
                           self.params[f"conv{i}_b"])
                x = act(x[:, :, ::2, ::2])
        flat = reshape(x, (b, int(np.prod(x.shape[1:]))))
        return self._mlp(flat, "branch", c.branch_layers, c.branch_activation)

    def trunk(self, coords: np.ndarray):
        """Coordinates [S, 2] in [0,1]^2 -> basis values [S, p]."""
        if self.config.variant == "pod":
            raise ValueError("pod variant has no trunk network")
        return self._mlp(constant(np.asarray(coords, dtype=np.float64)),
                         "trunk", self.config.trunk_layers,
                         self.config.trunk_activation)

    def forward(self, x, coords: np.ndarray | None = None):
        """Evaluate on the full field grid, returning [B, 2, H, W].

        With explicit ``coords`` [S, 2] (network-trunk variants only) the
        result is [B, 2, S] instead.
        """
        x = constant(x)
        b = x.shape[0]
        h, w = self.field_shape
        if x.shape[2:] != (h, w):
            raise ValueError(f"expected {h}x{w} fields, got {x.shape[2:]}")
        coeffs = self.branch(x)
        on_grid = coords is None
        if self.config.variant == "pod":
            if not on_grid:
                raise ValueError("the fixed-basis variant evaluates on its "
                                 "own grid only")
            half = self.p // 2
            v = add(matmul(coeffs[:, :half], constant(self.basis.modes[0].T)),
                    constant(self.basis.mean[0].ravel()))
            wch = add(matmul(coeffs[:, half:],
                             constant(self.basis.modes[1].T)),
                      constant(self.basis.mean[1].ravel()))
        else:
            if on_grid:
                if (h, w) not in self._grid_cache:
                    self._grid_cache[(h, w)] = grid_coords(h, w)
                coords = self._grid_cache[(h, w)]
            basis = self.trunk(coords)
            v, wch = split_combine(coeffs, basis)
        v = reshape(v, (b, 1) + ((h, w) if on_grid else (v.shape[1],)))
        wch = reshape(wch, (b, 1) + ((h, w) if on_grid else (wch.shape[1],)))
        return concat([v, wch], axis=1)

    def checkpoint_extras(self) -> dict[str, np.ndarray]:
        """Non-trained arrays persisted alongside parameters (fixed basis)."""
        return {} if self.basis is None else self.basis.to_arrays()
