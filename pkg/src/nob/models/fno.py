"""Fourier-space operator models on 2D (space, time) fields.

The forward map lifts the input field pointwise, applies ``n_layers`` blocks
of the form  sigma(W v + b + K v)  (or, in the "mlp" variant,
sigma(W v + b + MLP(K v))), and projects back pointwise.  K is a spectral
convolution: real-input FFT, per-mode complex channel mixing on the retained
low modes, zeros elsewhere, inverse FFT.

Retained modes follow the two-corner-block convention: axis-0 frequency rows
``0..k_max-1`` and ``-k_max..-1`` (both sign blocks), axis-1 (half-spectrum)
columns ``0..k_max-1``; the packed complex weights therefore have shape
[2*k_max, k_max, d_v, d_v, 2] per layer.  The self-redundant spectrum
columns are conjugate-symmetrized inside the inverse transform, which keeps
the map linear, real-valued, and shift-equivariant.

``weight_variant="tucker"`` stores each layer's spectral weight as a complex
Tucker core plus four factor matrices at a configurable rank ratio and
materializes the dense weight on the fly; everything else is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..autodiff import (Tensor, ComplexTensor, activation, concat, constant,
                        irfft2, matmul, mode_mix, pad2d, reshape, rfft2,
                        transpose)
from .common import Model, kaiming_uniform, make_rng, pointwise, uniform_symmetric

__all__ = ["FnoConfig", "Fno", "fno_found", "tfno_found", "spectral_conv",
           "spectral_conv_fft"]


@dataclass(frozen=True)
class FnoConfig:
    d_v: int = 128
    n_layers: int = 4
    k_max: int = 24
    activation: str = "relu"
    n_pad: int = 1
    layer_variant: str = "classic"     # "classic" | "mlp"
    weight_variant: str = "dense"      # "dense" | "tucker"
    rank_ratio: float = 0.2
    coord_channels: bool = True

    def __post_init__(self):
        if self.d_v < 1 or self.n_layers < 1 or self.k_max < 1:
            raise ValueError("d_v, n_layers, k_max must be positive")
        if self.n_pad < 0:
            raise ValueError("n_pad must be non-negative")
        if self.layer_variant not in ("classic", "mlp"):
            raise ValueError(f"unknown layer_variant {self.layer_variant!r}")
        if self.weight_variant not in ("dense", "tucker"):
            raise ValueError(f"unknown weight_variant {self.weight_variant!r}")
        if not (0.0 < self.rank_ratio <= 1.0):
            raise ValueError("rank_ratio must be in (0, 1]")
        activation(self.activation)  # validates the name

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "FnoConfig":
        return FnoConfig(**obj)


def fno_found() -> FnoConfig:
    """Best configuration found for the dense variant."""
    return FnoConfig()


def tfno_found() -> FnoConfig:
    """Best configuration found for the Tucker-factorized variant.

    The published domain-padding fraction 0.2 maps to
    round(0.2 * 64) = 13 pad points per side.
    """
    return FnoConfig(d_v=192, n_layers=1, k_max=8, activation="leaky_relu",
                     n_pad=13, weight_variant="tucker", rank_ratio=0.2)


def _tucker_ranks(dims: tuple[int, ...], ratio: float) -> tuple[int, ...]:
    return tuple(max(1, round(ratio * d)) for d in dims)


def _cmatmul(ar, ai, br, bi):
    """Complex matrix product from real parts: (ar+i*ai) @ (br+i*bi)."""
    return (matmul(ar, br) - matmul(ai, bi),
            matmul(ar, bi) + matmul(ai, br))


def _mode_product(core_r, core_i, dims, axis, fr, fi, new_dim):
    """Tucker mode product along ``axis``: contract factor [new_dim, r_axis].

    ``core`` has shape ``dims``; returns the updated (re, im) pair and dims.
    """
    order = (axis,) + tuple(i for i in range(len(dims)) if i != axis)
    inv = tuple(np.argsort(order))
    rest = int(np.prod([dims[i] for i in order[1:]])) if len(dims) > 1 else 1
    cr = reshape(transpose(core_r, order), (dims[axis], rest))
    ci = reshape(transpose(core_i, order), (dims[axis], rest))
    outr, outi = _cmatmul(fr, fi, cr, ci)
    new_dims = tuple(new_dim if i == axis else dims[i] for i in range(len(dims)))
    shape_perm = (new_dim,) + tuple(dims[i] for i in order[1:])
    outr = transpose(reshape(outr, shape_perm), inv)
    outi = transpose(reshape(outi, shape_perm), inv)
    return outr, outi, new_dims


def materialize_tucker(core: Tensor, factors: list[Tensor],
                       dims: tuple[int, ...]) -> Tensor:
    """Expand a packed complex Tucker decomposition to the dense packed form.

    ``core``: [r0, r1, r2, r3, 2]; ``factors[k]``: [dims[k], r_k, 2].
    Returns packed [dims..., 2].
    """
    cr, ci = core[..., 0], core[..., 1]
    cur_dims = tuple(core.shape[:-1])
    for axis, (f, d) in enumerate(zip(factors, dims)):
        cr, ci = cr, ci
        fr, fi = f[..., 0], f[..., 1]
        cr, ci, cur_dims = _mode_product(cr, ci, cur_dims, axis, fr, fi, d)
    pr = reshape(cr, cur_dims + (1,))
    pi = reshape(ci, cur_dims + (1,))
    return concat([pr, pi], axis=-1)


def spectral_conv_fft(v, weights, k_max: int, height: int, width: int):
    """Spectral convolution: FFT -> mix retained modes -> zero rest -> IFFT.

    ``v``: [B, C_in, H, W]; ``weights``: packed [2*k_max, k_max, C_out, C_in, 2].
    Reference implementation; ``spectral_conv`` computes the identical linear
    map with dense partial-transform matrices, which is much faster when
    k_max is small relative to the grid.
    """
    if k_max > height // 2 or k_max > width // 2:
        raise ValueError(f"k_max={k_max} exceeds half the grid "
                         f"({height}x{width})")
    ct = rfft2(v)
    pk = ct.packed
    b, cin = pk.shape[0], pk.shape[1]
    wh = width // 2 + 1
    top = pk[:, :, :k_max, :k_max, :]
    bot = pk[:, :, height - k_max:, :k_max, :]
    block = concat([top, bot], axis=2)              # [B, C_in, 2k, k, 2]
    mixed = mode_mix(weights, block)                # [B, C_out, 2k, k, 2]
    cout = mixed.shape[1]
    mid = constant(np.zeros((b, cout, height - 2 * k_max, k_max, 2)))
    rows = concat([mixed[:, :, :k_max], mid, mixed[:, :, k_max:]], axis=2)
    cols = constant(np.zeros((b, cout, height, wh - k_max, 2)))
    spec = concat([rows, cols], axis=3)
    return irfft2(ComplexTensor(spec, full_width=width, hermitian=True),
                  s=(height, width))


_TWIDDLE_CACHE: dict[tuple[int, int, int], tuple] = {}


def _twiddles(height: int, width: int, k: int):
    """Constant partial-DFT matrices for the retained 2k x k mode block.

    Returns (FW, FH, TW, TH, half_mask, keep_mask) where the forward block
    transform is  Z = FH^T (v FW)  with FW [W, k], FH [H, 2k], and the
    inverse is  u = Re(TH^T (Z TW)^T)^T  with TW [k, W] carrying the
    half-spectrum column weights (1 for column 0, else 2) and 1/W, and
    TH [2k, H] carrying 1/H.  The masks implement conjugate symmetrization
    of spectrum column 0 restricted to the retained rows, which is what
    makes the map identical to the zero-embedded full-spectrum inverse.
    """
    key = (height, width, k)
    if key not in _TWIDDLE_CACHE:
        rows = np.concatenate([np.arange(k), np.arange(height - k, height)])
        h_idx = np.arange(height)
        w_idx = np.arange(width)
        y_idx = np.arange(k)
        fw = np.exp(-2j * np.pi * np.outer(w_idx, y_idx) / width)
        fh = np.exp(-2j * np.pi * np.outer(h_idx, rows) / height)
        gamma = np.where(y_idx == 0, 1.0, 2.0)
        tw = gamma[:, None] * np.exp(2j * np.pi * np.outer(y_idx, w_idx)
                                     / width) / width
        th = np.exp(2j * np.pi * np.outer(rows, h_idx) / height) / height
        # Column-0 closure: row x pairs with row 2k-x (same block, reversed
        # order).  Frequency H-k has no retained partner unless H == 2k, in
        # which case it is the self-paired Nyquist row.
        half = np.full(2 * k, 0.5)
        keep = np.zeros(2 * k)
        if height != 2 * k:
            half[k] = 0.0
            keep[k] = 1.0
        shape = (1, 1, 2 * k, 1)
        _TWIDDLE_CACHE[key] = tuple(
            np.ascontiguousarray(m) for m in
            (fw.real, fw.imag, fh.real, fh.imag, tw.real, tw.imag,
             th.real, th.imag)) + (half.reshape(shape), keep.reshape(shape))
    return _TWIDDLE_CACHE[key]


def _reverse_rows(t):
    """Map row x -> row (2k - x) mod 2k along axis 2 of [B, C, 2k, 1]."""
    return concat([t[:, :, 0:1], t[:, :, 1:][:, :, ::-1]], axis=2)


def spectral_conv(v, weights, k_max: int, height: int, width: int):
    """Spectral convolution via dense partial transforms (see module doc).

    Computes the same linear map as ``spectral_conv_fft`` with plain matrix
    products against fixed twiddle matrices: only the retained 2k x k
    corner block of the spectrum is ever formed.  Contractions are ordered
    so the expensive full-grid products are single contiguous 2D matmuls
    and every transpose touches only block-sized arrays.
    """
    if k_max > height // 2 or k_max > width // 2:
        raise ValueError(f"k_max={k_max} exceeds half the grid "
                         f"({height}x{width})")
    (fwr, fwi, fhr, fhi, twr, twi, thr, thi,
     half, keep) = _twiddles(height, width, k_max)
    fwr, fwi, twr, twi = map(constant, (fwr, fwi, twr, twi))
    fhr, fhi, thr, thi = map(constant, (fhr, fhi, thr, thi))
    half, keep = constant(half), constant(keep)
    b, c = v.shape[0], v.shape[1]
    k, m2 = k_max, 2 * k_max
    # forward block transform: contract W (grid -> k) then H (grid -> 2k)
    v2 = reshape(v, (b * c * height, width))
    pr = transpose(reshape(matmul(v2, fwr), (b, c, height, k)), (0, 1, 3, 2))
    pi = transpose(reshape(matmul(v2, fwi), (b, c, height, k)), (0, 1, 3, 2))
    pr, pi = reshape(pr, (b * c * k, height)), reshape(pi, (b * c * k, height))
    zr = matmul(pr, fhr) - matmul(pi, fhi)          # [B*C*k, 2k]
    zi = matmul(pr, fhi) + matmul(pi, fhr)
    zr = transpose(reshape(zr, (b, c, k, m2)), (0, 1, 3, 2))
    zi = transpose(reshape(zi, (b, c, k, m2)), (0, 1, 3, 2))
    block = concat([reshape(zr, zr.shape + (1,)),
                    reshape(zi, zi.shape + (1,))], axis=-1)
    mixed = mode_mix(weights, block)                # [B, C_out, 2k, k, 2]
    cout = mixed.shape[1]
    mr, mi = mixed[..., 0], mixed[..., 1]
    # conjugate-symmetrize spectrum column 0 over the retained rows
    c0r, c0i = mr[:, :, :, 0:1], mi[:, :, :, 0:1]
    symr = (c0r + _reverse_rows(c0r)) * half + c0r * keep
    symi = (c0i - _reverse_rows(c0i)) * half + c0i * keep
    if k_max > 1:
        mr = concat([symr, mr[:, :, :, 1:]], axis=3)
        mi = concat([symi, mi[:, :, :, 1:]], axis=3)
    else:
        mr, mi = symr, symi
    # inverse transform: contract 2k -> grid rows, then k -> grid cols with
    # the real part taken on the final product
    mr = reshape(transpose(mr, (0, 1, 3, 2)), (b * cout * k, m2))
    mi = reshape(transpose(mi, (0, 1, 3, 2)), (b * cout * k, m2))
    qr = matmul(mr, thr) - matmul(mi, thi)          # [B*C_out*k, H]
    qi = matmul(mr, thi) + matmul(mi, thr)
    qr = transpose(reshape(qr, (b, cout, k, height)), (0, 1, 3, 2))
    qi = transpose(reshape(qi, (b, cout, k, height)), (0, 1, 3, 2))
    qr = reshape(qr, (b * cout * height, k))
    qi = reshape(qi, (b * cout * height, k))
    u = matmul(qr, twr) - matmul(qi, twi)           # [B*C_out*H, W]
    return reshape(u, (b, cout, height, width))


class Fno(Model):
    """Fourier-layer operator: normalized stimulus field -> (v, w) fields."""

    def __init__(self, config: FnoConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = make_rng(seed)
        c = config
        cin = 1 + (2 if c.coord_channels else 0)
        self.add_param("lift_w", kaiming_uniform(rng, (cin, c.d_v), cin))
        self.add_param("lift_b", np.zeros(c.d_v))
        scale = 1.0 / (c.d_v * c.d_v)
        kdims = (2 * c.k_max, c.k_max, c.d_v, c.d_v)
        for ell in range(c.n_layers):
            if c.weight_variant == "dense":
                self.add_param(f"spec{ell}",
                               uniform_symmetric(rng, kdims + (2,), scale))
            else:
                ranks = _tucker_ranks(kdims, c.rank_ratio)
                t = scale ** (1.0 / (len(kdims) + 1))
                self.add_param(f"spec{ell}_core",
                               uniform_symmetric(rng, ranks + (2,), t))
                for ax, (d, r) in enumerate(zip(kdims, ranks)):
                    self.add_param(f"spec{ell}_f{ax}",
                                   uniform_symmetric(rng, (d, r, 2), t))
            self.add_param(f"w{ell}", kaiming_uniform(rng, (c.d_v, c.d_v), c.d_v))
            self.add_param(f"b{ell}", np.zeros(c.d_v))
            if c.layer_variant == "mlp":
                self.add_param(f"mlp{ell}_w1",
                               kaiming_uniform(rng, (c.d_v, c.d_v), c.d_v))
                self.add_param(f"mlp{ell}_b1", np.zeros(c.d_v))
                self.add_param(f"mlp{ell}_w2",
                               kaiming_uniform(rng, (c.d_v, c.d_v), c.d_v))
                self.add_param(f"mlp{ell}_b2", np.zeros(c.d_v))
        self.add_param("proj_w1", kaiming_uniform(rng, (c.d_v, c.d_v), c.d_v))
        self.add_param("proj_b1", np.zeros(c.d_v))
        self.add_param("proj_w2", kaiming_uniform(rng, (c.d_v, 2), c.d_v))
        self.add_param("proj_b2", np.zeros(2))
        self._coord_cache: dict[tuple[int, int], np.ndarray] = {}

    def _coords(self, h: int, w: int) -> np.ndarray:
        if (h, w) not in self._coord_cache:
            xs = np.linspace(0.0, 1.0, h)
            ts = np.linspace(0.0, 1.0, w)
            self._coord_cache[(h, w)] = np.stack(
                np.meshgrid(xs, ts, indexing="ij"))  # [2, H, W]
        return self._coord_cache[(h, w)]

    def _layer_weights(self, ell: int) -> Tensor:
        c = self.config
        if c.weight_variant == "dense":
            return self.params[f"spec{ell}"]
        kdims = (2 * c.k_max, c.k_max, c.d_v, c.d_v)
        return materialize_tucker(self.params[f"spec{ell}_core"],
                                  [self.params[f"spec{ell}_f{ax}"]
                                   for ax in range(4)], kdims)

    def forward(self, x):
        """``x``: [B, 1, H, W] normalized stimulus -> [B, 2, H, W]."""
        x = constant(x)
        c = self.config
        b, _, h, w = x.shape
        if c.k_max > min(h, w) // 2:
            raise ValueError(f"k_max={c.k_max} exceeds half the {h}x{w} grid")
        act = activation(c.activation)
        if c.coord_channels:
            mesh = np.broadcast_to(self._coords(h, w), (b, 2, h, w))
            x = concat([x, constant(mesh.copy())], axis=1)
        v = pointwise(x, self.params["lift_w"], self.params["lift_b"])
        if c.n_pad:
            v = pad2d(v, (c.n_pad, c.n_pad, c.n_pad, c.n_pad))
        hp, wp = h + 2 * c.n_pad, w + 2 * c.n_pad
        for ell in range(c.n_layers):
            k = spectral_conv(v, self._layer_weights(ell), c.k_max, hp, wp)
            wv = pointwise(v, self.params[f"w{ell}"], self.params[f"b{ell}"])
            if c.layer_variant == "mlp":
                k = pointwise(act(pointwise(k, self.params[f"mlp{ell}_w1"],
                                            self.params[f"mlp{ell}_b1"])),
                              self.params[f"mlp{ell}_w2"],
                              self.params[f"mlp{ell}_b2"])
            v = act(wv + k)
        if c.n_pad:
            v = v[:, :, c.n_pad:c.n_pad + h, c.n_pad:c.n_pad + w]
        v = act(pointwise(v, self.params["proj_w1"], self.params["proj_b1"]))
        return pointwise(v, self.params["proj_w2"], self.params["proj_b2"])


def dense_equivalent_count(config: FnoConfig) -> int:
    """Parameter count the dense variant would use (reals)."""
    c = config
    kdims = 2 * c.k_max * c.k_max * c.d_v * c.d_v * 2
    cin = 1 + (2 if c.coord_channels else 0)
    n = cin * c.d_v + c.d_v
    n += c.n_layers * (kdims + c.d_v * c.d_v + c.d_v)
    if c.layer_variant == "mlp":
        n += c.n_layers * 2 * (c.d_v * c.d_v + c.d_v)
    n += c.d_v * c.d_v + c.d_v + c.d_v * 2 + 2
    return n
