"""Compact reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array plus (when gradients are enabled) the
parents and vector-Jacobian product that produced it.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates ``.grad`` on the leaf tensors marked
``requires_grad=True``.

Primitives cover exactly what the operator architectures in this package
need: elementwise arithmetic with numpy broadcasting, matmul (2D right-hand
side), same-size conv1d/conv2d with zero or reflect padding, shape ops
(transpose / reshape / basic slicing with steps / concat / zero-pad),
reductions (sum / mean), sqrt / square, the activation menu (relu with
relu'(0)=0, leaky_relu, gelu in its exact erf form, silu, tanh, sigmoid),
real-input 2D FFTs with hand-derived adjoints, and a per-mode complex
channel-mixing contraction (:func:`mode_mix`).

Complex spectra are carried as packed real pairs: an array of shape
``[..., H, W//2 + 1, 2]`` whose last axis holds (real, imag) for the
non-redundant half spectrum.  :class:`ComplexTensor` wraps such a packed
tensor together with the full last-axis width and a Hermitian flag;
:func:`irfft2` refuses inputs that do not carry the flag.  Inside
:func:`irfft2` the self-redundant columns (kt = 0 and, for even widths, the
Nyquist column) are explicitly conjugate-symmetrized before the library
inverse transform, which makes the primitive a well-defined linear map with
an exact adjoint even when upstream arithmetic perturbed those columns.

Everything is computed in float64 with fixed operation order, so repeated
runs are bitwise identical in single-threaded mode.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor", "ComplexTensor", "no_grad", "constant",
    "add", "sub", "mul", "scalar_mul", "matmul", "channel_mix",
    "conv1d", "conv2d",
    "transpose", "reshape", "concat", "pad2d",
    "tsum", "tmean", "sqrt", "square",
    "relu", "leaky_relu", "gelu", "silu", "tanh", "sigmoid",
    "rfft2", "irfft2", "mode_mix", "activation", "ACTIVATIONS",
    "grad_check",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Context that skips graph construction (forward evaluation only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array node in the reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- autodiff core ------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate leaf gradients from this node.

        Without an explicit ``grad`` the tensor must be a scalar (seeded
        with 1).  Leaves accumulate into ``.grad``; interior results do not
        retain gradients.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError("gradient shape mismatch")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        flowing: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in flowing:
                    flowing[id(parent)] = flowing[id(parent)] + pg
                else:
                    flowing[id(parent)] = pg

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, 1.0 / float(other))
        raise TypeError("division by a tensor is not a primitive; "
                        "multiply by a precomputed reciprocal instead")

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _slice(self, key)

    def t2(self):
        """Transpose the last two axes."""
        axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        return transpose(self, axes)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def constant(value) -> Tensor:
    """Non-differentiable tensor from any array-like."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _from_op(data, parents, vjp) -> Tensor:
    parents = tuple(constant(p) for p in parents)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    return _from_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.data.shape),
                               _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    return _from_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.data.shape),
                               _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    return _from_op(a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.data.shape),
                               _unbroadcast(g * a.data, b.data.shape)))


def scalar_mul(a, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return _from_op(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape [..., m, k] and ``b`` strictly 2D [k, n].

    Batched left operands share the right operand; its gradient sums over
    the batch.  This covers every dense layer in the package.
    """
    a, b = constant(a), constant(b)
    if b.ndim != 2 or a.ndim < 2:
        raise ValueError("matmul expects a [..., m, k] left and a 2D right operand")
    lead = a.data.shape[:-1]
    a2 = a.data.reshape(-1, a.data.shape[-1])
    n = b.data.shape[1]

    def vjp(g):
        g2 = np.ascontiguousarray(g.reshape(-1, n))
        da = (g2 @ b.data.T).reshape(a.data.shape)
        db = a2.T @ g2
        return da, db

    return _from_op((a2 @ b.data).reshape(lead + (n,)), (a, b), vjp)


def channel_mix(x, w, bias=None) -> Tensor:
    """Per-position linear map over the channel axis of [B, C_in, *spatial].

    Returns [B, C_out, *spatial] with out[b, o, s] = sum_i x[b, i, s] w[i, o]
    (+ bias[o]).  Equivalent to transposing channels last and applying
    matmul, but stays channels-first so no full-size copies are made.
    """
    x, w = constant(x), constant(w)
    if bias is not None:
        bias = constant(bias)
    if w.ndim != 2 or x.ndim < 3:
        raise ValueError("channel_mix expects x [B, C_in, *spatial] and w 2D")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: x has {x.shape[1]}, w {w.shape[0]}")
    b, cin = x.shape[0], x.shape[1]
    spatial = x.shape[2:]
    cout = w.shape[1]
    x3 = x.data.reshape(b, cin, -1)
    out = np.matmul(w.data.T, x3)
    if bias is not None:
        out += bias.data.reshape(-1, 1)
    out = out.reshape((b, cout) + spatial)

    def vjp(g):
        g3 = g.reshape(b, cout, -1)
        dx = np.matmul(w.data, g3).reshape(x.shape)
        dw = np.matmul(x3, g3.swapaxes(1, 2)).sum(axis=0)
        if bias is None:
            return dx, dw
        return dx, dw, g3.sum(axis=(0, 2))

    parents = (x, w) if bias is None else (x, w, bias)
    return _from_op(out, parents, vjp)


# -- shape ops ---------------------------------------------------------------

def transpose(a, axes) -> Tensor:
    a = constant(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _from_op(np.transpose(a.data, axes), (a,),
                    lambda g: (np.transpose(g, inverse),))


def reshape(a, shape) -> Tensor:
    a = constant(a)
    old = a.data.shape
    return _from_op(a.data.reshape(shape), (a,),
                    lambda g: (g.reshape(old),))


def _slice(a, key) -> Tensor:
    a = constant(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _from_op(a.data[key].copy(), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes[:-1])

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis),
                    tensors, vjp)


def pad2d(a, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad the last two axes by (top, bottom, left, right)."""
    a = constant(a)
    t, b, l, r = pads
    width = [(0, 0)] * (a.ndim - 2) + [(t, b), (l, r)]
    h, w = a.data.shape[-2], a.data.shape[-1]

    def vjp(g):
        return (g[..., t:t + h, l:l + w],)

    return _from_op(np.pad(a.data, width), (a,), vjp)


# -- reductions --------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    shape = a.data.shape
    axes = axis if axis is None or isinstance(axis, tuple) else (axis,)

    def vjp(g):
        if axes is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return scalar_mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- elementwise nonlinearities ----------------------------------------------

def sqrt(a) -> Tensor:
    a = constant(a)
    out = np.sqrt(a.data)
    return _from_op(out, (a,), lambda g: (g * (0.5 / out),))


def square(a) -> Tensor:
    a = constant(a)
    return _from_op(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def relu(a) -> Tensor:
    a = constant(a)
    mask = a.data > 0
    return _from_op(np.where(mask, a.data, 0.0), (a,),
                    lambda g: (np.where(mask, g, 0.0),))


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    a = constant(a)
    mask = a.data > 0
    return _from_op(np.where(mask, a.data, alpha * a.data), (a,),
                    lambda g: (np.where(mask, g, alpha * g),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit 0.5*x*(1 + erf(x/sqrt(2)))."""
    a = constant(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
    return _from_op(a.data * cdf, (a,),
                    lambda g: (g * (cdf + a.data * pdf),))


def silu(a) -> Tensor:
    a = constant(a)
    s = expit(a.data)
    return _from_op(a.data * s, (a,),
                    lambda g: (g * (s * (1.0 + a.data * (1.0 - s))),))


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = constant(a)
    out = expit(a.data)
    return _from_op(out, (a,), lambda g: (g * (out * (1.0 - out)),))


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "gelu": gelu,
    "silu": silu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def activation(name: str):
    """Look up an activation by name (raises on unknown names)."""
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; "
                         f"choose from {sorted(ACTIVATIONS)}") from None


# -- convolutions ------------------------------------------------------------

def _fold_reflect(g: np.ndarray, pads: tuple[int, ...]) -> np.ndarray:
    """Adjoint of np.pad(..., mode='reflect') over the trailing axes.

    ``pads`` gives one symmetric pad per trailing axis (last axis last).
    """
    nd = g.ndim
    for k, pad in enumerate(pads):
        if pad == 0:
            continue
        axis = nd - len(pads) + k
        n = g.shape[axis] - 2 * pad
        g_m = np.moveaxis(g, axis, 0)
        core = g_m[pad:pad + n].copy()
        # padded[i] (i<pad) came from x[pad - i]; padded[pad+n+j] from x[n-2-j]
        core[1:pad + 1] += g_m[:pad][::-1]
        core[n - 1 - pad:n - 1] += g_m[pad + n:][::-1]
        g = np.moveaxis(core, 0, axis)
    return g


def _fold_wrap(g: np.ndarray, pads: tuple[int, ...]) -> np.ndarray:
    """Adjoint of np.pad(..., mode='wrap') over the trailing axes."""
    nd = g.ndim
    for k, pad in enumerate(pads):
        if pad == 0:
            continue
        axis = nd - len(pads) + k
        n = g.shape[axis] - 2 * pad
        g_m = np.moveaxis(g, axis, 0)
        core = g_m[pad:pad + n].copy()
        core[n - pad:] += g_m[:pad]
        core[:pad] += g_m[pad + n:]
        g = np.moveaxis(core, 0, axis)
    return g


_PAD_MODES = {"zero": "constant", "reflect": "reflect", "periodic": "wrap"}


def conv2d(x, w, bias=None, padding: str = "zero") -> Tensor:
    """Same-size 2D cross-correlation, stride 1, odd kernels.

    ``x``: [B, C_in, H, W]; ``w``: [C_out, C_in, kh, kw]; optional
    ``bias``: [C_out].  ``padding`` is "zero", "reflect", or "periodic".
    Strided downsampling is expressed downstream by slicing the output.
    """
    x, w = constant(x), constant(w)
    if bias is not None:
        bias = constant(bias)
    B, cin, H, W = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernels must have odd spatial extent")
    if padding not in _PAD_MODES:
        raise ValueError(f"unknown padding {padding!r}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)),
                mode=_PAD_MODES[padding])

    acc = np.zeros((B, H, W, cout))
    for di in range(kh):
        for dj in range(kw):
            acc += np.tensordot(xp[:, :, di:di + H, dj:dj + W],
                                w.data[:, :, di, dj], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def vjp(g):
        dw = np.empty_like(w.data)
        for di in range(kh):
            for dj in range(kw):
                dw[:, :, di, dj] = np.tensordot(
                    g, xp[:, :, di:di + H, dj:dj + W], axes=([0, 2, 3], [0, 2, 3]))
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                dxp[:, :, di:di + H, dj:dj + W] += np.tensordot(
                    g, w.data[:, :, di, dj], axes=([1], [0])).transpose(0, 3, 1, 2)
        if padding == "zero":
            dx = dxp[:, :, ph:ph + H, pw:pw + W]
        elif padding == "reflect":
            dx = _fold_reflect(dxp, (ph, pw))
        else:
            dx = _fold_wrap(dxp, (ph, pw))
        db = None if bias is None else g.sum(axis=(0, 2, 3))
        if bias is None:
            return dx, dw
        return dx, dw, db

    parents = (x, w) if bias is None else (x, w, bias)
    return _from_op(out, parents, vjp)


def conv1d(x, w, bias=None, padding: str = "zero") -> Tensor:
    """Same-size 1D cross-correlation, stride 1, odd kernels.

    ``x``: [B, C_in, L]; ``w``: [C_out, C_in, k]; optional ``bias``: [C_out].
    """
    x, w = constant(x), constant(w)
    if bias is not None:
        bias = constant(bias)
    B, cin, L = x.data.shape
    cout, cin_w, k = w.data.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    if k % 2 == 0:
        raise ValueError("kernels must have odd extent")
    if padding not in _PAD_MODES:
        raise ValueError(f"unknown padding {padding!r}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p)), mode=_PAD_MODES[padding])

    acc = np.zeros((B, L, cout))
    for dk in range(k):
        acc += np.tensordot(xp[:, :, dk:dk + L], w.data[:, :, dk], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 2, 1))
    if bias is not None:
        out += bias.data[None, :, None]

    def vjp(g):
        dw = np.empty_like(w.data)
        for dk in range(k):
            dw[:, :, dk] = np.tensordot(g, xp[:, :, dk:dk + L], axes=([0, 2], [0, 2]))
        dxp = np.zeros_like(xp)
        for dk in range(k):
            dxp[:, :, dk:dk + L] += np.tensordot(g, w.data[:, :, dk],
                                                 axes=([1], [0])).transpose(0, 2, 1)
        if padding == "zero":
            dx = dxp[:, :, p:p + L]
        elif padding == "reflect":
            dx = _fold_reflect(dxp, (p,))
        else:
            dx = _fold_wrap(dxp, (p,))
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2))

    parents = (x, w) if bias is None else (x, w, bias)
    return _from_op(out, parents, vjp)


# -- Fourier transforms ------------------------------------------------------

class ComplexTensor:
    """Half-spectrum complex values packed as a real tensor [..., H, Wh, 2].

    ``full_width`` is the last-axis length of the underlying real signal;
    ``hermitian`` marks spectra that (up to the self-redundant columns)
    represent a real field.  :func:`irfft2` only accepts flagged spectra.
    """

    __slots__ = ("packed", "full_width", "hermitian")

    def __init__(self, packed: Tensor, full_width: int, hermitian: bool):
        if packed.shape[-1] != 2:
            raise ValueError("packed complex tensors need a trailing axis of 2")
        if packed.shape[-2] != full_width // 2 + 1:
            raise ValueError(
                f"stored width {packed.shape[-2]} inconsistent with "
                f"full width {full_width}")
        self.packed = constant(packed)
        self.full_width = int(full_width)
        self.hermitian = bool(hermitian)

    @property
    def shape(self):
        return self.packed.shape[:-1]

    def re(self) -> Tensor:
        return self.packed[..., 0]

    def im(self) -> Tensor:
        return self.packed[..., 1]


def _self_redundant_cols(n: int) -> tuple[int, ...]:
    return (0, n // 2) if n % 2 == 0 else (0,)


def _sym_half(gc: np.ndarray, n: int) -> np.ndarray:
    """Conjugate-symmetrize the self-redundant columns of a half spectrum.

    ``gc`` is complex with axes [..., H, n//2+1]; for columns kt in
    {0, n/2 (even n)} enforces G[r] = conj(G[-r]) by averaging, which also
    realizes the self-conjugate bins.
    """
    out = gc.copy()
    for c in _self_redundant_cols(n):
        col = gc[..., :, c]
        mirror = np.conj(np.roll(col[..., ::-1], 1, axis=-1))
        out[..., :, c] = 0.5 * (col + mirror)
    return out


def rfft2(a) -> ComplexTensor:
    """Unnormalized real-input 2D FFT over the last two axes.

    Returns the non-redundant half spectrum as a packed ComplexTensor with
    the Hermitian flag set.  The adjoint embeds the half-spectrum gradient
    at its bins and applies the conjugate (inverse-direction) transform.
    """
    a = constant(a)
    h, w = a.data.shape[-2], a.data.shape[-1]
    spec = np.fft.rfft2(a.data, axes=(-2, -1))
    packed = np.stack([spec.real, spec.imag], axis=-1)

    def vjp(g):
        gc = g[..., 0] + 1j * g[..., 1]
        emb = np.zeros(a.data.shape[:-2] + (h, w), dtype=complex)
        emb[..., :, :w // 2 + 1] = gc
        return (np.fft.ifft2(emb, axes=(-2, -1)).real * (h * w),)

    out = _from_op(packed, (a,), vjp)
    return ComplexTensor(out, full_width=w, hermitian=True)


def irfft2(ct: ComplexTensor, s: tuple[int, int]) -> Tensor:
    """Inverse of :func:`rfft2` (1/N normalization), last two axes.

    Requires the Hermitian flag; symmetrizes the self-redundant columns
    before the library inverse, so the composite map is linear with the
    exact adjoint used in the reverse pass.
    """
    if not isinstance(ct, ComplexTensor):
        raise TypeError("irfft2 expects a ComplexTensor")
    if not ct.hermitian:
        raise ValueError("irfft2 requires a Hermitian-flagged spectrum")
    h, w = s
    if ct.full_width != w:
        raise ValueError(f"spectrum encodes width {ct.full_width}, asked for {w}")
    packed = ct.packed
    if packed.shape[-3] != h:
        raise ValueError(f"spectrum has {packed.shape[-3]} rows, asked for {h}")
    wh = w // 2 + 1
    n_total = h * w
    # adjoint weights: interior columns appear twice in the full spectrum
    col_weights = np.full(wh, 2.0)
    for c in _self_redundant_cols(w):
        col_weights[c] = 1.0

    def vjp(g):
        q = np.fft.rfft2(g, axes=(-2, -1)) * (col_weights / n_total)
        q = _sym_half(q, w)
        return (np.stack([q.real, q.imag], axis=-1),)

    gc = packed.data[..., 0] + 1j * packed.data[..., 1]
    field = np.fft.irfft2(_sym_half(gc, w), s=s, axes=(-2, -1))
    return _from_op(field, (packed,), vjp)


def mode_mix(w, z) -> Tensor:
    """Per-mode complex channel mixing.

    ``w``: packed weights [kx, kt, C_out, C_in, 2]; ``z``: packed spectrum
    block [B, C_in, kx, kt, 2].  Returns [B, C_out, kx, kt, 2] where each
    retained mode is multiplied by its own complex C_out x C_in matrix.
    """
    w, z = constant(w), constant(z)
    kx, kt, cout, cin = w.shape[:4]
    b = z.shape[0]
    k = kx * kt
    # Equivalent to complex einsum 'xyoi,bixy->boxy', evaluated as one
    # stacked real matrix product per retained mode.
    wm = np.ascontiguousarray(w.data.transpose(4, 0, 1, 2, 3)
                              ).reshape(2, k, cout, cin)
    zm = np.ascontiguousarray(z.data.transpose(4, 2, 3, 1, 0)
                              ).reshape(2, k, cin, b)
    wr, wi = wm
    zr, zi = zm
    outs = np.stack([wr @ zr - wi @ zi, wr @ zi + wi @ zr], axis=-1)
    out = np.ascontiguousarray(
        outs.reshape(kx, kt, cout, b, 2).transpose(3, 2, 0, 1, 4))

    def vjp(g):
        gm = np.ascontiguousarray(g.transpose(4, 2, 3, 1, 0)
                                  ).reshape(2, k, cout, b)
        gr, gi = gm
        zrt, zit = zr.transpose(0, 2, 1), zi.transpose(0, 2, 1)
        dw = np.stack([gr @ zrt + gi @ zit, gi @ zrt - gr @ zit], axis=-1)
        wrt, wit = wr.transpose(0, 2, 1), wi.transpose(0, 2, 1)
        dz = np.stack([wrt @ gr + wit @ gi, wrt @ gi - wit @ gr], axis=-1)
        return (dw.reshape(kx, kt, cout, cin, 2),
                np.ascontiguousarray(
                    dz.reshape(kx, kt, cin, b, 2).transpose(3, 2, 0, 1, 4)))

    return _from_op(out, (w, z), vjp)


# -- gradient checking -------------------------------------------------------

def grad_check(f, inputs, h: float = 1e-5, max_entries: int | None = None) -> float:
    """Compare reverse-mode gradients against central differences.

    ``f`` maps the given tensors to a scalar Tensor.  Returns the largest
    relative mismatch over the probed entries of all differentiable inputs,
    where the relative scale is max(1, ||finite-difference gradient||_inf)
    per input.  By default every entry is probed; ``max_entries`` caps the
    probes per tensor to a deterministic evenly-strided subset (endpoints
    always included) so large assembled models stay affordable — each probe
    costs two forward passes.  Callers assert against their tolerance
    (1e-5 for primitives, 1e-4 for assembled models).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    if not any(x.requires_grad for x in inputs):
        raise ValueError("grad_check: no input requires grad; the check "
                         "would be vacuous")
    for x in inputs:
        x.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()

    worst = 0.0
    for x in inputs:
        if not x.requires_grad:
            continue
        g_ad = np.zeros_like(x.data) if x.grad is None else x.grad
        if max_entries is not None and x.data.size > max_entries:
            probe = np.unique(
                np.linspace(0, x.data.size - 1, max_entries).round().astype(np.intp)
            )
        else:
            probe = np.arange(x.data.size, dtype=np.intp)
        g_fd = np.empty(probe.size)
        with no_grad():
            for j, i in enumerate(probe):
                orig = float(x.data.flat[i])
                x.data.flat[i] = orig + h
                f_plus = float(f(*inputs).data)
                x.data.flat[i] = orig - h
                f_minus = float(f(*inputs).data)
                x.data.flat[i] = orig
                g_fd[j] = (f_plus - f_minus) / (2.0 * h)
        scale = max(1.0, float(np.abs(g_fd).max()))
        worst = max(worst, float(np.abs(g_ad.flat[probe] - g_fd).max()) / scale)
    return worst
