"""Instrumented, differentiable tensor operations.

Every op takes :class:`Tensor` (or array-like) inputs, computes its forward
value in the current precision, tallies its FLOPs on the global counter and,
when a tape is active and an input is trainable, records a backward rule.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import erf

from lmulm.errors import DimensionError
from lmulm.numerics import fourier as _fft
from lmulm.numerics.tensor import Tensor, as_tensor, counter, float_dtype, record

LN_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _wrap(x: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(x, dtype=float_dtype())
    out.grad = None
    out.requires_grad = False
    out.name = None
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data + b.data)
    counter.add(real=out.size)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data - b.data)
    counter.add(real=out.size)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data * b.data)
    counter.add(real=out.size)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = _wrap(a.data * c)
    counter.add(real=out.size)
    return record(out, (a,), lambda g: (g * c,), "scale")


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = _wrap(np.sum(a.data))
    counter.add(real=max(a.size - 1, 0))
    return record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def _phi(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def gelu(x) -> Tensor:
    """``x * Phi(x)`` with the exact Gaussian CDF."""
    x = as_tensor(x)
    cdf = _phi(x.data)
    out = _wrap(x.data * cdf)
    counter.add(real=x.size)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x.data * pdf),)

    return record(out, (x,), backward, "gelu")


# ---------------------------------------------------------------------------
# matmul with a fixed summation order


@njit(cache=True, nogil=True)
def _mm_kernel(a, b, out):
    nb, m, k = a.shape
    p = b.shape[2]
    for t in range(nb):
        for i in range(m):
            for j in range(p):
                out[t, i, j] = 0.0
            for l in range(k):
                ail = a[t, i, l]
                for j in range(p):
                    out[t, i, j] += ail * b[t, l, j]


def matmul_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with numpy broadcasting, accumulating the inner index ascending.

    Each output entry is ``((0 + a0*b0) + a1*b1) + ...``, identical bit for bit
    to a naive triple loop regardless of batch size or layout.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    dt = float_dtype()
    m, k = a.shape[-2:]
    p = b.shape[-1]
    if b.ndim == 2:
        lead = a.shape[:-2]
        a3 = np.ascontiguousarray(a, dtype=dt).reshape(1, -1, k)
        b3 = np.ascontiguousarray(b, dtype=dt).reshape(1, k, p)
        out = np.empty((1, a3.shape[1], p), dtype=dt)
        _mm_kernel(a3, b3, out)
        return out.reshape(lead + (m, p))
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    a3 = np.ascontiguousarray(np.broadcast_to(a, lead + (m, k)), dtype=dt).reshape(-1, m, k)
    b3 = np.ascontiguousarray(np.broadcast_to(b, lead + (k, p)), dtype=dt).reshape(-1, k, p)
    out = np.empty((a3.shape[0], m, p), dtype=dt)
    _mm_kernel(a3, b3, out)
    return out.reshape(lead + (m, p))


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; costs ``2 m k p`` per batch item."""
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(matmul_array(a.data, b.data))
    k = a.shape[-1]
    counter.add(real=2 * k * out.size)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(matmul_array(g, _swap(b.data)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = matmul_array(a2.T, g.reshape(-1, g.shape[-1]))
            else:
                gb = _unbroadcast(matmul_array(_swap(a.data), g), b.shape)
        return ga, gb

    return record(out, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# shape ops


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    out = _wrap(np.ascontiguousarray(_swap(a.data)))
    return record(out, (a,), lambda g: (_swap(g),), "swap")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = _wrap(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def index(a, key) -> Tensor:
    """Basic slicing ``a[key]``."""
    a = as_tensor(a)
    out = _wrap(a.data[key])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return record(out, (a,), backward, "index")


def concat(ts: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    out = _wrap(np.concatenate([t.data for t in ts], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tuple(ts), backward, "concat")


def embedding(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]``; no FLOPs."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.intp)
    out = _wrap(weight.data[ids])

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return record(out, (weight,), backward, "embedding")


# ---------------------------------------------------------------------------
# normalisation and softmax


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Standardise the last axis then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: last axis {d} vs gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = _wrap(xhat * gain.data + bias.data)
    rows = x.size // d
    # mean d, centre d, square+sum 2d, rsqrt 2, normalise d, affine 2d
    counter.add(real=rows * (7 * d + 2))

    def backward(g):
        gx = gg = gb = None
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gain.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return record(out, (x, gain, bias), backward, "layer_norm")


def softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis with max subtraction.

    ``mask`` (broadcastable bool array) marks allowed entries; masked entries
    get probability zero.  Costs ``4c - 1`` FLOPs per row of length ``c``.
    """
    a = as_tensor(a)
    z = a.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = _wrap(p)
    c = a.shape[-1]
    counter.add(real=(a.size // c) * (4 * c - 1))

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record(out, (a,), backward, "softmax")


def attend(scores, values) -> Tensor:
    """``softmax_rows(scores) @ values`` with deferred normalisation.

    The exponentials are multiplied into ``values`` before dividing by the row
    sums, so normalisation costs one divide per output entry.  Work is split
    between the ``softmax`` section (shift, exp, row sums) and ``m_prime``.
    """
    s, v = as_tensor(scores), as_tensor(values)
    r, c = s.shape[-2:]
    z = s.data - s.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    tot = e.sum(axis=-1, keepdims=True)
    rows = s.size // c
    with counter.section("softmax"):
        counter.add(real=rows * (2 * c + (c - 1)))
    with counter.section("m_prime"):
        ev = matmul_array(e, v.data)
        out = _wrap(ev / tot)
        counter.add(real=2 * c * ev.size + out.size)
    p = e / tot

    def backward(g):
        gv = _unbroadcast(matmul_array(_swap(p), g), v.shape) if v.requires_grad else None
        gs = None
        if s.requires_grad:
            gp = matmul_array(g, _swap(v.data))
            gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        return gs, gv

    return record(out, (s, v), backward, "attend")


# ---------------------------------------------------------------------------
# causal FFT convolution


def causal_conv(x, kernel) -> Tensor:
    """Causal convolution of each input channel with each kernel row.

    Parameters
    ----------
    x : Tensor (n, d)
    kernel : Tensor (r, n)

    Returns
    -------
    Tensor (n, r, d), ``y[t, i, c] = sum_{tau <= t} kernel[i, tau] * x[t - tau, c]``
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    n, d = x.shape
    if kernel.ndim != 2 or kernel.shape[1] != n:
        raise DimensionError(f"causal_conv: kernel {kernel.shape} does not match sequence length {n}")
    N = _fft.conv_length(n)
    kspec = _fft.kernel_spectrum(kernel.data, N)
    y = _fft.causal_conv_spectra(np.ascontiguousarray(x.data.T), kspec, N)
    out = _wrap(np.transpose(y, (2, 0, 1)))

    def backward(g):
        # g: (n, r, d); correlations are convolutions of time-reversed signals
        grev = np.transpose(g[::-1], (1, 2, 0))  # (r, d, n)
        padded = np.zeros(grev.shape[:-1] + (N,), dtype=grev.dtype)
        padded[..., :n] = grev
        gs = _fft.rfft2x(padded)
        gx = gk = None
        if x.requires_grad:
            acc = (gs * kspec[:, None, :]).sum(axis=0)
            gx = _fft.irfft_raw(acc, N)[:, :n][:, ::-1].T
        if kernel.requires_grad:
            xp = np.zeros((d, N), dtype=x.data.dtype)
            xp[:, :n] = x.data.T
            xs = _fft.rfft2x(xp)
            acc = (gs * xs[None]).sum(axis=1) / (4 * N)
            gk = _fft.irfft_raw(acc, N)[:, :n][:, ::-1]
        return gx, gk

    return record(out, (x, kernel), backward, "causal_conv")


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits, targets, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Mean next-token cross-entropy in nats over unmasked positions.

    Returns the scalar mean (differentiable) and the per-position losses
    (masked positions are NaN).
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    per = lse - np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    valid = np.ones(per.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    vocab = logits.shape[-1]
    counter.add(real=per.size * (3 * vocab + 1))
    mean = float(per[valid].sum() / count) if count else 0.0
    out = _wrap(mean)
    per_pos = np.where(valid, per, np.nan)

    def backward(g):
        p = np.exp(z - lse[..., None])
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        w = (valid / max(count, 1))[..., None]
        return ((p - onehot) * w * g,)

    return record(out, (logits,), backward, "cross_entropy"), per_pos
