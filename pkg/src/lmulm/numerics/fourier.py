"""Radix-2 Cooley-Tukey FFT with exact operation counting.

The complex transform is an iterative decimation-in-time FFT vectorised over
all leading axes.  Each of the ``log2 n`` stages performs ``n/2`` butterflies
of one complex multiply and two complex adds, so one length-``n`` transform is
tallied as ``5 n log2 n`` FLOPs (twiddles equal to one are still counted, the
way the textbook recurrence does).

Real sequences of even length ``N = 2n`` are transformed by packing them into a
length-``n`` complex sequence and untangling the result, which costs
``C(n) + 7n + 4`` FLOPs instead of ``C(2n)``.  The untangling leaves a factor
of two on the spectrum; :func:`causal_conv_spectra` folds it (and the inverse
normalisation) into the kernel spectrum.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numba import njit

from lmulm.errors import LengthError
from lmulm.numerics.tensor import complex_dtype, counter


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(n: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(n // 2) / n)


def _batch(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[:-1], dtype=np.int64)) if len(shape) > 1 else 1


@njit(cache=True, nogil=True)
def _butterflies(x, tw):
    nb, n = x.shape
    half = 1
    while half < n:
        stride = n // (2 * half)
        for t in range(nb):
            for start in range(0, n, 2 * half):
                for j in range(half):
                    a = x[t, start + j]
                    b = x[t, start + j + half] * tw[j * stride]
                    x[t, start + j] = a + b
                    x[t, start + j + half] = a - b
        half *= 2


def _transform(v: np.ndarray, inverse: bool) -> np.ndarray:
    n = v.shape[-1]
    if not is_pow2(n):
        raise LengthError(f"radix-2 FFT needs a power-of-two length, got {n}")
    ctype = complex_dtype()
    lead = v.shape[:-1]
    x = np.ascontiguousarray(np.asarray(v, dtype=ctype)[..., _bitrev(n)]).reshape(-1, n)
    _butterflies(x, _twiddles(n, inverse).astype(ctype))
    stages = n.bit_length() - 1
    nb = _batch(v.shape)
    counter.add(cmul=nb * (n // 2) * stages, cadd=nb * n * stages)
    return x.reshape(lead + (n,))


def fft(v: np.ndarray) -> np.ndarray:
    """Forward DFT along the last axis (length must be a power of two)."""
    return _transform(v, inverse=False)


def ifft(v: np.ndarray) -> np.ndarray:
    """Inverse DFT along the last axis, normalised by ``1/n``."""
    x = _transform(v, inverse=True)
    n = x.shape[-1]
    counter.add(real=2 * _batch(x.shape) * n)
    return x / n


def fft_cost(n: int) -> int:
    """FLOPs tallied for one complex transform of length ``n``."""
    return 5 * n * (n.bit_length() - 1)


# ---------------------------------------------------------------------------
# real transforms via half-length complex packing


@lru_cache(maxsize=None)
def _real_twiddles(N: int) -> np.ndarray:
    n = N // 2
    k = np.arange(1, n // 2 + 1)
    return np.exp(-2j * np.pi * k / N)


def rfft2x(x: np.ndarray) -> np.ndarray:
    """Twice the one-sided spectrum of real ``x`` (last axis, even pow-2 length).

    Returns ``N/2 + 1`` bins.
    """
    N = x.shape[-1]
    if N < 2 or not is_pow2(N):
        raise LengthError(f"real FFT needs an even power-of-two length, got {N}")
    n = N // 2
    ctype = complex_dtype()
    z = x[..., 0::2] + 1j * x[..., 1::2]
    Z = _transform(z, inverse=False)
    out = np.empty(x.shape[:-1] + (n + 1,), dtype=ctype)
    z0 = Z[..., 0]
    out[..., 0] = 2 * (z0.real + z0.imag)
    out[..., n] = 2 * (z0.real - z0.imag)
    nb = _batch(x.shape)
    counter.add(real=4 * nb)
    if n >= 2:
        k = np.arange(1, n // 2 + 1)
        zk = Z[..., k]
        zr = np.conj(Z[..., n - k])
        e = zk + zr
        o = (zk - zr) * -1j
        t = _real_twiddles(N).astype(ctype) * o
        out[..., k] = e + t
        out[..., n - k] = np.conj(e - t)
        counter.add(cmul=nb * len(k), cadd=nb * 4 * len(k))
    return out


def irfft_raw(Y: np.ndarray, N: int) -> np.ndarray:
    """Unnormalised inverse of a one-sided spectrum: returns ``N * irfft(Y)``."""
    n = N // 2
    if Y.shape[-1] != n + 1:
        raise LengthError(f"expected {n + 1} bins for length {N}, got {Y.shape[-1]}")
    ctype = complex_dtype()
    Z = np.empty(Y.shape[:-1] + (n,), dtype=ctype)
    y0, yn = Y[..., 0], Y[..., n]
    Z[..., 0] = (y0 + yn) + 1j * (y0 - yn)
    nb = _batch(Y.shape)
    counter.add(cadd=3 * nb)
    if n >= 2:
        k = np.arange(1, n // 2 + 1)
        yk = Y[..., k]
        yr = np.conj(Y[..., n - k])
        a = yk + yr
        c = (yk - yr) * np.conj(_real_twiddles(N)).astype(ctype)
        Z[..., k] = a + 1j * c
        Z[..., n - k] = np.conj(a) + 1j * np.conj(c)
        counter.add(cmul=nb * len(k), cadd=nb * 4 * len(k))
    z = _transform(Z, inverse=True)
    out = np.empty(Y.shape[:-1] + (N,), dtype=z.real.dtype)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def rfft(x: np.ndarray) -> np.ndarray:
    """One-sided spectrum of a real signal (``N/2 + 1`` bins)."""
    return rfft2x(x) / 2


def irfft(Y: np.ndarray, N: int) -> np.ndarray:
    return irfft_raw(Y, N) / N


def real_fft_cost(N: int) -> int:
    """FLOPs tallied by :func:`rfft2x` for one real length-``N`` signal."""
    n = N // 2
    return fft_cost(n) + 14 * (n // 2) + 4


def conv_length(n: int) -> int:
    """Transform length used to linearly convolve two length-``n`` sequences."""
    return 2 * n if is_pow2(n) else next_pow2(2 * n - 1)


def kernel_spectrum(kernel: np.ndarray, N: int) -> np.ndarray:
    """Spectrum of causal kernels ``(..., n)`` scaled for :func:`causal_conv_spectra`."""
    n = kernel.shape[-1]
    padded = np.zeros(kernel.shape[:-1] + (N,), dtype=kernel.dtype)
    padded[..., :n] = kernel
    spec = rfft2x(padded)
    counter.add(real=2 * spec.size)
    return spec / (4 * N)


def causal_conv_spectra(x: np.ndarray, kspec: np.ndarray, N: int) -> np.ndarray:
    """Causal convolution of every row of ``x`` with every kernel.

    Parameters
    ----------
    x : (d, n) real array, one signal per row
    kspec : (r, N/2 + 1) output of :func:`kernel_spectrum`

    Returns
    -------
    (r, d, n) array ``y[r, c, t] = sum_{tau <= t} k[r, tau] x[c, t - tau]``
    """
    d, n = x.shape
    padded = np.zeros((d, N), dtype=x.dtype)
    padded[:, :n] = x
    xs = rfft2x(padded)
    prod = xs[None, :, :] * kspec[:, None, :]
    counter.add(cmul=prod.size)
    y = irfft_raw(prod, N)[..., :n]
    counter.note_live(prod.size * 2 + x.size)
    return y
