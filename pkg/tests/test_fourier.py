import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lmulm.errors import LengthError
from lmulm.numerics import fourier
from lmulm.numerics.tensor import counting, precision

from .conftest import rel_err


def test_delta_transforms_to_ones():
    np.testing.assert_allclose(fourier.fft(np.array([1, 0, 0, 0], dtype=complex)), np.ones(4), atol=1e-15)


def test_round_trip_length_64(rng):
    x = rng.normal(size=64) + 1j * rng.normal(size=64)
    assert np.abs(fourier.ifft(fourier.fft(x)) - x).max() <= 1e-12


@pytest.mark.parametrize("k", [1, 5, 10, 15])
def test_round_trip_up_to_2_15(rng, k):
    x = rng.normal(size=2**k) + 1j * rng.normal(size=2**k)
    assert rel_err(fourier.ifft(fourier.fft(x)), x) <= 1e-12
    assert rel_err(fourier.fft(fourier.ifft(x)), x) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 8, 256])
def test_matches_numpy(rng, n):
    x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
    assert rel_err(fourier.fft(x), np.fft.fft(x)) <= 1e-13


@pytest.mark.parametrize("n", [3, 6, 100])
def test_rejects_non_power_of_two(n):
    with pytest.raises(LengthError):
        fourier.fft(np.zeros(n, dtype=complex))


def test_fft_1024_costs_51200():
    with counting() as c:
        fourier.fft(np.zeros(1024, dtype=complex))
    assert c.total == 51200 == fourier.fft_cost(1024)


@pytest.mark.parametrize("n", [2, 4, 64, 512])
def test_cost_recurrence(n):
    # C(m) = 2 C(m/2) + (m/2)(c_m + 2 c_a) with m = 2n
    measured = {}
    for m in (n, 2 * n):
        with counting() as c:
            fourier.fft(np.zeros(m, dtype=complex))
        measured[m] = c.total
    assert measured[2 * n] == 2 * measured[n] + n * (6 + 2 * 2)


def test_repetition_doubles_tally(rng):
    x = rng.normal(size=128) + 0j
    with counting() as c:
        fourier.fft(x)
        once = c.total
        fourier.fft(x)
    assert c.total == 2 * once


@pytest.mark.parametrize("N", [2, 4, 16, 1024])
def test_real_transforms(rng, N):
    x = rng.normal(size=(2, N))
    assert rel_err(fourier.rfft(x), np.fft.rfft(x)) <= 1e-13
    assert rel_err(fourier.irfft(np.fft.rfft(x), N), x) <= 1e-13
    with counting() as c:
        fourier.rfft2x(x[0])
    assert c.total == fourier.real_fft_cost(N)


@given(st.integers(1, 512), st.integers(0, 2**32 - 1))
def test_convolution_theorem(n, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=n), r.normal(size=n)
    N = fourier.next_pow2(2 * n)
    pa, pb = np.zeros(N, complex), np.zeros(N, complex)
    pa[:n], pb[:n] = a, b
    got = fourier.ifft(fourier.fft(pa) * fourier.fft(pb)).real[: 2 * n - 1]
    assert rel_err(got, np.convolve(a, b)) <= 1e-10


@given(st.integers(1, 9), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_causal_conv_spectra_matches_direct(logn, r, seed):
    rnd = np.random.default_rng(seed)
    n = 2**logn
    x, k = rnd.normal(size=(2, n)), rnd.normal(size=(r, n))
    N = fourier.conv_length(n)
    y = fourier.causal_conv_spectra(x, fourier.kernel_spectrum(k, N), N)
    want = np.array([[np.convolve(x[c], k[i])[:n] for c in range(2)] for i in range(r)])
    assert rel_err(y, want) <= 1e-10


def test_conv_length():
    assert fourier.conv_length(256) == 512
    assert fourier.conv_length(100) == 256


def test_single_precision_dtype(rng):
    with precision("f32"):
        y = fourier.fft(rng.normal(size=32) + 0j)
    assert y.dtype == np.complex64
