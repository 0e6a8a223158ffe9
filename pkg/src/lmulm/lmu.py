"""The LMU linear time-invariant memory and its three evaluation backends.

All backends map an input sequence ``X`` of shape ``(n, d)`` to memory states
of shape ``(n, q, d)``: at every step, column ``c`` of the ``q x d`` memory
matrix holds the Legendre coefficients of the recent history of channel ``c``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.polynomial import legendre

from lmulm.errors import ConfigError, NumericError
from lmulm.numerics import fourier
from lmulm.numerics.ops import matmul_array
from lmulm.numerics.tensor import Tensor, counter, float_dtype

RK_STABLE_Q = 64
RK_OVERFLOW = 1e6
MAX_SQUARINGS = 30


@dataclass(frozen=True)
class LmuConfig:
    theta: float
    q: int
    q_prime: int | None = None

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ConfigError(f"order q must be >= 1, got {self.q}")
        if not self.theta >= 1:
            raise ConfigError(f"window theta must be >= 1 token, got {self.theta}")
        if self.q_prime is None:
            object.__setattr__(self, "q_prime", max(1, round(self.q / 10)))
        if not 1 <= self.q_prime <= self.q:
            raise ConfigError(f"reduced order must satisfy 1 <= q' <= q, got q'={self.q_prime}, q={self.q}")


@dataclass
class ContinuousSystem:
    A: np.ndarray
    B: np.ndarray
    theta: float | None = None


@dataclass
class DiscreteSystem:
    A_bar: np.ndarray
    B_bar: np.ndarray

    @property
    def q(self) -> int:
        return self.A_bar.shape[0]


@dataclass
class ImpulseResponse:
    """Columns ``A_bar^t B_bar`` for ``t = 0..n-1`` plus a cached kernel spectrum."""

    H: np.ndarray
    _spectra: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    def spectrum(self, N: int) -> np.ndarray:
        if N not in self._spectra:
            was = counter.enabled
            counter.enabled = False
            try:
                self._spectra[N] = fourier.kernel_spectrum(self.H, N)
            finally:
                counter.enabled = was
        return self._spectra[N]


def _as_array(X) -> np.ndarray:
    if isinstance(X, Tensor):
        X = X.data
    X = np.asarray(X, dtype=float_dtype())
    if X.ndim == 1:
        X = X[:, None]
    return X


# ---------------------------------------------------------------------------
# construction


def build_continuous(cfg: LmuConfig | None = None, *, theta: float | None = None, q: int | None = None) -> ContinuousSystem:
    """Closed-form LMU ``(A, B)`` for window ``theta`` and order ``q``."""
    if cfg is not None:
        theta, q = cfg.theta, cfg.q
    if q is None or q < 1:
        raise ConfigError(f"order q must be >= 1, got {q}")
    if theta is None or not theta > 0:
        raise ConfigError(f"window theta must be positive, got {theta}")
    i = np.arange(q)[:, None]
    j = np.arange(q)[None, :]
    sign = np.where(i < j, -1.0, (-1.0) ** (i - j + 1))
    A = (2 * i + 1) * sign / theta
    B = ((2 * np.arange(q) + 1) * (-1.0) ** np.arange(q) / theta)[:, None]
    return ContinuousSystem(A.astype(np.float64), B.astype(np.float64), float(theta))


def expm(M: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """Matrix exponential by scaling and squaring a truncated Taylor series."""
    M = np.asarray(M, dtype=np.float64)
    norm = np.abs(M).sum(axis=1).max() if M.size else 0.0
    s = 0
    if norm > 0.5:
        s = int(math.ceil(math.log2(norm / 0.5)))
    if s > MAX_SQUARINGS:
        raise NumericError(f"matrix exponential needs {s} squarings (limit {MAX_SQUARINGS}); norm {norm:.3g}")
    X = M / (2.0**s)
    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 60):
        term = term @ X / k
        result = result + term
        if np.abs(term).max() <= tol * max(np.abs(result).max(), 1.0):
            break
    else:
        raise NumericError("Taylor series for expm did not converge")
    for _ in range(s):
        result = result @ result
    return result


def discretize_zoh(sys: ContinuousSystem) -> DiscreteSystem:
    """Zero-order hold with a one-token step via the augmented exponential.

    ``expm([[A, B], [0, 0]])`` has ``[A_bar, B_bar]`` as its top block row,
    which sidesteps inverting ``A``.
    """
    A = np.atleast_2d(np.asarray(sys.A, dtype=np.float64))
    B = np.asarray(sys.B, dtype=np.float64).reshape(A.shape[0], 1)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NumericError("continuous system has non-finite entries")
    q = A.shape[0]
    aug = np.zeros((q + 1, q + 1))
    aug[:q, :q] = A
    aug[:q, q:] = B
    E = expm(aug)
    out = DiscreteSystem(E[:q, :q].copy(), E[:q, q:].copy())
    if sys.theta is not None and sys.theta >= 1:
        rho = np.abs(np.linalg.eigvals(out.A_bar)).max()
        if not rho < 1.0:
            raise NumericError(f"discrete LMU is not stable: spectral radius {rho}")
    return out


def build_lmu(cfg: LmuConfig) -> tuple[ContinuousSystem, DiscreteSystem]:
    sys = build_continuous(cfg)
    return sys, discretize_zoh(sys)


def impulse_response(sys: DiscreteSystem, n: int) -> ImpulseResponse:
    """``H[:, t] = A_bar^t B_bar`` for ``t < n``."""
    if n < 1:
        raise ConfigError(f"impulse response length must be >= 1, got {n}")
    q = sys.q
    H = np.empty((q, n))
    col = sys.B_bar[:, 0].astype(np.float64)
    for t in range(n):
        H[:, t] = col
        col = sys.A_bar @ col
    return ImpulseResponse(H.astype(float_dtype()))


# ---------------------------------------------------------------------------
# backends


def iter_state_space(sys: DiscreteSystem, X) -> Iterator[np.ndarray]:
    """Yield ``m_t = A_bar m_{t-1} + B_bar x_t`` one step at a time.

    Only the current ``q x d`` state is kept alive.
    """
    X = _as_array(X)
    n, d = X.shape
    q = sys.q
    dt = float_dtype()
    A = sys.A_bar.astype(dt)
    B = sys.B_bar.astype(dt)
    m = np.zeros((q, d), dtype=dt)
    counter.note_live(q * d + q * q + q)
    for t in range(n):
        m = matmul_array(A, m) + B * X[t][None, :]
        counter.add(real=2 * q * q * d + 2 * q * d)
        yield m


def run_state_space(sys: DiscreteSystem, X) -> np.ndarray:
    """Sequential ZOH recurrence; returns states of shape ``(n, q, d)``."""
    X = _as_array(X)
    out = np.empty((X.shape[0], sys.q, X.shape[1]), dtype=float_dtype())
    for t, m in enumerate(iter_state_space(sys, X)):
        out[t] = m
    return out


@dataclass(frozen=True)
class _Structure:
    coef: np.ndarray
    alt: np.ndarray
    row_sign: np.ndarray


def _structure(q: int, theta: float) -> _Structure:
    i = np.arange(q)
    return _Structure(((2 * i + 1) / theta)[:, None], ((-1.0) ** i)[:, None], ((-1.0) ** (i + 1))[:, None])


def fast_matvec_A(v, theta: float) -> np.ndarray:
    """``A @ v`` in O(q) per column using the LMU's band structure.

    Row ``i`` of ``A`` is ``-1`` above the diagonal and ``(-1)^(i-j+1)`` on and
    below it, all scaled by ``(2i+1)/theta``; so ``A v`` is a suffix sum of
    ``v`` plus a sign-flipped prefix sum of ``(-1)^j v_j``.
    """
    v = np.asarray(v.data if isinstance(v, Tensor) else v)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    q, d = v.shape
    st = _structure(q, theta)
    suffix = np.zeros_like(v)
    if q > 1:
        suffix[:-1] = np.cumsum(v[::-1], axis=0)[::-1][1:]
    prefix = np.cumsum(st.alt.astype(v.dtype) * v, axis=0)
    out = st.coef.astype(v.dtype) * (st.row_sign.astype(v.dtype) * prefix - suffix)
    counter.add(real=(4 * q - 2) * d)
    return out[:, 0] if squeeze else out


def run_rk(sys: ContinuousSystem, X, r: int = 4, dense: bool = False, substeps: int = 1) -> np.ndarray:
    """Explicit Runge-Kutta integration of ``dm/dt = A m + B x``, one step per token.

    The input is held constant across each token.  ``r`` selects forward Euler
    (1), the midpoint rule (2) or classical RK4 (4).  With ``dense=False`` the
    ``A`` products use :func:`fast_matvec_A`.  ``substeps > 1`` splits each
    token into that many equal steps.

    ``A`` is far from normal, so even with all eigenvalues well inside the RK4
    stability region the one-step propagator drifts from ``expm(A)`` quickly as
    ``q / theta`` grows (about 0.2 in 2-norm at ``q=16, theta=64``).
    """
    if r not in (1, 2, 4):
        raise ConfigError(f"Runge-Kutta order must be 1, 2 or 4, got {r}")
    if substeps < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    X = _as_array(X)
    n, d = X.shape
    q = sys.A.shape[0]
    if not dense and sys.theta is None:
        raise ConfigError("structured RK needs the LMU theta; pass dense=True for a generic system")
    if q > RK_STABLE_Q:
        warnings.warn(f"RK backend with q={q} > {RK_STABLE_Q} may be numerically unstable", RuntimeWarning)
    dt = float_dtype()
    h = 1.0 / substeps
    A = (sys.A * h).astype(dt)
    B = (sys.B * h).astype(dt)
    theta = None if sys.theta is None else sys.theta * substeps

    def f(m, bx):
        if dense:
            am = matmul_array(A, m)
            counter.add(real=2 * q * q * d)
        else:
            am = fast_matvec_A(m, theta)
        counter.add(real=q * d)
        return am + bx

    out = np.empty((n, q, d), dtype=dt)
    m = np.zeros((q, d), dtype=dt)
    for t in range(n):
        bx = B * X[t][None, :]
        counter.add(real=q * d)
        for _ in range(substeps):
            m = _rk_step(f, m, bx, r)
        if not np.all(np.abs(m) <= RK_OVERFLOW):
            raise NumericError(f"RK states exceeded {RK_OVERFLOW:g} at step {t} (q={q}); use the ZOH backends")
        out[t] = m
    return out


def _rk_step(f, m, bx, r):
    q, d = m.shape
    if r == 1:
        counter.add(real=q * d)
        return m + f(m, bx)
    if r == 2:
        k1 = f(m, bx)
        k2 = f(m + 0.5 * k1, bx)
        counter.add(real=3 * q * d)
        return m + k2
    k1 = f(m, bx)
    k2 = f(m + 0.5 * k1, bx)
    k3 = f(m + 0.5 * k2, bx)
    k4 = f(m + k3, bx)
    counter.add(real=12 * q * d)
    return m + (k1 + 2 * k2 + 2 * k3 + k4) / 6


def run_fft_conv(H: ImpulseResponse, X) -> np.ndarray:
    """Parallel evaluation: causal convolution of every channel with every row of ``H``."""
    X = _as_array(X)
    n, d = X.shape
    if H.n < n:
        raise ConfigError(f"impulse response has {H.n} columns, sequence has {n}")
    if H.n != n:
        H = ImpulseResponse(H.H[:, :n])
    N = fourier.conv_length(n)
    y = fourier.causal_conv_spectra(np.ascontiguousarray(X.T), H.spectrum(N), N)
    return np.ascontiguousarray(np.transpose(y, (2, 0, 1)))


# ---------------------------------------------------------------------------
# decoding the sliding window


def legendre_decode(M, theta: float, lags) -> np.ndarray:
    """Reconstruct ``x(t - lag)`` from memory ``M`` (``(q,)`` or ``(q, d)``).

    Evaluates ``sum_i M_i P_i(2 lag / theta - 1)`` for each lag in ``[0, theta]``.
    """
    M = np.asarray(M, dtype=np.float64)
    lags = np.asarray(lags, dtype=np.float64)
    V = legendre.legvander(2 * lags / theta - 1, M.shape[0] - 1)
    return V @ M
