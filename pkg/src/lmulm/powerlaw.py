"""Power-law fits ``L(N) = (N / N_c)^(-alpha)`` and published reference curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from lmulm.errors import ConfigError, DomainError


@dataclass(frozen=True)
class PowerLawFit:
    N_c: float
    alpha: float
    residual: float

    def __call__(self, N):
        return (np.asarray(N, dtype=float) / self.N_c) ** (-self.alpha)


def fit_power_law(points) -> PowerLawFit:
    """Least squares on ``log L = -alpha (log N - log N_c)``.

    Parameters
    ----------
    points : iterable of (N, loss)
        At least three pairs, all strictly positive.

    Returns
    -------
    PowerLawFit
        ``residual`` is the RMS error in log-loss space.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DomainError(f"need at least 3 (N, loss) pairs, got {len(pts)}")
    if not np.all(pts > 0):
        raise DomainError("power-law fit needs strictly positive N and loss")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    alpha = -slope
    if alpha <= 0:
        raise DomainError(f"loss does not decrease with N (fitted exponent {alpha:.4g})")
    resid = y - (slope * x + intercept)
    return PowerLawFit(N_c=math.exp(intercept / alpha), alpha=alpha, residual=float(np.sqrt(np.mean(resid**2))))


@dataclass(frozen=True)
class ReferenceCurve:
    N_c: float
    alpha: float
    data_exponent: float | None = None


REFERENCE_CURVES = MappingProxyType({
    "transformer": ReferenceCurve(6.5e13, 0.077, 0.76),
    "lstm": ReferenceCurve(7.45e14, 0.071),
    "lmu": ReferenceCurve(1.95e14, 0.072),
    "lmu_g": ReferenceCurve(3.80e14, 0.069),
})


def reference_loss(curve: str, N: float, s_ratio: float | None = None) -> float:
    """Loss in nats predicted by a reference curve at ``N`` non-embedding parameters.

    For the transformer curve, ``s_ratio`` is the data ratio ``S / S_min``; its
    term ``s_ratio^(-0.76)`` is added only when a ratio is given.
    """
    key = curve.lower()
    if key not in REFERENCE_CURVES:
        raise ConfigError(f"unknown curve {curve!r}; expected one of {sorted(REFERENCE_CURVES)}")
    if N <= 0:
        raise DomainError(f"N must be positive, got {N}")
    c = REFERENCE_CURVES[key]
    loss = (N / c.N_c) ** (-c.alpha)
    if s_ratio is not None:
        if c.data_exponent is None:
            raise ConfigError(f"curve {curve!r} has no data term")
        if s_ratio <= 0:
            raise DomainError(f"S ratio must be positive, got {s_ratio}")
        loss += s_ratio ** (-c.data_exponent)
    return loss
