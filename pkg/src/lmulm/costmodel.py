"""Closed-form FLOP counts, instrumented measurements and scaling sweeps.

Analytic forms (per token, one layer)::

    L_SS   = 2 d (q^2 + q)
    L_RK   = 6 r d q
    L_FFT  = d [5 (log2 n + 1)(q + 1) + 6 q]
    C(n)   = 5 n log2 n
    lmu_qkv = 3 d [5 (q' + 1)(log2 n + 1) + 6 q'] + 6 q q'
    qk     = 2 d q'^2
    m_prime = 2 d q'^2 + d q'
    m      = 2 d q'
    ffn    = 4 d d'
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lmulm import blocks
from lmulm.errors import ConfigError, StateError
from lmulm.lmu import LmuConfig, build_lmu, impulse_response, iter_state_space, run_fft_conv, run_rk, run_state_space
from lmulm.numerics import fourier
from lmulm.numerics.tensor import Tensor, counter, counting, precision

TABLE_ROWS = ("lmu_qkv", "qk", "m_prime", "m", "ffn")
COMPONENTS = ("L_SS", "L_RK", "L_FFT", "C") + TABLE_ROWS
BACKENDS = ("attention", "recurrent", "parallel")


@dataclass
class CostConfig:
    n: int = 1024
    d: int = 64
    q: int = 250
    q_prime: int | None = None
    d_prime: int | None = None
    r: int = 4
    theta: float | None = None

    def __post_init__(self) -> None:
        if min(self.n, self.d, self.q, self.r) < 1:
            raise ConfigError(f"sizes must be positive: {self}")
        if self.q_prime is None:
            self.q_prime = max(1, round(self.q / 10))
        if self.d_prime is None:
            self.d_prime = 4 * self.d
        if self.theta is None:
            self.theta = float(self.n)


def _log2(n: int) -> int:
    if not fourier.is_pow2(n):
        raise ConfigError(f"FFT formulas need a power-of-two n, got {n}")
    return n.bit_length() - 1


def predict_flops(component: str, n: int = 1024, d: int = 1, d_prime: int | None = None, q: int = 1,
                  q_prime: int | None = None, r: int = 4) -> int:
    """Evaluate one closed-form count; ``C`` is per transform, the rest per token."""
    qp = max(1, round(q / 10)) if q_prime is None else q_prime
    dp = 4 * d if d_prime is None else d_prime
    if component == "L_SS":
        return 2 * d * (q * q + q)
    if component == "L_RK":
        return 6 * r * d * q
    if component == "L_FFT":
        return d * (5 * (_log2(n) + 1) * (q + 1) + 6 * q)
    if component == "C":
        return 5 * n * _log2(n)
    if component == "lmu_qkv":
        return 3 * d * (5 * (qp + 1) * (_log2(n) + 1) + 6 * qp) + 6 * q * qp
    if component == "qk":
        return 2 * d * qp * qp
    if component == "m_prime":
        return 2 * d * qp * qp + d * qp
    if component == "m":
        return 2 * d * qp
    if component == "ffn":
        return 4 * d * dp
    raise ConfigError(f"unknown component {component!r}; expected one of {COMPONENTS}")


def l_fft_expanded(n: int, d: int, q: int, real: bool = True) -> float:
    """``(d / n) [T + 6 q n + q T]``, the un-simplified FFT form.

    ``T`` is the cost of one length-``2n`` transform.  With ``real=True`` it is
    ``C(2n) / 2``, the usual price of a real-input transform, and the result
    equals ``predict_flops("L_FFT")`` exactly; ``real=False`` charges a full
    complex ``C(2n)`` and doubles the transform terms.
    """
    t = predict_flops("C", n=2 * n) / (2 if real else 1)
    return d / n * (t + 6 * q * n + q * t)


# ---------------------------------------------------------------------------
# measurement


def _require_counter() -> None:
    if not counter.enabled:
        raise StateError("measure_flops needs an enabled FlopCounter (use `with counting():`)")


def _random_layer(cfg: CostConfig, rng: np.random.Generator):
    def w(*shape):
        return Tensor(rng.normal(0.0, 0.1, size=shape))

    attn = blocks.ImplicitAttentionParams(w(cfg.q_prime, cfg.q), w(cfg.q_prime, cfg.q), w(cfg.q_prime, cfg.q), w(cfg.q_prime))
    ffn = blocks.FfnParams(w(cfg.d, cfg.d_prime), w(cfg.d_prime), w(cfg.d_prime, cfg.d), w(cfg.d))
    return attn, ffn


def measure_flops(component: str, cfg: CostConfig, X: np.ndarray | None = None, seed: int = 0) -> float:
    """Counter delta per token for one component run on ``X`` (random if omitted).

    ``C`` runs one complex transform of length ``cfg.n`` and is not divided.
    """
    _require_counter()
    rng = np.random.default_rng(seed)
    if X is None:
        X = rng.normal(size=(cfg.n, cfg.d))
    n = X.shape[0]
    before_total = counter.total
    before = dict(counter.sections)
    if component == "C":
        fourier.fft(rng.normal(size=cfg.n) + 0j)
        return float(counter.total - before_total)
    cont, disc = build_lmu(LmuConfig(cfg.theta, cfg.q, cfg.q_prime))
    if component == "L_SS":
        for _ in iter_state_space(disc, X):
            pass
    elif component == "L_RK":
        run_rk(cont, X, r=cfg.r)
    elif component == "L_FFT":
        H = impulse_response(disc, n)
        run_fft_conv(H, X)
    elif component in TABLE_ROWS:
        attn, ffn = _random_layer(cfg, rng)
        H = impulse_response(disc, n)
        if component == "ffn":
            blocks.ffn(Tensor(X), ffn)
        else:
            blocks.implicit_attention_sequence(Tensor(X), attn, H)
        return (counter.sections.get(component, 0) - before.get(component, 0)) / n
    else:
        raise ConfigError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    return (counter.total - before_total) / n


@dataclass
class CostRow:
    component: str
    analytic: float
    measured: float
    params: int

    @property
    def ratio(self) -> float:
        return self.measured / self.analytic if self.analytic else math.nan


@dataclass
class CostReport:
    """Table 2 style per-token breakdown of one layer."""

    config: CostConfig
    rows: list[CostRow] = field(default_factory=list)
    softmax: float = 0.0

    @property
    def total_analytic(self) -> float:
        return sum(r.analytic for r in self.rows)

    @property
    def total_measured(self) -> float:
        return sum(r.measured for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    def row(self, name: str) -> CostRow:
        return next(r for r in self.rows if r.component == name)

    def to_csv(self) -> str:
        lines = ["component,analytic_flops_per_token,measured_flops_per_token,ratio,params"]
        for r in self.rows:
            lines.append(f"{r.component},{r.analytic:.6g},{r.measured:.6g},{r.ratio:.4f},{r.params}")
        lines.append(f"total,{self.total_analytic:.6g},{self.total_measured:.6g},"
                     f"{self.total_measured / self.total_analytic:.4f},{self.total_params}")
        return "\n".join(lines)

    def to_table(self) -> str:
        c = self.config
        head = f"n={c.n} d={c.d} d'={c.d_prime} q={c.q} q'={c.q_prime} r={c.r}"
        rows = [("component", "analytic", "measured", "ratio", "params")]
        rows += [(r.component, f"{r.analytic:.6g}", f"{r.measured:.6g}", f"{r.ratio:.4f}", str(r.params)) for r in self.rows]
        rows.append(("total", f"{self.total_analytic:.6g}", f"{self.total_measured:.6g}",
                     f"{self.total_measured / self.total_analytic:.4f}", str(self.total_params)))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        body = ["  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join([head] + body + [f"softmax (reported separately): {self.softmax:.6g}"])


def cost_report(cfg: CostConfig, seed: int = 0) -> CostReport:
    """Measure every Table 2 row in one instrumented forward pass of a layer."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(cfg.n, cfg.d))
    attn, ffn = _random_layer(cfg, rng)
    _, disc = build_lmu(LmuConfig(cfg.theta, cfg.q, cfg.q_prime))
    with precision("f64"):
        H = impulse_response(disc, cfg.n)
        with counting() as c:
            blocks.implicit_attention_sequence(Tensor(X), attn, H)
            blocks.ffn(Tensor(X), ffn)
            sections = dict(c.sections)
    params = {"lmu_qkv": 3 * cfg.q * cfg.q_prime, "qk": 0, "m_prime": 0, "m": cfg.q_prime, "ffn": ffn.n_params()}
    rows = [CostRow(k, predict_flops(k, cfg.n, cfg.d, cfg.d_prime, cfg.q, cfg.q_prime, cfg.r),
                    sections.get(k, 0) / cfg.n, params[k]) for k in TABLE_ROWS]
    return CostReport(cfg, rows, sections.get("softmax", 0) / cfg.n)


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    """Total FLOPs and peak live values per backend across sequence lengths."""

    ns: list[int]
    flops: dict[str, list[int]] = field(default_factory=dict)
    live: dict[str, list[int]] = field(default_factory=dict)

    def slope(self, backend: str) -> float:
        return loglog_slope(self.ns, self.flops[backend])

    def live_slope(self, backend: str) -> float:
        return loglog_slope(self.ns, self.live[backend])

    def to_csv(self) -> str:
        lines = ["backend,n,flops,peak_live"]
        for b in self.flops:
            for n, f, l in zip(self.ns, self.flops[b], self.live[b]):
                lines.append(f"{b},{n},{f},{l}")
        for b in self.flops:
            lines.append(f"{b},slope,{self.slope(b):.4f},")
        return "\n".join(lines)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _run_backend(backend: str, X: np.ndarray, disc, q: int, rng: np.random.Generator) -> None:
    n, d = X.shape
    if backend == "recurrent":
        for _ in iter_state_space(disc, X):  # states are consumed, not stored
            pass
    elif backend == "parallel":
        run_fft_conv(impulse_response(disc, n), X)
    elif backend == "attention":
        W = [Tensor(rng.normal(0.0, 0.1, size=(d, d))) for _ in range(4)]
        blocks.global_causal_attention(Tensor(X), blocks.GlobalAttentionParams(*W), block=max(1, n // 8))
    else:
        raise ConfigError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def scaling_sweep(backends=BACKENDS, ns=(256, 512, 1024, 2048, 4096, 8192), d: int = 4, q: int = 16,
                  theta: float = 64.0, seed: int = 0) -> ScalingReport:
    """Run each backend at every ``n`` with the counter on, one at a time.

    Attention processes queries in ``n / 8`` row blocks so the largest runs fit
    in memory; its live score values still grow as ``n^2``.
    """
    ns = list(ns)
    if len(ns) < 5:
        raise ConfigError(f"a slope fit needs at least 5 sequence lengths, got {len(ns)}")
    _, disc = build_lmu(LmuConfig(theta, q))
    report = ScalingReport(ns)
    with precision("f64"):
        for b in backends:
            report.flops[b], report.live[b] = [], []
            for n in ns:
                rng = np.random.default_rng([seed, n])
                X = rng.normal(size=(n, d))
                with counting() as c:
                    _run_backend(b, X, disc, q, rng)
                    report.flops[b].append(c.total)
                    report.live[b].append(c.peak_live)
    return report
