"""Autoregressive LMU language model: embeddings, stacked blocks, tied LM head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lmulm import blocks
from lmulm.errors import ConfigError, InputError, SizingError
from lmulm.lmu import ImpulseResponse, LmuConfig, build_lmu, impulse_response
from lmulm.numerics import ops
from lmulm.numerics.fourier import is_pow2
from lmulm.numerics.tensor import Tensor, float_dtype

VARIANTS = ("lmu", "lmu_global")
EMBEDDING_NAMES = ("embed.tokens", "embed.positions")
INIT_STD = 0.02


def embed_dim_for(target_N: float) -> int:
    """Embedding width for a non-embedding parameter budget: ``sqrt(N / 24)``.

    Rounded to the nearest even integer, never below 2.
    """
    if target_N < 24:
        raise SizingError(f"parameter budget must be >= 24, got {target_N}")
    return max(2, 2 * round(math.sqrt(target_N / 24) / 2))


@dataclass
class ModelConfig:
    n: int = 128
    vocab: int = 257
    d: int = 64
    layers: int = 2
    variant: str = "lmu"
    q: int = 64
    q_prime: int | None = None
    theta: float | None = None
    d_prime: int | None = None
    norms: bool = True
    target_N: int | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not is_pow2(self.n) or self.n < 2:
            raise ConfigError(f"sequence length must be a power of two >= 2, got {self.n}")
        if self.target_N is not None:
            self.d = embed_dim_for(self.target_N)
        if self.d < 1 or self.layers < 1 or self.vocab < 2:
            raise ConfigError(f"invalid sizes d={self.d}, layers={self.layers}, vocab={self.vocab}")
        if self.d_prime is None:
            self.d_prime = 4 * self.d
        if self.theta is None:
            self.theta = float(self.n)
        self.lmu  # validates q, q_prime and theta

    @property
    def lmu(self) -> LmuConfig:
        cfg = LmuConfig(theta=self.theta, q=self.q, q_prime=self.q_prime)
        self.q_prime = cfg.q_prime
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    """Named trainable tensors; the LM head reuses ``embed.tokens``."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def ffn(self, prefix: str) -> blocks.FfnParams:
        t = self.tensors
        return blocks.FfnParams(t[f"{prefix}.W1"], t[f"{prefix}.b1"], t[f"{prefix}.W2"], t[f"{prefix}.b2"])

    def attention(self, prefix: str) -> blocks.ImplicitAttentionParams:
        t = self.tensors
        return blocks.ImplicitAttentionParams(t[f"{prefix}.L1"], t[f"{prefix}.L2"], t[f"{prefix}.L3"], t[f"{prefix}.p"])

    def global_attention(self, prefix: str) -> blocks.GlobalAttentionParams:
        t = self.tensors
        return blocks.GlobalAttentionParams(t[f"{prefix}.Wq"], t[f"{prefix}.Wk"], t[f"{prefix}.Wv"], t[f"{prefix}.Wo"])

    def norm(self, prefix: str) -> tuple[Tensor, Tensor] | None:
        g = self.tensors.get(f"{prefix}.g")
        return None if g is None else (g, self.tensors[f"{prefix}.b"])


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Normal(0, 0.02) weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    d, dp, q, qp = cfg.d, cfg.d_prime, cfg.q, cfg.lmu.q_prime
    t: dict[str, Tensor] = {}

    def normal(name, *shape):
        t[name] = Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True, name=name)

    def const(name, value, *shape):
        t[name] = Tensor(np.full(shape, value), requires_grad=True, name=name)

    def norm(prefix):
        if cfg.norms:
            const(f"{prefix}.g", 1.0, d)
            const(f"{prefix}.b", 0.0, d)

    def ffn(prefix):
        normal(f"{prefix}.W1", d, dp)
        const(f"{prefix}.b1", 0.0, dp)
        normal(f"{prefix}.W2", dp, d)
        const(f"{prefix}.b2", 0.0, d)

    normal("embed.tokens", cfg.vocab, d)
    normal("embed.positions", cfg.n, d)
    for i in range(cfg.layers):
        pre = f"layers.{i}"
        norm(f"{pre}.ln_pre")
        if cfg.variant == "lmu":
            ffn(f"{pre}.pre")
        else:
            for w in ("Wq", "Wk", "Wv", "Wo"):
                normal(f"{pre}.pre.{w}", d, d)
        norm(f"{pre}.ln_lmu")
        for w in ("L1", "L2", "L3"):
            normal(f"{pre}.attn.{w}", qp, q)
        normal(f"{pre}.attn.p", qp)
        norm(f"{pre}.ln_post")
        ffn(f"{pre}.post")
    norm("ln_final")
    return ModelParams(t)


def count_params(params: ModelParams) -> tuple[int, int]:
    """``(non-embedding, total)`` trainable parameter counts.

    The LM head is tied to the token embedding and is not counted again; the
    frozen LMU matrices are not parameters at all.
    """
    total = sum(p.size for p in params.tensors.values())
    embed = sum(params.tensors[k].size for k in EMBEDDING_NAMES if k in params.tensors)
    return total - embed, total


class LanguageModel:
    """Stacked LMU + implicit-attention blocks over a learned embedding.

    Each layer is pre-norm residual::

        h += PreBlock(norm(h))            # FFN, or global attention
        h += ImplicitAttention(norm(h))   # LMU memory + attention over q' rows
        h += FFN(norm(h))
    """

    def __init__(self, cfg: ModelConfig, params: ModelParams | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        _, self.system = build_lmu(cfg.lmu)
        self._H: dict[str, ImpulseResponse] = {}

    @property
    def H(self) -> ImpulseResponse:
        """Frozen impulse response in the current precision."""
        key = np.dtype(float_dtype()).name
        if key not in self._H:
            self._H[key] = impulse_response(self.system, self.cfg.n)
        return self._H[key]

    def cast(self) -> None:
        """Convert every parameter to the current global precision."""
        for p in self.params.tensors.values():
            p.data = p.data.astype(float_dtype())

    def _norm(self, h: Tensor, prefix: str) -> Tensor:
        gb = self.params.norm(prefix)
        return h if gb is None else ops.layer_norm(h, *gb)

    def forward(self, tokens) -> Tensor:
        tokens = np.asarray(tokens)
        n = tokens.shape[0]
        if tokens.ndim != 1 or n > self.cfg.n or n < 1:
            raise InputError(f"expected a 1-d token sequence of length <= {self.cfg.n}, got shape {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab:
            raise InputError(f"token ids must lie in [0, {self.cfg.vocab}), got range [{tokens.min()}, {tokens.max()}]")
        P = self.params
        E = P["embed.tokens"]
        pos = P["embed.positions"] if n == self.cfg.n else ops.index(P["embed.positions"], slice(0, n))
        h = ops.add(ops.embedding(E, tokens), pos)
        Ht = Tensor(self.H.H[:, :n])
        for i in range(self.cfg.layers):
            pre = f"layers.{i}"
            u = self._norm(h, f"{pre}.ln_pre")
            if self.cfg.variant == "lmu":
                h = ops.add(h, blocks.ffn(u, P.ffn(f"{pre}.pre")))
            else:
                h = ops.add(h, blocks.global_causal_attention(u, P.global_attention(f"{pre}.pre")))
            u = self._norm(h, f"{pre}.ln_lmu")
            h = ops.add(h, blocks.implicit_attention_sequence(u, P.attention(f"{pre}.attn"), Ht))
            u = self._norm(h, f"{pre}.ln_post")
            h = ops.add(h, blocks.ffn(u, P.ffn(f"{pre}.post")))
        h = self._norm(h, "ln_final")
        return ops.matmul(h, ops.swap_last(E))

    __call__ = forward

    def loss(self, tokens, targets, mask=None) -> tuple[Tensor, np.ndarray]:
        return per_token_loss(self.forward(tokens), targets, mask)


def per_token_loss(logits, targets, mask=None) -> tuple[Tensor, np.ndarray]:
    """Cross-entropy in nats: ``(mean over unmasked positions, per-position vector)``."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise InputError(f"logits {logits.shape} and targets {targets.shape} do not conform")
    return ops.cross_entropy(logits, targets, mask)
