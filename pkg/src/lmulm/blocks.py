"""Per-layer blocks: implicit self-attention, FFN and global causal attention.

Forward passes are built from the instrumented ops, so they are differentiable
on a tape and their work lands in named counter sections:

``lmu_qkv``  impulse-response reduction, convolutions and the gelu
``qk``       scores ``Q K^T``
``softmax``  shift, exponentials and row sums
``m_prime``  ``softmax(Q K^T) V`` product and normalisation
``m``        projection ``p M'``
``ffn``      feed-forward network
``global``   global causal attention
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lmulm.errors import DimensionError
from lmulm.lmu import ImpulseResponse
from lmulm.numerics import ops
from lmulm.numerics.tensor import Tensor, as_tensor, counter


@dataclass
class ImplicitAttentionParams:
    L1: Tensor
    L2: Tensor
    L3: Tensor
    p: Tensor

    @property
    def q_prime(self) -> int:
        return self.L1.shape[0]

    @property
    def q(self) -> int:
        return self.L1.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"L1": self.L1, "L2": self.L2, "L3": self.L3, "p": self.p}

    def n_params(self) -> int:
        return 3 * self.q * self.q_prime + self.q_prime


@dataclass
class FfnParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def n_params(self) -> int:
        d, dp = self.W1.shape
        return 2 * d * dp + dp + d


@dataclass
class GlobalAttentionParams:
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor

    def __post_init__(self) -> None:
        shapes = {t.shape for t in (self.Wq, self.Wk, self.Wv, self.Wo)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2 or len(set(next(iter(shapes)))) != 1:
            raise DimensionError(f"global attention weights must share one square shape, got {shapes}")

    def tensors(self) -> dict[str, Tensor]:
        return {"Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv, "Wo": self.Wo}

    def n_params(self) -> int:
        return 4 * self.Wq.shape[0] ** 2


def _H(H) -> Tensor:
    if isinstance(H, ImpulseResponse):
        return Tensor(H.H)
    return as_tensor(H)


def reduce_impulse(L, H) -> Tensor:
    """Fold a ``q' x q`` projection into the impulse response: ``L @ H``."""
    L, Ht = as_tensor(L), _H(H)
    if L.ndim != 2 or L.shape[1] != Ht.shape[0]:
        raise DimensionError(f"reduce_impulse: L {L.shape} does not conform with H {Ht.shape}")
    return ops.matmul(L, Ht)


def _attention_core(Q: Tensor, K: Tensor, V: Tensor, p: Tensor) -> Tensor:
    with counter.section("qk"):
        S = ops.matmul(Q, ops.swap_last(K))
    Mp = ops.attend(S, V)
    with counter.section("m"):
        pr = ops.reshape(p, (1, p.shape[-1]))
        return ops.matmul(pr, Mp)


def implicit_attention_step(M, params: ImplicitAttentionParams) -> Tensor:
    """Attention among the ``q'`` projected rows of one ``q x d`` memory matrix.

    ``Q, K, V = gelu(L_i M)``, ``M' = softmax(Q K^T) V`` and the result is
    ``p M'``, a ``d``-vector.  No temperature is applied inside the softmax.
    """
    M = as_tensor(M)
    if M.ndim != 2 or M.shape[0] != params.q:
        raise DimensionError(f"memory matrix {M.shape} does not match order q={params.q}")
    with counter.section("lmu_qkv"):
        Q = ops.gelu(ops.matmul(params.L1, M))
        K = ops.gelu(ops.matmul(params.L2, M))
        V = ops.gelu(ops.matmul(params.L3, M))
    out = _attention_core(Q, K, V, params.p)
    return ops.reshape(out, (M.shape[1],))


def implicit_attention_sequence(X, params: ImplicitAttentionParams, H) -> Tensor:
    """Implicit attention at every step of ``X`` (``n x d``) without forming ``M``.

    Each ``L_i`` is folded into the impulse response first, so ``Q``, ``K`` and
    ``V`` come straight out of three ``q'``-row causal convolutions.
    """
    X = as_tensor(X)
    n, d = X.shape
    Ht = _H(H)
    if Ht.shape[1] < n:
        raise DimensionError(f"impulse response length {Ht.shape[1]} shorter than sequence {n}")
    if Ht.shape[1] != n:
        Ht = Tensor(Ht.data[:, :n])
    with counter.section("lmu_qkv"):
        qkv = [ops.gelu(ops.causal_conv(X, reduce_impulse(L, Ht))) for L in (params.L1, params.L2, params.L3)]
    out = _attention_core(*qkv, params.p)  # (n, 1, d)
    return ops.reshape(out, (n, d))


def ffn(x, params: FfnParams) -> Tensor:
    """``gelu(x W1 + b1) W2 + b2`` over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] != params.W1.shape[0]:
        raise DimensionError(f"ffn: input width {x.shape[-1]} vs W1 {params.W1.shape}")
    with counter.section("ffn"):
        h = ops.gelu(ops.add(ops.matmul(x, params.W1), params.b1))
        return ops.add(ops.matmul(h, params.W2), params.b2)


def causal_mask(n: int, rows: slice | None = None) -> np.ndarray:
    r = np.arange(n)[rows if rows is not None else slice(None)]
    return r[:, None] >= np.arange(n)[None, :]


def global_causal_attention(X, params: GlobalAttentionParams, block: int | None = None) -> Tensor:
    """Single-head scaled dot-product attention with a strict causal mask.

    ``block`` processes queries in chunks of that many rows, which bounds the
    live score matrix at ``block x n`` without changing the result or the
    FLOP tally.
    """
    X = as_tensor(X)
    n, d = X.shape
    with counter.section("global"):
        Q = ops.scale(ops.matmul(X, params.Wq), 1.0 / math.sqrt(d))
        K = ops.matmul(X, params.Wk)
        V = ops.matmul(X, params.Wv)
        Kt = ops.swap_last(K)
        step = n if block is None else block
        parts = []
        for start in range(0, n, step):
            rows = slice(start, min(start + step, n))
            Qb = Q if step >= n else ops.index(Q, rows)
            P = ops.softmax_rows(ops.matmul(Qb, Kt), mask=causal_mask(n, rows))
            counter.note_live(P.size * 2 + 3 * n * d)
            parts.append(ops.matmul(P, V))
        A = parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)
        return ops.matmul(A, params.Wo)

