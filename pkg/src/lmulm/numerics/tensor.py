"""Tensor value type, global precision switch, FLOP counter and gradient tape."""
from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from lmulm.errors import ConfigError, StateError

_PRECISIONS = {"f64": np.float64, "f32": np.float32}
_COMPLEX = {np.float64: np.complex128, np.float32: np.complex64}

_dtype = _PRECISIONS[os.environ.get("LMU_PRECISION", "f64")]


def set_precision(name: str) -> None:
    global _dtype
    if name not in _PRECISIONS:
        raise ConfigError(f"unknown precision {name!r}, expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_precision() -> str:
    return "f64" if _dtype is np.float64 else "f32"


def float_dtype() -> type:
    return _dtype


def complex_dtype() -> type:
    return _COMPLEX[_dtype]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the global float precision."""
    old = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


# ---------------------------------------------------------------------------
# FLOP instrumentation

COMPLEX_MUL_FLOPS = 6
COMPLEX_ADD_FLOPS = 2


class FlopCounter:
    """Tallies floating point work done by instrumented ops.

    Real multiplies and adds count 1 each; complex multiplies and adds are
    tallied separately and weighted by 6 and 2 in :attr:`total`.  Elementwise
    transcendental functions (exp, erf, rsqrt) count 1 per element.

    Work is additionally attributed to the innermost active :meth:`section`
    label, which the cost model uses to split a forward pass into rows.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.enabled = False
        self.reset()

    def reset(self) -> None:
        self.real = 0
        self.complex_mul = 0
        self.complex_add = 0
        self.sections: dict[str, int] = {}
        self.peak_live = 0
        self._stack: list[str] = []

    @property
    def total(self) -> int:
        return self.real + COMPLEX_MUL_FLOPS * self.complex_mul + COMPLEX_ADD_FLOPS * self.complex_add

    def add(self, real: int = 0, cmul: int = 0, cadd: int = 0) -> None:
        if not self.enabled:
            return
        with self._lock:
            self.real += int(real)
            self.complex_mul += int(cmul)
            self.complex_add += int(cadd)
            if self._stack:
                key = self._stack[-1]
                w = int(real) + COMPLEX_MUL_FLOPS * int(cmul) + COMPLEX_ADD_FLOPS * int(cadd)
                self.sections[key] = self.sections.get(key, 0) + w

    def note_live(self, values: int) -> None:
        """Record the number of simultaneously live scalar values."""
        if self.enabled:
            with self._lock:
                self.peak_live = max(self.peak_live, int(values))

    @contextmanager
    def section(self, name: str) -> Iterator[None]:
        self._stack.append(name)
        try:
            yield
        finally:
            self._stack.pop()


counter = FlopCounter()


@contextmanager
def counting() -> Iterator[FlopCounter]:
    """Reset and enable the global counter for the duration of the block."""
    was = counter.enabled
    counter.reset()
    counter.enabled = True
    try:
        yield counter
    finally:
        counter.enabled = was


# ---------------------------------------------------------------------------
# Tensor and gradient tape


class Tensor:
    """Dense array with an optional gradient slot.

    ``data`` is a numpy array in the current global precision.  Tensors created
    with ``requires_grad=True`` are trainable leaves; results of ops on them
    are recorded on the active :class:`GradTape`, if any.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the ops module fills these in
    def __add__(self, other):
        from lmulm.numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from lmulm.numerics import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from lmulm.numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from lmulm.numerics import ops

        return ops.matmul(self, other)

    def __neg__(self):
        from lmulm.numerics import ops

        return ops.scale(self, -1.0)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


@dataclass
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str = ""


@dataclass
class GradTape:
    """Records differentiable ops executed inside ``with tape:``.

    Nodes are appended in execution order, which is already a topological
    order of the graph, so the reverse pass just walks the list backwards.
    """

    nodes: list[Node] = field(default_factory=list)
    _prev: "GradTape | None" = None

    def __enter__(self) -> "GradTape":
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def gradients(self, loss: Tensor) -> dict[int, tuple[Tensor, np.ndarray]]:
        """Gradients of ``loss`` w.r.t. every trainable leaf, keyed by ``id(leaf)``.

        Nothing is written to ``.grad``, so several tapes may run concurrently
        over shared parameters.
        """
        if not self.nodes or not loss.requires_grad:
            raise StateError("backward called on a loss with no recorded tape")
        if loss.size != 1:
            raise StateError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(nd.out) for nd in self.nodes}
        leaves: dict[int, Tensor] = {}
        for nd in reversed(self.nodes):
            g = grads.pop(id(nd.out), None)
            if g is None:
                continue
            for inp, gi in zip(nd.inputs, nd.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        return {k: (leaf, grads[k].astype(leaf.data.dtype, copy=False)) for k, leaf in leaves.items()}

    def backward(self, loss: Tensor) -> list[Tensor]:
        """Accumulate into ``.grad`` on every trainable leaf reached from ``loss``.

        Returns the list of leaves that received a gradient.
        """
        out = []
        for leaf, g in self.gradients(loss).values():
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            out.append(leaf)
        return out


_local = threading.local()


def active_tape() -> GradTape | None:
    return getattr(_local, "tape", None)


def record(out: Tensor, inputs: Sequence[Tensor], backward, op: str = "") -> Tensor:
    """Attach ``out`` to the active tape when any input is trainable."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(out, tuple(inputs), backward, op))
    return out
