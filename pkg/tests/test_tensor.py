import threading

import numpy as np
import pytest

from lmulm.errors import ConfigError, StateError
from lmulm.numerics import ops
from lmulm.numerics.tensor import (
    FlopCounter,
    GradTape,
    Tensor,
    counter,
    counting,
    float_dtype,
    get_precision,
    precision,
    set_precision,
)


def test_tensor_shape_and_size():
    t = Tensor(np.zeros((2, 3)))
    assert t.shape == (2, 3) and t.size == 6 and t.ndim == 2


def test_precision_switch():
    with precision("f32"):
        assert float_dtype() is np.float32
        assert Tensor([1.0]).data.dtype == np.float32
    assert get_precision() == "f64"
    with pytest.raises(ConfigError):
        set_precision("f16")


def test_counter_disabled_by_default():
    ops.matmul(np.eye(2), np.eye(2))
    assert not counter.enabled


def test_counter_weights():
    c = FlopCounter()
    c.enabled = True
    c.add(real=3, cmul=2, cadd=5)
    assert c.total == 3 + 12 + 10


def test_sections_innermost_wins():
    with counting() as c:
        with c.section("outer"):
            c.add(real=1)
            with c.section("inner"):
                c.add(real=10)
    assert c.sections == {"outer": 1, "inner": 10}


def test_counter_thread_safe():
    with counting() as c:
        def work():
            for _ in range(1000):
                c.add(real=1)

        ts = [threading.Thread(target=work) for _ in range(8)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
    assert c.total == 8000


def test_backward_sum_of_squares(rng):
    w = Tensor(rng.normal(size=5), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum_all(ops.mul(w, w))
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, 2 * w.data)


def test_backward_linear(rng):
    c = rng.normal(size=(1, 4))
    w = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum_all(ops.matmul(c, w))
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, c.T)


def test_non_parameters_untouched(rng):
    x = Tensor(rng.normal(size=3))
    w = Tensor(rng.normal(size=3), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum_all(ops.mul(x, w))
    tape.backward(loss)
    assert x.grad is None and w.grad is not None


def test_backward_without_tape_raises(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    loss = ops.sum_all(w)
    with pytest.raises(StateError):
        GradTape().backward(loss)


def test_backward_needs_scalar(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    with GradTape() as tape:
        y = ops.scale(w, 2.0)
    with pytest.raises(StateError):
        tape.backward(y)


def test_reused_leaf_accumulates(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum_all(ops.add(ops.scale(w, 2.0), ops.scale(w, 3.0)))
    tape.backward(loss)
    np.testing.assert_allclose(w.grad, np.full(3, 5.0))
