"""Dense tensor arithmetic, radix-2 FFT and FLOP instrumentation."""
from lmulm.numerics.fourier import fft, ifft, irfft, rfft
from lmulm.numerics.ops import (
    add,
    attend,
    causal_conv,
    concat,
    cross_entropy,
    embedding,
    index,
    gelu,
    layer_norm,
    matmul,
    matmul_array,
    mul,
    reshape,
    scale,
    softmax_rows,
    sub,
    sum_all,
    swap_last,
)
from lmulm.numerics.tensor import (
    FlopCounter,
    GradTape,
    Tensor,
    as_tensor,
    counter,
    counting,
    float_dtype,
    get_precision,
    precision,
    set_precision,
)

__all__ = [
    "FlopCounter", "GradTape", "Tensor", "add", "as_tensor", "attend", "causal_conv", "concat",
    "counter", "counting", "cross_entropy", "embedding", "fft", "float_dtype", "gelu", "index",
    "get_precision", "ifft", "irfft", "layer_norm", "matmul", "matmul_array", "mul", "precision",
    "reshape", "rfft", "scale", "set_precision", "softmax_rows", "sub", "sum_all", "swap_last",
]
