"""Dense-tensor core: kernels with hand-written backward passes, RNG and gradient checks."""

from cmx_fusion.numerics.gradcheck import GradReport, grad_check
from cmx_fusion.numerics.graph import (
    KERNELS,
    Kernel,
    KernelStateError,
    Param,
    ShapeError,
    Var,
    apply,
    as_var,
    zero_grads,
)
from cmx_fusion.numerics.kernels import (
    add,
    channel_mul,
    concat_last,
    conv1x1,
    dwconv3x3,
    gelu,
    global_pool,
    linear,
    matmul,
    mean_pair,
    pointwise,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_last,
    softmax_last,
    space_to_depth,
    spatial_mul,
    upsample_nearest,
)
from cmx_fusion.numerics.profiler import OpProfiler
from cmx_fusion.numerics.rng import Rng, uniform_init

__all__ = [
    "KERNELS",
    "GradReport",
    "Kernel",
    "KernelStateError",
    "OpProfiler",
    "Param",
    "Rng",
    "ShapeError",
    "Var",
    "add",
    "apply",
    "as_var",
    "channel_mul",
    "concat_last",
    "conv1x1",
    "dwconv3x3",
    "gelu",
    "global_pool",
    "grad_check",
    "linear",
    "matmul",
    "mean_pair",
    "pointwise",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "slice_last",
    "softmax_last",
    "space_to_depth",
    "spatial_mul",
    "uniform_init",
    "upsample_nearest",
    "zero_grads",
]
