"""Forward kernels with hand-written backward passes, and their graph-level wrappers."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Any

import numpy as np

from cmx_fusion.numerics.graph import Kernel, Param, ShapeError, Var, apply, as_var

if TYPE_CHECKING:
    from collections.abc import Sequence

    from cmx_fusion.types import PointwiseKind, PoolKind, Shape, Tensor

GELU_SCALE = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715

Operand = Var | Param | Any


def _sigmoid(x: Tensor) -> Tensor:
    # both branches only ever exponentiate non-positive values
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


class Sigmoid(Kernel):
    """Logistic function."""

    name = "sigmoid"

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        y = _sigmoid(x)
        return y, y

    def _backward(self, upstream: Tensor, y: Tensor) -> tuple[Tensor]:
        return (upstream * y * (1 - y),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 4 * out.size


class Relu(Kernel):
    """Rectified linear unit."""

    name = "relu"

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return np.maximum(x, 0), x > 0

    def _backward(self, upstream: Tensor, mask: Tensor) -> tuple[Tensor]:
        return (upstream * mask,)


class Gelu(Kernel):
    """GELU with the tanh approximation."""

    name = "gelu"

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        t = np.tanh(GELU_SCALE * (x + GELU_CUBIC * x**3))
        return 0.5 * x * (1 + t), (x, t)

    def _backward(self, upstream: Tensor, saved: tuple[Tensor, Tensor]) -> tuple[Tensor]:
        x, t = saved
        inner = GELU_SCALE * (1 + 3 * GELU_CUBIC * x**2)
        return (upstream * (0.5 * (1 + t) + 0.5 * x * (1 - t**2) * inner),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 8 * out.size


POINTWISE: dict[str, type[Kernel]] = {"sigmoid": Sigmoid, "relu": Relu, "gelu": Gelu}


class SoftmaxLast(Kernel):
    """Softmax over the last axis, stabilised by max subtraction."""

    name = "softmax_last"

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def _backward(self, upstream: Tensor, y: Tensor) -> tuple[Tensor]:
        return (y * (upstream - (upstream * y).sum(axis=-1, keepdims=True)),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 4 * out.size


class MatMul(Kernel):
    """Matrix product `a @ b`, or `a.T @ b` when `transpose_a`."""

    name = "matmul"

    def __init__(self, transpose_a: bool = False) -> None:
        super().__init__()
        self.transpose_a = transpose_a

    def _forward(self, a: Tensor, b: Tensor) -> tuple[Tensor, Any]:
        left = a.T if self.transpose_a else a
        if a.ndim != 2 or b.ndim != 2 or left.shape[1] != b.shape[0]:  # noqa: PLR2004
            raise ShapeError(f"cannot multiply {left.shape} by {b.shape}")
        return left @ b, (a, b)

    def _backward(self, upstream: Tensor, saved: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        a, b = saved
        if self.transpose_a:
            return b @ upstream.T, a @ upstream
        return upstream @ b.T, a.T @ upstream

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        a = inputs[0]
        inner = a.shape[0] if self.transpose_a else a.shape[1]
        return 2 * out.size * inner


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"input {x.shape} incompatible with weight {w.shape} and bias {b.shape}")
    return x @ w + b


class Linear(Kernel):
    """Row-wise affine map `x @ w + b` on an N x Cin matrix."""

    name = "linear"

    def _forward(self, x: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Any]:
        if x.ndim != 2:  # noqa: PLR2004
            raise ShapeError(f"linear expects an N x Cin matrix, got {x.shape}")
        return _affine(x, w, b), (x, w)

    def _backward(
        self, upstream: Tensor, saved: tuple[Tensor, Tensor]
    ) -> tuple[Tensor, Tensor, Tensor]:
        x, w = saved
        return upstream @ w.T, x.T @ upstream, upstream.sum(axis=0)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 2 * out.size * inputs[1].shape[0]


class Conv1x1(Kernel):
    """Per-pixel affine map of an H x W x Cin tensor, evaluated as a flattened linear map."""

    name = "conv1x1"

    def _forward(self, x: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Any]:
        if x.ndim != 3:  # noqa: PLR2004
            raise ShapeError(f"conv1x1 expects an H x W x C tensor, got {x.shape}")
        height, width, channels = x.shape
        flat = x.reshape(height * width, channels)
        out = _affine(flat, w, b)
        return out.reshape(height, width, -1), (flat, w)

    def _backward(
        self, upstream: Tensor, saved: tuple[Tensor, Tensor]
    ) -> tuple[Tensor, Tensor, Tensor]:
        flat, w = saved
        height, width, _ = upstream.shape
        up = upstream.reshape(height * width, -1)
        return (up @ w.T).reshape(height, width, -1), flat.T @ up, up.sum(axis=0)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 2 * out.size * inputs[1].shape[0]


class DWConv3x3(Kernel):
    """Depthwise 3x3 cross-correlation with zero padding of one."""

    name = "dwconv3x3"

    def _forward(self, x: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Any]:
        if x.ndim != 3 or w.shape != (3, 3, x.shape[2]) or b.shape != (x.shape[2],):  # noqa: PLR2004
            raise ShapeError(f"input {x.shape} incompatible with weight {w.shape} and bias {b.shape}")
        height, width, _ = x.shape
        padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        out = np.zeros_like(x)
        # taps in fixed row-major order
        for i in range(3):
            for j in range(3):
                out += w[i, j] * padded[i : i + height, j : j + width]
        return out + b, (padded, w)

    def _backward(
        self, upstream: Tensor, saved: tuple[Tensor, Tensor]
    ) -> tuple[Tensor, Tensor, Tensor]:
        padded, w = saved
        height, width, _ = upstream.shape
        d_padded = np.zeros_like(padded)
        d_w = np.zeros_like(w)
        for i in range(3):
            for j in range(3):
                d_padded[i : i + height, j : j + width] += w[i, j] * upstream
                d_w[i, j] = (upstream * padded[i : i + height, j : j + width]).sum(axis=(0, 1))
        return d_padded[1:-1, 1:-1], d_w, upstream.sum(axis=(0, 1))

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 18 * out.size


class GlobalPool(Kernel):
    """Per-channel average or maximum over all spatial positions."""

    name = "global_pool"

    def __init__(self, kind: PoolKind) -> None:
        super().__init__()
        if kind not in ("avg", "max"):
            raise ValueError(f"Unknown pooling kind: {kind}")
        self.kind = kind

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        if x.ndim != 3:  # noqa: PLR2004
            raise ShapeError(f"global_pool expects an H x W x C tensor, got {x.shape}")
        flat = x.reshape(-1, x.shape[2])
        if self.kind == "avg":
            return flat.mean(axis=0), x.shape
        # first maximal position wins ties
        idx = flat.argmax(axis=0)
        return flat[idx, np.arange(flat.shape[1])], (x.shape, idx)

    def _backward(self, upstream: Tensor, saved: Any) -> tuple[Tensor]:
        if self.kind == "avg":
            shape = saved
            scale = 1 / (shape[0] * shape[1])
            return (np.broadcast_to(upstream * scale, shape).astype(upstream.dtype),)
        shape, idx = saved
        grad = np.zeros((shape[0] * shape[1], shape[2]), dtype=upstream.dtype)
        grad[idx, np.arange(shape[2])] = upstream
        return (grad.reshape(shape),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return int(inputs[0].size)


class Add(Kernel):
    """Elementwise sum of equally shaped tensors."""

    name = "add"

    def _forward(self, a: Tensor, b: Tensor) -> tuple[Tensor, Any]:
        if a.shape != b.shape:
            raise ShapeError(f"cannot add {a.shape} and {b.shape}")
        return a + b, None

    def _backward(self, upstream: Tensor, saved: None) -> tuple[Tensor, Tensor]:
        return upstream, upstream


class Scale(Kernel):
    """Multiplication by a fixed scalar."""

    name = "scale"

    def __init__(self, factor: float) -> None:
        super().__init__()
        self.factor = factor

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return x * self.factor, None

    def _backward(self, upstream: Tensor, saved: None) -> tuple[Tensor]:
        return (upstream * self.factor,)


class ChannelMul(Kernel):
    """Scale every channel of an H x W x C tensor by a per-channel weight."""

    name = "channel_mul"

    def _forward(self, x: Tensor, w: Tensor) -> tuple[Tensor, Any]:
        if x.ndim != 3 or w.shape != (x.shape[2],):  # noqa: PLR2004
            raise ShapeError(f"channel weights {w.shape} do not match features {x.shape}")
        return x * w, (x, w)

    def _backward(self, upstream: Tensor, saved: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        x, w = saved
        return upstream * w, (upstream * x).sum(axis=(0, 1))


class SpatialMul(Kernel):
    """Scale every pixel of an H x W x C tensor by an H x W weight map."""

    name = "spatial_mul"

    def _forward(self, x: Tensor, m: Tensor) -> tuple[Tensor, Any]:
        if x.ndim != 3 or m.shape != x.shape[:2]:  # noqa: PLR2004
            raise ShapeError(f"weight map {m.shape} does not match features {x.shape}")
        return x * m[..., None], (x, m)

    def _backward(self, upstream: Tensor, saved: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        x, m = saved
        return upstream * m[..., None], (upstream * x).sum(axis=-1)


class ConcatLast(Kernel):
    """Concatenation along the last axis."""

    name = "concat_last"

    def _forward(self, *xs: Tensor) -> tuple[Tensor, Any]:
        if len({x.shape[:-1] for x in xs}) != 1:
            raise ShapeError(f"cannot concatenate {[x.shape for x in xs]}")
        return np.concatenate(xs, axis=-1), np.cumsum([x.shape[-1] for x in xs])[:-1]

    def _backward(self, upstream: Tensor, splits: Tensor) -> tuple[Tensor, ...]:
        return tuple(np.split(upstream, splits, axis=-1))

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 0


class SliceLast(Kernel):
    """Contiguous slice `[start:stop]` of the last axis."""

    name = "slice_last"

    def __init__(self, start: int, stop: int) -> None:
        super().__init__()
        self.start, self.stop = start, stop

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        if not 0 <= self.start < self.stop <= x.shape[-1]:
            raise ShapeError(f"slice [{self.start}:{self.stop}] out of range for {x.shape}")
        return x[..., self.start : self.stop], x.shape

    def _backward(self, upstream: Tensor, shape: Shape) -> tuple[Tensor]:
        grad = np.zeros(shape, dtype=upstream.dtype)
        grad[..., self.start : self.stop] = upstream
        return (grad,)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 0


class Reshape(Kernel):
    """Row-major reshape."""

    name = "reshape"

    def __init__(self, shape: Shape) -> None:
        super().__init__()
        self.shape = shape

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        if math.prod(self.shape) != x.size:
            raise ShapeError(f"cannot reshape {x.shape} to {self.shape}")
        return x.reshape(self.shape), x.shape

    def _backward(self, upstream: Tensor, shape: Shape) -> tuple[Tensor]:
        return (upstream.reshape(shape),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 0


class SpaceToDepth(Kernel):
    """Fold each s x s block of pixels into the channel axis."""

    name = "space_to_depth"

    def __init__(self, stride: int) -> None:
        super().__init__()
        self.stride = stride

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        s = self.stride
        height, width, channels = x.shape
        if height % s or width % s:
            raise ShapeError(f"spatial size {x.shape[:2]} not divisible by stride {s}")
        blocks = x.reshape(height // s, s, width // s, s, channels).transpose(0, 2, 1, 3, 4)
        return blocks.reshape(height // s, width // s, s * s * channels), x.shape

    def _backward(self, upstream: Tensor, shape: Shape) -> tuple[Tensor]:
        s = self.stride
        height, width, channels = shape
        blocks = upstream.reshape(height // s, width // s, s, s, channels).transpose(0, 2, 1, 3, 4)
        return (blocks.reshape(shape),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 0


class UpsampleNearest(Kernel):
    """Nearest-neighbour spatial upsampling by an integer factor."""

    name = "upsample_nearest"

    def __init__(self, factor: int) -> None:
        super().__init__()
        self.factor = factor

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        f = self.factor
        return x.repeat(f, axis=0).repeat(f, axis=1), x.shape

    def _backward(self, upstream: Tensor, shape: Shape) -> tuple[Tensor]:
        f = self.factor
        height, width, channels = shape
        return (upstream.reshape(height, f, width, f, channels).sum(axis=(1, 3)),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 0


def pointwise(kind: PointwiseKind, x: Operand) -> Var:
    """Elementwise sigmoid, relu or gelu."""
    try:
        kernel = POINTWISE[kind]
    except KeyError:
        raise ValueError(f"Unknown pointwise kind: {kind}") from None
    return apply(kernel(), x)


def sigmoid(x: Operand) -> Var:
    """Elementwise logistic function."""
    return apply(Sigmoid(), x)


def relu(x: Operand) -> Var:
    """Elementwise `max(x, 0)`."""
    return apply(Relu(), x)


def gelu(x: Operand) -> Var:
    """Elementwise tanh-approximated GELU."""
    return apply(Gelu(), x)


def softmax_last(x: Operand) -> Var:
    """Softmax over the last axis."""
    return apply(SoftmaxLast(), x)


def matmul(a: Operand, b: Operand, transpose_a: bool = False) -> Var:
    """Matrix product, optionally of the transposed left operand."""
    return apply(MatMul(transpose_a), a, b)


def linear(x: Operand, w: Operand, b: Operand) -> Var:
    """`x @ w + b` for an N x Cin input."""
    return apply(Linear(), x, w, b)


def conv1x1(x: Operand, w: Operand, b: Operand) -> Var:
    """Per-pixel `x @ w + b` for an H x W x Cin input."""
    return apply(Conv1x1(), x, w, b)


def dwconv3x3(x: Operand, w: Operand, b: Operand) -> Var:
    """Depthwise zero-padded 3x3 convolution."""
    return apply(DWConv3x3(), x, w, b)


def global_pool(kind: PoolKind, x: Operand) -> Var:
    """Reduce H x W x C to C by average or maximum."""
    return apply(GlobalPool(kind), x)


def add(a: Operand, b: Operand) -> Var:
    """Elementwise sum."""
    return apply(Add(), a, b)


def scale(x: Operand, factor: float) -> Var:
    """Multiply by a scalar constant."""
    return apply(Scale(factor), x)


def mean_pair(a: Operand, b: Operand) -> Var:
    """`(a + b) * 0.5`."""
    return scale(add(a, b), 0.5)


def channel_mul(x: Operand, w: Operand) -> Var:
    """Channel-wise multiplication by a length-C weight."""
    return apply(ChannelMul(), x, w)


def spatial_mul(x: Operand, m: Operand) -> Var:
    """Spatial multiplication by an H x W weight map broadcast over channels."""
    return apply(SpatialMul(), x, m)


def concat_last(*xs: Operand) -> Var:
    """Concatenate along the channel axis."""
    return apply(ConcatLast(), *xs)


def slice_last(x: Operand, start: int, stop: int) -> Var:
    """Slice the channel axis."""
    return apply(SliceLast(start, stop), x)


def reshape(x: Operand, shape: Shape) -> Var:
    """Row-major reshape."""
    return apply(Reshape(tuple(shape)), x)


def space_to_depth(x: Operand, stride: int) -> Var:
    """Fold stride x stride pixel blocks into channels."""
    return apply(SpaceToDepth(stride), x)


def upsample_nearest(x: Operand, factor: int) -> Var:
    """Repeat every pixel `factor` times along both spatial axes."""
    if factor == 1:
        return as_var(x)
    return apply(UpsampleNearest(factor), x)
