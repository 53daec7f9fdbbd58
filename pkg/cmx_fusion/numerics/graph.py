"""Graph nodes, learnable parameters and the kernel protocol."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, ClassVar

import numpy as np

from cmx_fusion.numerics.profiler import record

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from cmx_fusion.types import Shape, Tensor

logger = logging.getLogger(__name__)

KERNELS: dict[str, type[Kernel]] = {}
_UNSET: Any = object()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class KernelStateError(RuntimeError):
    """Kernel used out of order."""


def as_tensor(value: Any) -> Tensor:
    """Convert to a floating point array, keeping float64 and defaulting to float32."""
    arr = np.asarray(value)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


@dataclass(eq=False)
class Param:
    """A tensor paired with a gradient accumulator."""

    value: Tensor
    name: str = ""
    grad: Tensor = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Shape:
        """Shape of the value."""
        return self.value.shape

    def zero_grad(self) -> None:
        """Reset the gradient to exact zeros."""
        self.grad = np.zeros_like(self.value)

    def var(self) -> Var:
        """Leaf node reading this parameter."""
        return Var(self.value, param=self)


class Var:
    """Node of a computation graph: a value, its producer and its parents."""

    __slots__ = ("data", "grad", "kernel", "param", "parents")

    def __init__(
        self,
        data: Any,
        parents: Sequence[Var] = (),
        kernel: Kernel | None = None,
        param: Param | None = None,
    ) -> None:
        self.data: Tensor = as_tensor(data)
        self.parents = tuple(parents)
        self.kernel = kernel
        self.param = param
        self.grad: Tensor | None = None

    def __repr__(self) -> str:
        source = self.kernel.name if self.kernel else "leaf"
        return f"Var({source}, shape={self.shape})"

    @property
    def shape(self) -> Shape:
        """Shape of the value."""
        return self.data.shape

    def topological_order(self) -> list[Var]:
        """All nodes reachable from this one, parents before children."""
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((parent, False) for parent in reversed(node.parents))
        return order

    def backward(self, upstream: Tensor | None = None) -> None:
        """Replay the graph in reverse topological order.

        Leaf nodes receive a fresh `grad`, parameters accumulate (+=) into `Param.grad`.

        Args:
            upstream: Gradient of the objective w.r.t. this node; ones if omitted.
        """
        if upstream is None:
            upstream = np.ones_like(self.data)
        upstream = np.asarray(upstream, dtype=self.data.dtype)
        if upstream.shape != self.shape:
            raise ShapeError(f"upstream shape {upstream.shape} does not match {self.shape}")

        grads: dict[int, Tensor] = {id(self): upstream}
        for node in reversed(self.topological_order()):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.kernel is None:
                node.grad = grad
                if node.param is not None:
                    node.param.grad += grad
                continue
            for parent, parent_grad in zip(node.parents, node.kernel.backward(grad), strict=True):
                if parent_grad is None:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


class Kernel(ABC):
    """Forward computation with a hand-written backward.

    A kernel instance saves what its backward needs during `forward`; calling `backward`
    before `forward` raises `KernelStateError`. Subclasses register themselves by `name`.
    """

    name: ClassVar[str]

    def __init__(self) -> None:
        self._saved: Any = _UNSET

    def __init_subclass__(cls, **kwargs: Any) -> None:
        super().__init_subclass__(**kwargs)
        if "name" in cls.__dict__:
            KERNELS[cls.name] = cls

    def forward(self, *inputs: Tensor) -> Tensor:
        """Evaluate the kernel and save activations for backward."""
        out, self._saved = self._forward(*inputs)
        record(self.name, self.flops(inputs, out))
        return out

    def backward(self, upstream: Tensor) -> tuple[Tensor | None, ...]:
        """Gradients w.r.t. every input, in input order."""
        if self._saved is _UNSET:
            raise KernelStateError(f"backward of {self.name} called before forward")
        return self._backward(upstream, self._saved)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        """Floating point operations of one forward call."""
        del inputs
        return int(out.size)

    @abstractmethod
    def _forward(self, *inputs: Tensor) -> tuple[Tensor, Any]: ...

    @abstractmethod
    def _backward(self, upstream: Tensor, saved: Any) -> tuple[Tensor | None, ...]: ...


def as_var(value: Var | Param | Any) -> Var:
    """Wrap tensors and parameters as graph nodes."""
    if isinstance(value, Var):
        return value
    if isinstance(value, Param):
        return value.var()
    return Var(value)


def apply(kernel: Kernel, *inputs: Var | Param | Any) -> Var:
    """Run `kernel` forward on graph nodes and record it in the graph."""
    parents = [as_var(inp) for inp in inputs]
    out = kernel.forward(*(parent.data for parent in parents))
    return Var(out, parents, kernel)


def zero_grads(params: Iterable[Param]) -> None:
    """Reset the gradients of all parameters."""
    for param in params:
        param.zero_grad()
