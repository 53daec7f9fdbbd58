"""Two-stage feature fusion: linear-cost cross-attention exchange, then mixed channel embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from cmx_fusion.numerics import (
    Param,
    ShapeError,
    add,
    as_var,
    concat_last,
    conv1x1,
    dwconv3x3,
    gelu,
    linear,
    matmul,
    mean_pair,
    reshape,
    slice_last,
    softmax_last,
    uniform_init,
)

if TYPE_CHECKING:
    from cmx_fusion.numerics import Rng, Var
    from cmx_fusion.numerics.kernels import Operand
    from cmx_fusion.types import FfmMode, Stream

logger = logging.getLogger(__name__)

FFM_MODES: tuple[FfmMode, ...] = ("full", "stage2_only", "self_attn", "avg")


class HeadContext(NamedTuple):
    """Global context matrix K^T V of one head of one stream."""

    g: Var


@dataclass(eq=False)
class FfmPathParams:
    """Embeddings of one stream: residual and interactive vectors, per-head K/V, output."""

    e_res: Param
    b_res: Param
    e_inter: Param
    b_inter: Param
    k_proj: list[Param]
    v_proj: list[Param]
    out_proj: Param
    b_out: Param

    @classmethod
    def init(cls, channels: int, n_heads: int, rng: Rng, prefix: str) -> FfmPathParams:
        """Draw e_res, e_inter, then (k_proj, v_proj) per head, then out_proj."""
        c = channels
        head_dim = c // n_heads
        e_res = uniform_init(rng, (c, c), c)
        e_inter = uniform_init(rng, (c, c), c)
        k_proj: list[Param] = []
        v_proj: list[Param] = []
        for h in range(n_heads):
            k = uniform_init(rng, (head_dim, head_dim), head_dim)
            v = uniform_init(rng, (head_dim, head_dim), head_dim)
            k_proj.append(Param(k, f"{prefix}.k_proj.{h}"))
            v_proj.append(Param(v, f"{prefix}.v_proj.{h}"))
        out_proj = uniform_init(rng, (2 * c, c), 2 * c)
        return cls(
            e_res=Param(e_res, f"{prefix}.e_res"),
            b_res=Param(np.zeros(c), f"{prefix}.b_res"),
            e_inter=Param(e_inter, f"{prefix}.e_inter"),
            b_inter=Param(np.zeros(c), f"{prefix}.b_inter"),
            k_proj=k_proj,
            v_proj=v_proj,
            out_proj=Param(out_proj, f"{prefix}.out_proj"),
            b_out=Param(np.zeros(c), f"{prefix}.b_out"),
        )

    def params(self) -> list[Param]:
        """Parameters in serialization order."""
        return [
            self.e_res,
            self.b_res,
            self.e_inter,
            self.b_inter,
            *self.k_proj,
            *self.v_proj,
            self.out_proj,
            self.b_out,
        ]


@dataclass(eq=False)
class FfmParams:
    """Weights of one fusion block for stage width C with `n_heads` heads."""

    n_heads: int
    rgb: FfmPathParams
    x: FfmPathParams
    fuse_w1: Param
    fuse_b1: Param
    fuse_dw: Param
    fuse_bdw: Param
    fuse_w2: Param
    fuse_b2: Param

    def __post_init__(self) -> None:
        if self.n_heads < 1:
            raise ValueError(f"n_heads must be at least 1, got {self.n_heads}")
        if self.channels % self.n_heads:
            raise ShapeError(f"{self.n_heads} heads do not divide {self.channels} channels")
        for path in (self.rgb, self.x):
            if len(path.k_proj) != self.n_heads or len(path.v_proj) != self.n_heads:
                raise ShapeError(f"expected {self.n_heads} key/value projections per stream")

    @property
    def channels(self) -> int:
        """Stage width C."""
        return self.fuse_w2.shape[0]

    @property
    def head_dim(self) -> int:
        """Width of one head's slice of the interactive vector."""
        return self.channels // self.n_heads

    @classmethod
    def init(
        cls, channels: int, n_heads: int, rng: Rng, *, shared_paths: bool = False
    ) -> FfmParams:
        """Draw the rgb path, the x path (unless shared), then fuse_w1, fuse_dw, fuse_w2."""
        if n_heads < 1 or channels % n_heads:
            raise ShapeError(f"{n_heads} heads do not divide {channels} channels")
        c = channels
        rgb = FfmPathParams.init(c, n_heads, rng, "rgb")
        x = rgb if shared_paths else FfmPathParams.init(c, n_heads, rng, "x")
        fuse_w1 = uniform_init(rng, (2 * c, c), 2 * c)
        fuse_dw = uniform_init(rng, (3, 3, c), 9)
        fuse_w2 = uniform_init(rng, (c, c), c)
        return cls(
            n_heads=n_heads,
            rgb=rgb,
            x=x,
            fuse_w1=Param(fuse_w1, "fuse_w1"),
            fuse_b1=Param(np.zeros(c), "fuse_b1"),
            fuse_dw=Param(fuse_dw, "fuse_dw"),
            fuse_bdw=Param(np.zeros(c), "fuse_bdw"),
            fuse_w2=Param(fuse_w2, "fuse_w2"),
            fuse_b2=Param(np.zeros(c), "fuse_b2"),
        )

    def path(self, stream: Stream) -> FfmPathParams:
        """Parameters of one stream."""
        if stream == "rgb":
            return self.rgb
        if stream == "x":
            return self.x
        raise ValueError(f"Unknown stream: {stream}")

    def params(self) -> dict[str, Param]:
        """Parameters in serialization order, each object once."""
        ordered = [
            *self.rgb.params(),
            *self.x.params(),
            self.fuse_w1,
            self.fuse_b1,
            self.fuse_dw,
            self.fuse_bdw,
            self.fuse_w2,
            self.fuse_b2,
        ]
        out: dict[str, Param] = {}
        for param in ordered:
            if all(param is not seen for seen in out.values()):
                out[param.name] = param
        return out


def split_vectors(feat: Operand, p: FfmParams, stream: Stream) -> tuple[Var, Var]:
    """Flatten to N x C and embed into the residual and the interactive vector."""
    feat = as_var(feat)
    if len(feat.shape) != 3 or feat.shape[2] != p.channels:  # noqa: PLR2004
        raise ShapeError(f"features {feat.shape} do not match {p.channels} channels")
    height, width, c = feat.shape
    flat = reshape(feat, (height * width, c))
    path = p.path(stream)
    return linear(flat, path.e_res, path.b_res), linear(flat, path.e_inter, path.b_inter)


def head_context(inter_slice: Operand, p: FfmParams, stream: Stream, head: int) -> HeadContext:
    """`G = K^T V` with `K`, `V` the projected head slice; O(N * C_head^2), no N x N matrix."""
    path = p.path(stream)
    keys = matmul(inter_slice, path.k_proj[head])
    values = matmul(inter_slice, path.v_proj[head])
    return HeadContext(matmul(keys, values, transpose_a=True))


def _exchange(rgb_feat: Operand, x_feat: Operand, p: FfmParams, cross: bool) -> tuple[Var, Var]:
    rgb_feat, x_feat = as_var(rgb_feat), as_var(x_feat)
    if rgb_feat.shape != x_feat.shape:
        raise ShapeError(f"rgb features {rgb_feat.shape} and x features {x_feat.shape} differ")
    height, width, c = rgb_feat.shape
    d = p.head_dim
    streams: tuple[Stream, Stream] = ("rgb", "x")

    vectors = {
        stream: split_vectors(feat, p, stream)
        for stream, feat in zip(streams, (rgb_feat, x_feat), strict=True)
    }
    slices = {
        stream: [slice_last(vectors[stream][1], h * d, (h + 1) * d) for h in range(p.n_heads)]
        for stream in streams
    }
    attention = {
        stream: [
            softmax_last(head_context(slices[stream][h], p, stream, h).g)
            for h in range(p.n_heads)
        ]
        for stream in streams
    }

    outputs: list[Var] = []
    for stream, other in zip(streams, ("x", "rgb") if cross else streams, strict=True):
        heads = [matmul(slices[stream][h], attention[other][h]) for h in range(p.n_heads)]
        mixed = concat_last(*heads) if len(heads) > 1 else heads[0]
        path = p.path(stream)
        out = linear(concat_last(mixed, vectors[stream][0]), path.out_proj, path.b_out)
        outputs.append(reshape(out, (height, width, c)))
    return outputs[0], outputs[1]


def cross_exchange(rgb_feat: Operand, x_feat: Operand, p: FfmParams) -> tuple[Var, Var]:
    """Information exchange: each stream attends with the OTHER stream's context matrices."""
    return _exchange(rgb_feat, x_feat, p, cross=True)


def self_exchange(rgb_feat: Operand, x_feat: Operand, p: FfmParams) -> tuple[Var, Var]:
    """Exchange stage without swapping contexts: each stream uses its own."""
    return _exchange(rgb_feat, x_feat, p, cross=False)


def fuse(rgb_ex: Operand, x_ex: Operand, p: FfmParams) -> Var:
    """Mixed channel embedding 2C -> C with a skip-connected depthwise convolution."""
    rgb_ex, x_ex = as_var(rgb_ex), as_var(x_ex)
    if rgb_ex.shape != x_ex.shape:
        raise ShapeError(f"rgb features {rgb_ex.shape} and x features {x_ex.shape} differ")
    z = conv1x1(concat_last(rgb_ex, x_ex), p.fuse_w1, p.fuse_b1)
    mixed = gelu(add(z, dwconv3x3(z, p.fuse_dw, p.fuse_bdw)))
    return conv1x1(mixed, p.fuse_w2, p.fuse_b2)


def ffm(rgb_feat: Operand, x_feat: Operand, p: FfmParams | None, mode: FfmMode = "full") -> Var:
    """Fuse two streams into one feature map.

    Args:
        rgb_feat: H x W x C features of the rgb stream.
        x_feat: H x W x C features of the second stream.
        p: Fusion weights; unused (and may be None) in mode `avg`.
        mode: `full` exchange then fuse, `stage2_only` fuse only, `self_attn` exchange with own
            contexts then fuse, `avg` elementwise mean.

    Raises:
        ValueError: Unknown mode or missing weights.
    """
    if mode == "avg":
        rgb_feat, x_feat = as_var(rgb_feat), as_var(x_feat)
        if rgb_feat.shape != x_feat.shape:
            raise ShapeError(f"rgb features {rgb_feat.shape} and x features {x_feat.shape} differ")
        return mean_pair(rgb_feat, x_feat)
    if mode not in FFM_MODES:
        raise ValueError(f"Unknown fusion mode: {mode}")
    if p is None:
        raise ValueError(f"fusion mode {mode} requires parameters")
    if mode == "stage2_only":
        return fuse(rgb_feat, x_feat, p)
    exchange = cross_exchange if mode == "full" else self_exchange
    return fuse(*exchange(rgb_feat, x_feat, p), p)
