"""Cross-modal feature rectification: channel-wise and spatial-wise calibration of two streams."""

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
    channel_mul,
    concat_last,
    conv1x1,
    global_pool,
    linear,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_last,
    spatial_mul,
    uniform_init,
)

if TYPE_CHECKING:
    from cmx_fusion.numerics import Rng, Var
    from cmx_fusion.numerics.kernels import Operand
    from cmx_fusion.types import PoolKind, PoolMode, RectifyMode

logger = logging.getLogger(__name__)

LAMBDAS: dict[RectifyMode, tuple[float, float]] = {
    "both": (0.5, 0.5),
    "channel_only": (1.0, 0.0),
    "spatial_only": (0.0, 1.0),
}
POOLS: dict[PoolMode, tuple[PoolKind, ...]] = {
    "both": ("avg", "max"),
    "avg_only": ("avg",),
    "max_only": ("max",),
}


class ChannelWeights(NamedTuple):
    """Per-channel weights of both streams, each of length C."""

    w_rgb: Var
    w_x: Var


class SpatialWeights(NamedTuple):
    """Per-pixel weight maps of both streams, each H x W."""

    m_rgb: Var
    m_x: Var


@dataclass(eq=False)
class RectifyParams:
    """Weights of one rectification block for stage width C.

    The channel path is an MLP nC -> C -> 2C over the n pooled descriptors (n = 4 with both
    pooling kinds), the spatial path two 1x1 convolutions 2C -> C -> 2.
    """

    mlp_w1: Param
    mlp_b1: Param
    mlp_w2: Param
    mlp_b2: Param
    sconv_w1: Param
    sconv_b1: Param
    sconv_w2: Param
    sconv_b2: Param
    lambda_c: float = 0.5
    lambda_s: float = 0.5
    pool_mode: PoolMode = "both"

    def __post_init__(self) -> None:
        for label, value in (("lambda_c", self.lambda_c), ("lambda_s", self.lambda_s)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{label} must lie in [0, 1], got {value}")
        if self.pool_mode not in POOLS:
            raise ValueError(f"Unknown pool mode: {self.pool_mode}")
        c = self.channels
        n_desc = 2 * len(POOLS[self.pool_mode])
        expected = {
            "mlp_w1": (n_desc * c, c),
            "mlp_b1": (c,),
            "mlp_w2": (c, 2 * c),
            "mlp_b2": (2 * c,),
            "sconv_w1": (2 * c, c),
            "sconv_b1": (c,),
            "sconv_w2": (c, 2),
            "sconv_b2": (2,),
        }
        for label, param in self.params().items():
            if param.shape != expected[label]:
                raise ShapeError(f"{label} has shape {param.shape}, expected {expected[label]}")

    @property
    def channels(self) -> int:
        """Stage width C."""
        return self.mlp_b1.shape[0]

    @classmethod
    def init(
        cls,
        channels: int,
        rng: Rng,
        *,
        lambda_c: float = 0.5,
        lambda_s: float = 0.5,
        pool_mode: PoolMode = "both",
    ) -> RectifyParams:
        """Draw weights in field order (mlp_w1, mlp_w2, sconv_w1, sconv_w2), zero biases."""
        c = channels
        n_in = 2 * len(POOLS[pool_mode]) * c
        mlp_w1 = uniform_init(rng, (n_in, c), n_in)
        mlp_w2 = uniform_init(rng, (c, 2 * c), c)
        sconv_w1 = uniform_init(rng, (2 * c, c), 2 * c)
        sconv_w2 = uniform_init(rng, (c, 2), c)
        return cls(
            mlp_w1=Param(mlp_w1, "mlp_w1"),
            mlp_b1=Param(np.zeros(c), "mlp_b1"),
            mlp_w2=Param(mlp_w2, "mlp_w2"),
            mlp_b2=Param(np.zeros(2 * c), "mlp_b2"),
            sconv_w1=Param(sconv_w1, "sconv_w1"),
            sconv_b1=Param(np.zeros(c), "sconv_b1"),
            sconv_w2=Param(sconv_w2, "sconv_w2"),
            sconv_b2=Param(np.zeros(2), "sconv_b2"),
            lambda_c=lambda_c,
            lambda_s=lambda_s,
            pool_mode=pool_mode,
        )

    @classmethod
    def for_mode(
        cls, channels: int, rng: Rng, mode: RectifyMode = "both", pool_mode: PoolMode = "both"
    ) -> RectifyParams:
        """Initialise with the lambdas of a rectification mode."""
        lambda_c, lambda_s = LAMBDAS[mode]
        return cls.init(channels, rng, lambda_c=lambda_c, lambda_s=lambda_s, pool_mode=pool_mode)

    def params(self) -> dict[str, Param]:
        """Parameters in serialization order."""
        return {
            "mlp_w1": self.mlp_w1,
            "mlp_b1": self.mlp_b1,
            "mlp_w2": self.mlp_w2,
            "mlp_b2": self.mlp_b2,
            "sconv_w1": self.sconv_w1,
            "sconv_b1": self.sconv_b1,
            "sconv_w2": self.sconv_w2,
            "sconv_b2": self.sconv_b2,
        }


def _check_pair(rgb: Var, x: Var) -> None:
    if rgb.shape != x.shape:
        raise ShapeError(f"rgb features {rgb.shape} and x features {x.shape} differ")
    if len(rgb.shape) != 3:  # noqa: PLR2004
        raise ShapeError(f"features must be H x W x C, got {rgb.shape}")


def channel_weights(rgb: Operand, x: Operand, p: RectifyParams) -> ChannelWeights:
    """Sigmoid MLP over the pooled descriptors (avg_rgb, max_rgb, avg_x, max_x)."""
    rgb, x = as_var(rgb), as_var(x)
    _check_pair(rgb, x)
    c = rgb.shape[2]
    if c != p.channels:
        raise ShapeError(f"features have {c} channels, parameters expect {p.channels}")
    pools = [global_pool(kind, feat) for feat in (rgb, x) for kind in POOLS[p.pool_mode]]
    y = reshape(concat_last(*pools), (1, len(pools) * c))
    hidden = relu(linear(y, p.mlp_w1, p.mlp_b1))
    w = reshape(sigmoid(linear(hidden, p.mlp_w2, p.mlp_b2)), (2 * c,))
    return ChannelWeights(slice_last(w, 0, c), slice_last(w, c, 2 * c))


def channel_rectify(rgb: Operand, x: Operand, cw: ChannelWeights) -> tuple[Var, Var]:
    """Rectification terms: each stream receives the other stream scaled by its weights."""
    return channel_mul(x, cw.w_x), channel_mul(rgb, cw.w_rgb)


def spatial_weights(rgb: Operand, x: Operand, p: RectifyParams) -> SpatialWeights:
    """Two 1x1 convolutions with ReLU and sigmoid over the concatenated streams."""
    rgb, x = as_var(rgb), as_var(x)
    _check_pair(rgb, x)
    height, width, _ = rgb.shape
    hidden = relu(conv1x1(concat_last(rgb, x), p.sconv_w1, p.sconv_b1))
    maps = sigmoid(conv1x1(hidden, p.sconv_w2, p.sconv_b2))
    return SpatialWeights(
        reshape(slice_last(maps, 0, 1), (height, width)),
        reshape(slice_last(maps, 1, 2), (height, width)),
    )


def spatial_rectify(rgb: Operand, x: Operand, sw: SpatialWeights) -> tuple[Var, Var]:
    """Rectification terms: each stream receives the other stream scaled by its weight map."""
    return spatial_mul(x, sw.m_x), spatial_mul(rgb, sw.m_rgb)


def cm_frm(rgb: Operand, x: Operand, p: RectifyParams) -> tuple[Var, Var]:
    """Add the lambda-weighted channel and spatial rectification terms to both streams.

    Paths with a zero lambda are not evaluated; with both lambdas zero the inputs are
    returned unchanged.
    """
    rgb, x = as_var(rgb), as_var(x)
    _check_pair(rgb, x)
    rgb_out, x_out = rgb, x
    if p.lambda_c:
        rgb_rec, x_rec = channel_rectify(rgb, x, channel_weights(rgb, x, p))
        rgb_out = add(rgb_out, scale(rgb_rec, p.lambda_c))
        x_out = add(x_out, scale(x_rec, p.lambda_c))
    if p.lambda_s:
        rgb_rec, x_rec = spatial_rectify(rgb, x, spatial_weights(rgb, x, p))
        rgb_out = add(rgb_out, scale(rgb_rec, p.lambda_s))
        x_out = add(x_out, scale(x_rec, p.lambda_s))
    return rgb_out, x_out
