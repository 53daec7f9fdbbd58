"""Registered gradient-check cases: every kernel, rectification, fusion and the whole network."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cmx_fusion.config import AblationConfig, NetworkConfig
from cmx_fusion.fusion import FFM_MODES, FfmParams, ffm
from cmx_fusion.network import NetworkParams, forward
from cmx_fusion.numerics import (
    Param,
    Rng,
    add,
    channel_mul,
    concat_last,
    conv1x1,
    dwconv3x3,
    gelu,
    global_pool,
    grad_check,
    linear,
    matmul,
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
from cmx_fusion.numerics.gradcheck import END_TO_END_TOLERANCE
from cmx_fusion.rectify import LAMBDAS, POOLS, RectifyParams, cm_frm
from cmx_fusion.register import register
from cmx_fusion.training import cross_entropy

if TYPE_CHECKING:
    from collections.abc import Callable

    from cmx_fusion.numerics import GradReport, Var
    from cmx_fusion.types import FfmMode, PoolMode, RectifyMode, Shape, Tensor

# 16 x 16 inputs reach a 1 x 1 last stage with these strides
GRADCHECK_NETWORK = NetworkConfig(
    channels=(8, 16, 32, 64),
    strides=(2, 2, 2, 2),
    heads=(1, 2, 4, 8),
    num_classes=3,
    decoder_dim=16,
)
GRADCHECK_SIZE = 16
NETWORK_PROBES = 3


def _normals(seed: int, *shapes: Shape) -> list[Tensor]:
    rng = Rng(seed)
    return [rng.normal(shape) for shape in shapes]


def _params(seed: int, **shapes: Shape) -> dict[str, Param]:
    rng = Rng(seed)
    return {name: Param(0.5 * rng.normal(shape), name) for name, shape in shapes.items()}


def _kernel_case(
    name: str, f: Callable[..., Var], *shapes: Shape, seed: int = 1
) -> Callable[[], GradReport]:
    def case() -> GradReport:
        return grad_check(f, [], _normals(seed, *shapes), name=name)

    case.__name__ = f"check_{name}"
    return case


for _name, _f, _shapes in (
    ("sigmoid", sigmoid, [(3, 4)]),
    ("relu", relu, [(3, 4)]),
    ("gelu", gelu, [(3, 4)]),
    ("softmax_last", softmax_last, [(3, 5)]),
    ("matmul", matmul, [(4, 3), (3, 5)]),
    ("matmul_transposed", lambda a, b: matmul(a, b, transpose_a=True), [(4, 3), (4, 5)]),
    ("global_pool_avg", lambda x: global_pool("avg", x), [(3, 3, 4)]),
    ("global_pool_max", lambda x: global_pool("max", x), [(3, 3, 4)]),
    ("add", add, [(2, 3), (2, 3)]),
    ("scale", lambda x: scale(x, 0.7), [(2, 3)]),
    ("channel_mul", channel_mul, [(3, 3, 4), (4,)]),
    ("spatial_mul", spatial_mul, [(3, 3, 4), (3, 3)]),
    ("concat_last", concat_last, [(2, 2, 3), (2, 2, 2)]),
    ("slice_last", lambda x: slice_last(x, 1, 4), [(2, 2, 5)]),
    ("reshape", lambda x: reshape(x, (6, 4)), [(2, 3, 4)]),
    ("space_to_depth", lambda x: space_to_depth(x, 2), [(4, 4, 2)]),
    ("upsample_nearest", lambda x: upsample_nearest(x, 2), [(2, 2, 3)]),
):
    register(_kernel_case(_name, _f, *_shapes))


@register
def check_linear() -> GradReport:
    p = _params(2, w=(3, 5), b=(5,))
    return grad_check(lambda x: linear(x, p["w"], p["b"]), p, _normals(3, (4, 3)), name="linear")


@register
def check_conv1x1() -> GradReport:
    p = _params(4, w=(2, 4), b=(4,))
    return grad_check(
        lambda x: conv1x1(x, p["w"], p["b"]), p, _normals(5, (3, 3, 2)), name="conv1x1"
    )


@register
def check_dwconv3x3() -> GradReport:
    p = _params(6, w=(3, 3, 3), b=(3,))
    return grad_check(
        lambda x: dwconv3x3(x, p["w"], p["b"]), p, _normals(7, (4, 4, 3)), name="dwconv3x3"
    )


@register
def check_cross_entropy() -> GradReport:
    labels = np.array([[0, 1, 2], [3, 255, 1], [2, 0, 3]])
    return grad_check(
        lambda logits: cross_entropy(logits, labels),
        [],
        _normals(8, (3, 3, 4)),
        name="cross_entropy",
    )


def _cm_frm_case(rectify_mode: RectifyMode, pool_mode: PoolMode) -> Callable[[], GradReport]:
    name = f"cm_frm_{rectify_mode}_{pool_mode}"

    def case() -> GradReport:
        p = RectifyParams.for_mode(4, Rng(11), rectify_mode, pool_mode)
        return grad_check(
            lambda r, s: concat_last(*cm_frm(r, s, p)),
            p.params(),
            _normals(12, (4, 4, 4), (4, 4, 4)),
            name=name,
        )

    case.__name__ = f"check_{name}"
    return case


for _mode in LAMBDAS:
    register(_cm_frm_case(_mode, "both"))
for _pool in POOLS:
    if _pool != "both":
        register(_cm_frm_case("both", _pool))


def _ffm_case(mode: FfmMode) -> Callable[[], GradReport]:
    name = f"ffm_{mode}"

    def case() -> GradReport:
        p = FfmParams.init(4, 2, Rng(13))
        return grad_check(
            lambda r, s: ffm(r, s, p, mode),
            p.params() if mode != "avg" else [],
            _normals(14, (3, 3, 4), (3, 3, 4)),
            name=name,
        )

    case.__name__ = f"check_{name}"
    return case


for _mode in FFM_MODES:
    register(_ffm_case(_mode))


@register
def check_network() -> GradReport:
    """Full forward and loss at 16 x 16 with a sample of coordinates per tensor."""
    ablation = AblationConfig()
    p = NetworkParams.init(GRADCHECK_NETWORK, ablation, Rng(15))
    size = GRADCHECK_SIZE
    rgb, x = _normals(16, (size, size, 3), (size, size, 3))
    labels = Rng(17).integers(0, GRADCHECK_NETWORK.num_classes, (size, size))
    return grad_check(
        lambda r, s: cross_entropy(forward(r, s, p, ablation), labels),
        p.params(),
        [rgb, x],
        threshold=END_TO_END_TOLERANCE,
        max_probes=NETWORK_PROBES,
        seed=18,
        name="network",
    )
