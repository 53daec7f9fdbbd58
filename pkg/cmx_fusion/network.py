"""Toy two-stream hierarchical encoder with rectification, fusion and an MLP decoder."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import msgspec
import numpy as np

from cmx_fusion.config import AblationConfig, ConfigError, NetworkConfig
from cmx_fusion.fusion import FfmParams, ffm
from cmx_fusion.numerics import (
    Param,
    Rng,
    ShapeError,
    Var,
    add,
    as_var,
    cmxt,
    concat_last,
    conv1x1,
    gelu,
    space_to_depth,
    uniform_init,
    upsample_nearest,
    zero_grads,
)
from cmx_fusion.rectify import LAMBDAS, RectifyParams, cm_frm

if TYPE_CHECKING:
    from _typeshed import StrPath

    from cmx_fusion.config import StageSpec
    from cmx_fusion.numerics.kernels import Operand
    from cmx_fusion.types import IdMap, SecondModality, Tensor

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class StageParams:
    """Patch embedding (space-to-depth + 1x1) followed by a residual 1x1-gelu-1x1 block."""

    stride: int
    patch_w: Param
    patch_b: Param
    mlp_w1: Param
    mlp_b1: Param
    mlp_w2: Param
    mlp_b2: Param

    @classmethod
    def init(cls, spec: StageSpec, rng: Rng) -> StageParams:
        """Draw patch_w, mlp_w1, mlp_w2; zero biases."""
        s, c_in, c = spec.downsample, spec.in_ch, spec.out_ch
        fan_in = s * s * c_in
        patch_w = uniform_init(rng, (fan_in, c), fan_in)
        mlp_w1 = uniform_init(rng, (c, c), c)
        mlp_w2 = uniform_init(rng, (c, c), c)
        return cls(
            stride=s,
            patch_w=Param(patch_w, "patch_w"),
            patch_b=Param(np.zeros(c), "patch_b"),
            mlp_w1=Param(mlp_w1, "mlp_w1"),
            mlp_b1=Param(np.zeros(c), "mlp_b1"),
            mlp_w2=Param(mlp_w2, "mlp_w2"),
            mlp_b2=Param(np.zeros(c), "mlp_b2"),
        )

    def params(self) -> dict[str, Param]:
        """Parameters in serialization order."""
        return {
            "patch_w": self.patch_w,
            "patch_b": self.patch_b,
            "mlp_w1": self.mlp_w1,
            "mlp_b1": self.mlp_b1,
            "mlp_w2": self.mlp_w2,
            "mlp_b2": self.mlp_b2,
        }


def stage_block(x: Operand, p: StageParams) -> Var:
    """`z = conv1x1(space_to_depth(x))`, then `z + conv1x1(gelu(conv1x1(z)))`."""
    z = conv1x1(space_to_depth(x, p.stride), p.patch_w, p.patch_b)
    hidden = gelu(conv1x1(z, p.mlp_w1, p.mlp_b1))
    return add(z, conv1x1(hidden, p.mlp_w2, p.mlp_b2))


@dataclass(eq=False)
class DecoderParams:
    """Per-stage projections to the decoder width and the final classifier."""

    proj_w: list[Param]
    proj_b: list[Param]
    cls_w: Param
    cls_b: Param

    @classmethod
    def init(
        cls, channels: tuple[int, ...], dim: int, num_classes: int, rng: Rng
    ) -> DecoderParams:
        """Draw one projection per stage, then the classifier."""
        proj_w = [
            Param(uniform_init(rng, (c, dim), c), f"proj_w.{i}") for i, c in enumerate(channels)
        ]
        proj_b = [Param(np.zeros(dim), f"proj_b.{i}") for i in range(len(channels))]
        fan_in = dim * len(channels)
        cls_w = uniform_init(rng, (fan_in, num_classes), fan_in)
        return cls(proj_w, proj_b, Param(cls_w, "cls_w"), Param(np.zeros(num_classes), "cls_b"))

    def params(self) -> dict[str, Param]:
        """Parameters in serialization order."""
        out = {p.name: p for pair in zip(self.proj_w, self.proj_b, strict=True) for p in pair}
        out.update({"cls_w": self.cls_w, "cls_b": self.cls_b})
        return out


def decode(features: list[Var], p: DecoderParams, out_size: tuple[int, int]) -> Var:
    """Project every stage to the decoder width, upsample to stage-1 resolution, classify."""
    base_h = features[0].shape[0]
    projected = []
    for feat, w, b in zip(features, p.proj_w, p.proj_b, strict=True):
        proj = conv1x1(feat, w, b)
        projected.append(upsample_nearest(proj, base_h // feat.shape[0]))
    logits = conv1x1(concat_last(*projected), p.cls_w, p.cls_b)
    return upsample_nearest(logits, out_size[0] // base_h)


@dataclass(eq=False)
class NetworkParams:
    """All weights of the toy network.

    Single-stream networks have no x stages, rectification or fusion weights; networks without
    rectification or with average fusion lack those blocks. With `shared_paths` the x stream
    reuses the rgb stage and fusion-path objects.
    """

    config: NetworkConfig
    rgb_stages: list[StageParams]
    decoder: DecoderParams
    x_stages: list[StageParams] = field(default_factory=list)
    x_adapter: tuple[Param, Param] | None = None
    rectify: list[RectifyParams] = field(default_factory=list)
    ffm: list[FfmParams] = field(default_factory=list)
    shared_paths: bool = False

    @classmethod
    def init(
        cls,
        config: NetworkConfig,
        ablation: AblationConfig,
        rng: Rng,
        *,
        shared_paths: bool = False,
    ) -> NetworkParams:
        """Draw x adapter, rgb stages, x stages, per-stage blocks, then the decoder."""
        stages = config.stages
        dual = not ablation.single_stream
        x_adapter = None
        if dual and config.x_channels != config.rgb_channels:
            w = uniform_init(rng, (config.x_channels, config.rgb_channels), config.x_channels)
            x_adapter = (Param(w, "w"), Param(np.zeros(config.rgb_channels), "b"))
        rgb_stages = [StageParams.init(spec, rng) for spec in stages]
        x_stages: list[StageParams] = []
        if dual:
            x_stages = rgb_stages if shared_paths else [StageParams.init(s, rng) for s in stages]
        rectify: list[RectifyParams] = []
        fusion: list[FfmParams] = []
        for spec in stages:
            if dual and ablation.use_cm_frm:
                rectify.append(
                    RectifyParams.for_mode(
                        spec.out_ch, rng, ablation.rectify_mode, ablation.pool_mode
                    )
                )
            if dual and ablation.ffm_mode != "avg":
                fusion.append(
                    FfmParams.init(spec.out_ch, spec.n_heads, rng, shared_paths=shared_paths)
                )
        decoder = DecoderParams.init(
            config.channels, config.decoder_dim, config.num_classes, rng
        )
        return cls(
            config=config,
            rgb_stages=rgb_stages,
            decoder=decoder,
            x_stages=x_stages,
            x_adapter=x_adapter,
            rectify=rectify,
            ffm=fusion,
            shared_paths=shared_paths,
        )

    @property
    def dual(self) -> bool:
        """Whether an x stream exists."""
        return bool(self.x_stages)

    def params(self) -> dict[str, Param]:
        """Qualified parameter names in serialization order, each object once."""
        groups: list[tuple[str, dict[str, Param]]] = []
        if self.x_adapter is not None:
            groups.append(("x_adapter", {"w": self.x_adapter[0], "b": self.x_adapter[1]}))
        groups += [(f"rgb.stage{i}", s.params()) for i, s in enumerate(self.rgb_stages)]
        groups += [(f"x.stage{i}", s.params()) for i, s in enumerate(self.x_stages)]
        groups += [(f"rectify{i}", r.params()) for i, r in enumerate(self.rectify)]
        groups += [(f"ffm{i}", f.params()) for i, f in enumerate(self.ffm)]
        groups.append(("decoder", self.decoder.params()))

        out: dict[str, Param] = {}
        seen: set[int] = set()
        for prefix, group in groups:
            for name, param in group.items():
                if id(param) not in seen:
                    seen.add(id(param))
                    out[f"{prefix}.{name}"] = param
        return out

    def zero_grad(self) -> None:
        """Reset all gradients."""
        zero_grads(self.params().values())


def _rectify_for(p: RectifyParams, cfg: AblationConfig) -> RectifyParams:
    if cfg.pool_mode != p.pool_mode:
        raise ConfigError(f"weights were built for pool mode {p.pool_mode}, not {cfg.pool_mode}")
    lambda_c, lambda_s = LAMBDAS[cfg.rectify_mode]
    if (lambda_c, lambda_s) == (p.lambda_c, p.lambda_s):
        return p
    return dataclasses.replace(p, lambda_c=lambda_c, lambda_s=lambda_s)


def forward(rgb: Operand, x: Operand | None, p: NetworkParams, cfg: AblationConfig) -> Var:
    """Per-pixel class logits H x W x K.

    Both streams run every stage block; with `use_cm_frm` the rectified features feed the next
    stage and the fusion block. Fused stage maps go through the decoder.

    Raises:
        ShapeError: Input sizes not divisible by the total stride or wrong channel counts.
        ConfigError: The weights lack a block the ablation config needs.
    """
    rgb = as_var(rgb)
    net = p.config
    if len(rgb.shape) != 3 or rgb.shape[2] != net.rgb_channels:  # noqa: PLR2004
        raise ShapeError(f"rgb input must be H x W x {net.rgb_channels}, got {rgb.shape}")
    height, width, _ = rgb.shape
    if height % net.total_stride or width % net.total_stride:
        raise ShapeError(f"input size {height}x{width} not divisible by {net.total_stride}")

    if cfg.single_stream:
        features = []
        feat = rgb
        for stage in p.rgb_stages:
            feat = stage_block(feat, stage)
            features.append(feat)
        return decode(features, p.decoder, (height, width))

    if x is None or not p.dual:
        raise ConfigError("two-stream forward needs an x input and x stream weights")
    x = as_var(x)
    if x.shape != (height, width, net.x_channels):
        raise ShapeError(f"x input must be {height} x {width} x {net.x_channels}, got {x.shape}")
    if cfg.use_cm_frm and len(p.rectify) != len(p.rgb_stages):
        raise ConfigError("weights have no rectification blocks")
    if cfg.ffm_mode != "avg" and len(p.ffm) != len(p.rgb_stages):
        raise ConfigError("weights have no fusion blocks")
    if p.x_adapter is not None:
        x = conv1x1(x, *p.x_adapter)

    fused: list[Var] = []
    r, s = rgb, x
    for i, (rgb_stage, x_stage) in enumerate(zip(p.rgb_stages, p.x_stages, strict=True)):
        r, s = stage_block(r, rgb_stage), stage_block(s, x_stage)
        if cfg.use_cm_frm:
            r, s = cm_frm(r, s, _rectify_for(p.rectify[i], cfg))
        fused.append(ffm(r, s, p.ffm[i] if p.ffm else None, cfg.ffm_mode))
    return decode(fused, p.decoder, (height, width))


def predict(logits: Var | Tensor) -> IdMap:
    """Arg-max class ids per pixel."""
    data = logits.data if isinstance(logits, Var) else np.asarray(logits)
    return data.argmax(axis=-1)


def select_second_modality(
    rgb: Tensor, x: Tensor, mode: SecondModality, rng: Rng
) -> Tensor | None:
    """The x input a second-modality setting feeds: the real one, an rgb copy, noise or none."""
    if mode == "real":
        return x
    if mode == "rgb_copy":
        if rgb.shape != x.shape:
            raise ConfigError(f"rgb copy {rgb.shape} cannot replace x input {x.shape}")
        return rgb.copy()
    if mode == "noise":
        return rng.uniform(x.shape).astype(np.float32)
    if mode == "none":
        return None
    raise ValueError(f"Unknown second modality: {mode}")


class CheckpointManifest(msgspec.Struct):
    """Names and shapes of a checkpoint's tensors plus the configs they were built for."""

    names: list[str]
    shapes: list[list[int]]
    network: dict[str, object]
    ablation: dict[str, object]
    shared_paths: bool = False


def manifest_path(path: StrPath) -> Path:
    """The JSON manifest stored next to a checkpoint."""
    return Path(path).with_suffix(".json")


def save_checkpoint(path: StrPath, p: NetworkParams, ablation: AblationConfig) -> None:
    """Write the parameters as a CMXT stream and a JSON manifest."""
    params = p.params()
    cmxt.save_many(path, [param.value for param in params.values()])
    manifest = CheckpointManifest(
        names=list(params),
        shapes=[list(param.shape) for param in params.values()],
        network=p.config.model_dump(mode="json"),
        ablation=ablation.model_dump(mode="json"),
        shared_paths=p.shared_paths,
    )
    manifest_path(path).write_bytes(msgspec.json.encode(manifest, order="sorted"))


def load_checkpoint(path: StrPath) -> tuple[NetworkParams, AblationConfig]:
    """Rebuild the network from its manifest and fill in the saved values.

    Raises:
        ConfigError: Names or shapes do not match the rebuilt network.
    """
    manifest = msgspec.json.decode(manifest_path(path).read_bytes(), type=CheckpointManifest)
    network = NetworkConfig.model_validate(manifest.network)
    ablation = AblationConfig.model_validate(manifest.ablation)
    p = NetworkParams.init(network, ablation, Rng(0), shared_paths=manifest.shared_paths)
    params = p.params()
    values = cmxt.load_many(path)
    if list(params) != manifest.names or len(values) != len(params):
        raise ConfigError(f"checkpoint {path} does not match its network configuration")
    for (name, param), value in zip(params.items(), values, strict=True):
        if param.shape != value.shape:
            raise ConfigError(f"{name}: saved shape {value.shape}, expected {param.shape}")
        param.value = value
        param.zero_grad()
    return p, ablation
