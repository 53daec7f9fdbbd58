"""Validated run configuration and environment settings."""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import dotenv
import json_comments
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cmx_fusion.types import (  # noqa: TC001
    FfmMode,
    PoolMode,
    RectifyMode,
    Schedule,
    SecondModality,
    XKind,
)

if TYPE_CHECKING:
    from _typeshed import StrPath
    from typing_extensions import Self

dotenv.load_dotenv()
logger = logging.getLogger(__name__)

DEFAULT_THREADS = 1


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class StageSpec(_Frozen):
    """One encoder stage: channel widths, spatial stride and fusion heads."""

    in_ch: int = Field(ge=1)
    out_ch: int = Field(ge=1)
    downsample: Literal[2, 4]
    n_heads: int = Field(ge=1)

    @model_validator(mode="after")
    def _heads_divide_channels(self) -> Self:
        if self.out_ch % self.n_heads:
            raise ValueError(f"{self.n_heads} heads do not divide {self.out_ch} channels")
        return self


class AblationConfig(_Frozen):
    """Switches selecting the rectification and fusion variants and the second input."""

    use_cm_frm: bool = True
    rectify_mode: RectifyMode = "both"
    pool_mode: PoolMode = "both"
    ffm_mode: FfmMode = "full"
    second_modality: SecondModality = "real"

    @property
    def single_stream(self) -> bool:
        """Whether the network runs the rgb stream only."""
        return self.second_modality == "none"


class NetworkConfig(_Frozen):
    """Shape of the toy two-stream network."""

    channels: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[Literal[2, 4], ...] = (4, 2, 2, 2)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    rgb_channels: int = Field(default=3, ge=1)
    x_channels: int = Field(default=3, ge=1)
    num_classes: int = Field(default=4, ge=2)
    decoder_dim: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _stages_consistent(self) -> Self:
        if not len(self.channels) == len(self.strides) == len(self.heads) >= 1:
            raise ValueError("channels, strides and heads must have the same non-zero length")
        for c, h in zip(self.channels, self.heads, strict=True):
            if c % h:
                raise ValueError(f"{h} heads do not divide {c} channels")
        return self

    @property
    def stages(self) -> list[StageSpec]:
        """Per-stage specs chained from the rgb input width."""
        ins = (self.rgb_channels, *self.channels[:-1])
        return [
            StageSpec(in_ch=i, out_ch=o, downsample=s, n_heads=h)
            for i, o, s, h in zip(ins, self.channels, self.strides, self.heads, strict=True)
        ]

    @property
    def total_stride(self) -> int:
        """Downsampling factor of the last stage."""
        return math.prod(self.strides)


class TrainConfig(_Frozen):
    """Momentum SGD settings."""

    lr: float = Field(default=0.05, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=0.0, ge=0)
    max_grad_norm: float = Field(default=1.0, ge=0)  # 0 disables clipping
    schedule: Schedule = "constant"
    power: float = Field(default=0.9, gt=0)
    warmup_epochs: int = Field(default=0, ge=0)
    batch_size: int = Field(default=2, ge=1)
    epochs: int = Field(default=300, ge=0)


class DataConfig(_Frozen):
    """Synthetic scene generator settings."""

    n_train: int = Field(default=8, ge=1)
    n_eval: int = Field(default=8, ge=1)
    height: int = Field(default=32, ge=1)
    width: int = Field(default=32, ge=1)
    tile: int = Field(default=8, ge=1)
    ambiguity: float = Field(default=0.0, ge=0, le=1)
    x_kind: XKind = "bands"
    bins: int = Field(default=3, ge=1)
    upscale: int = Field(default=6, ge=1)
    ignore_id: int = 255


class RunConfig(_Frozen):
    """Everything a training run depends on."""

    ablation: AblationConfig = AblationConfig()
    network: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()

    @model_validator(mode="after")
    def _data_fits_network(self) -> Self:
        data, net = self.data, self.network
        if data.height % data.tile or data.width % data.tile:
            raise ValueError(f"scene size {data.height}x{data.width} not divisible by tile")
        if data.height % net.total_stride or data.width % net.total_stride:
            raise ValueError(
                f"scene size {data.height}x{data.width} not divisible by {net.total_stride}"
            )
        if data.x_kind == "events" and net.x_channels != data.bins:
            raise ValueError(f"event input has {data.bins} bins but x_channels={net.x_channels}")
        if data.x_kind == "bands" and net.x_channels != net.rgb_channels:
            raise ValueError("band input requires x_channels == rgb_channels")
        if data.ignore_id in range(net.num_classes):
            raise ValueError(f"ignore_id {data.ignore_id} collides with a class id")
        return self

    def with_updates(self, **sections: dict[str, object]) -> RunConfig:
        """Copy with updated fields per section, re-validated."""
        raw = self.model_dump()
        for section, fields in sections.items():
            raw[section].update(fields)
        return validate_config(raw)


def validate_config(raw: dict[str, object]) -> RunConfig:
    """Validate a raw mapping, raising `ConfigError` with pydantic's message."""
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from None


def load_config(path: StrPath) -> RunConfig:
    """Read a JSON config; `//` comments are allowed."""
    text = json_comments.strip_json(Path(path).read_text())
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from None


def get_threads() -> int:
    """Worker cap from `CMX_THREADS`."""
    raw = os.getenv("CMX_THREADS", str(DEFAULT_THREADS))
    try:
        threads = int(raw)
    except ValueError:
        logger.warning("Ignoring invalid CMX_THREADS=%r", raw)
        return DEFAULT_THREADS
    return max(threads, 1)
