"""Shared type aliases."""

from __future__ import annotations

from typing import Literal, TypeAlias

import numpy as np
from numpy.typing import NDArray

# Dense row-major arrays, image tensors ordered H x W x C.
Tensor: TypeAlias = NDArray[np.floating]
IdMap: TypeAlias = NDArray[np.integer]
Shape: TypeAlias = tuple[int, ...]

PointwiseKind: TypeAlias = Literal["sigmoid", "relu", "gelu"]
PoolKind: TypeAlias = Literal["avg", "max"]
Stream: TypeAlias = Literal["rgb", "x"]

RectifyMode: TypeAlias = Literal["both", "channel_only", "spatial_only"]
PoolMode: TypeAlias = Literal["both", "avg_only", "max_only"]
FfmMode: TypeAlias = Literal["full", "stage2_only", "self_attn", "avg"]
SecondModality: TypeAlias = Literal["real", "rgb_copy", "noise", "none"]

PolarKind: TypeAlias = Literal["dolp", "aolp"]
Chroma: TypeAlias = Literal["mono", "tri"]
AolpConvention: TypeAlias = Literal["folded", "standard"]
Interpolation: TypeAlias = Literal["hard", "linear"]
EncodeKind: TypeAlias = Literal["polar", "events", "thermal", "depth"]

XKind: TypeAlias = Literal["bands", "events"]
Schedule: TypeAlias = Literal["constant", "poly"]
AblationSuite: TypeAlias = Literal["table7", "table8", "table9", "bins"]
