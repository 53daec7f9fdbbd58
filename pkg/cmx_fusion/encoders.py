"""Sensor encoders: polarization, event voxel grids, thermal and depth images."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from cmx_fusion.numerics import ShapeError

if TYPE_CHECKING:
    from collections.abc import Iterable

    from _typeshed import StrPath
    from numpy.typing import NDArray

    from cmx_fusion.types import AolpConvention, Chroma, Interpolation, PolarKind, Tensor

logger = logging.getLogger(__name__)

DOLP_EPS = 1e-6
STOKES_TOL = 1e-3
DEFAULT_UPSCALE = 6
DEFAULT_BINS = 3


class EncodingError(ValueError):
    """Input cannot be encoded."""


class EventParseError(ValueError):
    """Malformed event CSV line."""


@dataclass(frozen=True)
class PolarStack:
    """Four pixel-aligned intensity images behind 0, 45, 90 and 135 degree polarizers.

    Images are H x W (monochromatic) or H x W x 3 (trichromatic).
    """

    i0: Tensor
    i45: Tensor
    i90: Tensor
    i135: Tensor

    def __post_init__(self) -> None:
        shapes = {np.shape(img) for img in self.images}
        if len(shapes) != 1:
            raise ShapeError(f"polarization images differ in shape: {sorted(shapes)}")

    @property
    def images(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """The images in angle order."""
        return self.i0, self.i45, self.i90, self.i135

    @property
    def chroma(self) -> Chroma:
        """`mono` for H x W images, `tri` for H x W x 3 images."""
        shape = np.shape(self.i0)
        if len(shape) == 2:  # noqa: PLR2004
            return "mono"
        if len(shape) == 3 and shape[2] == 3:  # noqa: PLR2004
            return "tri"
        raise ShapeError(f"polarization images must be H x W or H x W x 3, got {shape}")


class StokesMaps(NamedTuple):
    """Linear Stokes parameters."""

    s0: Tensor
    s1: Tensor
    s2: Tensor


def stokes_consistency(ps: PolarStack) -> Tensor:
    """Residual `|(i0 + i90) - (i45 + i135)|`, zero for physically consistent stacks."""
    i0, i45, i90, i135 = (np.asarray(img, dtype=np.float64) for img in ps.images)
    return np.abs((i0 + i90) - (i45 + i135))


def stokes(ps: PolarStack) -> StokesMaps:
    """`s0 = i0 + i90`, `s1 = i0 - i90`, `s2 = i45 - i135`, per pixel and colour channel."""
    i0, i45, i90, i135 = (np.asarray(img, dtype=np.float64) for img in ps.images)
    residual = stokes_consistency(ps)
    if residual.size and residual.max() > STOKES_TOL:
        logger.warning(
            "Polarization stack is not physically consistent: max residual %.4g",
            residual.max(),
        )
    return StokesMaps(i0 + i90, i0 - i90, i45 - i135)


def dolp(sm: StokesMaps) -> Tensor:
    """Degree of linear polarization in [0, 1]; 0 where `s0 <= 1e-6`."""
    s0, s1, s2 = (np.asarray(s, dtype=np.float64) for s in sm)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sqrt(s1**2 + s2**2) / s0
    return np.where(s0 > DOLP_EPS, np.clip(ratio, 0.0, 1.0), 0.0)


def aolp(sm: StokesMaps, convention: AolpConvention = "folded") -> Tensor:
    """Angle of linear polarization; 0 where `s1 = s2 = 0`.

    `folded` evaluates `arctan(s1 / s2) / 2` through the two-argument arctangent, giving values
    in (-pi/4, pi/4]. `standard` is the conventional `atan2(s2, s1) / 2` in (-pi/2, pi/2].
    """
    _, s1, s2 = (np.asarray(s, dtype=np.float64) for s in sm)
    if convention == "folded":
        theta = np.arctan2(s1, s2)
        # fold into the principal branch of the one-argument arctangent, (-pi/2, pi/2]
        theta = np.where(theta > np.pi / 2, theta - np.pi, theta)
        theta = np.where(theta <= -np.pi / 2, theta + np.pi, theta)
    elif convention == "standard":
        theta = np.arctan2(s2, s1)
    else:
        raise ValueError(f"Unknown AoLP convention: {convention}")
    return np.where((s1 == 0) & (s2 == 0), 0.0, theta / 2)


def aolp_to_unit(angle: Tensor, convention: AolpConvention = "folded") -> Tensor:
    """Affinely map the AoLP range of `convention` onto [0, 1]."""
    half_range = np.pi / 4 if convention == "folded" else np.pi / 2
    return (angle + half_range) / (2 * half_range)


def polar_encode(
    ps: PolarStack,
    kind: PolarKind,
    chroma: Chroma,
    convention: AolpConvention = "folded",
) -> Tensor:
    """Encode a polarization stack as an H x W x 3 network input in [0, 1].

    Args:
        ps: The four intensity images.
        kind: `dolp` or `aolp`.
        chroma: `mono` replicates the single map into three channels, `tri` computes one map
            per colour channel.
        convention: AoLP argument order.

    Raises:
        EncodingError: The stack does not have the requested chroma.
    """
    if ps.chroma != chroma:
        raise EncodingError(f"expected a {chroma} stack, got {ps.chroma} images")
    sm = stokes(ps)
    if kind == "dolp":
        out = dolp(sm)
    elif kind == "aolp":
        out = aolp_to_unit(aolp(sm, convention), convention)
    else:
        raise ValueError(f"Unknown polarization kind: {kind}")
    if chroma == "mono":
        out = np.repeat(out[..., None], 3, axis=-1)
    return out.astype(np.float32)


@dataclass
class EventStream:
    """Time-sorted events of an H x W sensor within a time window.

    Use `from_events` or `from_csv`, which sort by time and reject out-of-bounds events.
    """

    t: NDArray[np.float64]
    x: NDArray[np.int64]
    y: NDArray[np.int64]
    p: NDArray[np.int64]
    height: int
    width: int
    window: tuple[float, float] | None = None
    rejected: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def polarity_sum(self) -> int:
        """Signed sum of the retained polarities."""
        return int(self.p.sum())

    @classmethod
    def from_events(
        cls,
        events: Iterable[tuple[float, int, int, int]],
        height: int,
        width: int,
        window: tuple[float, float] | None = None,
    ) -> EventStream:
        """Build a stream from `(t, x, y, p)` tuples.

        Events outside the sensor or outside an explicit window are dropped and counted. Without
        an explicit window the stream spans its first to last event.
        """
        rows = np.asarray(list(events), dtype=np.float64).reshape(-1, 4)
        t = rows[:, 0]
        x, y, p = (rows[:, i].astype(np.int64) for i in (1, 2, 3))
        if np.any((p != 1) & (p != -1)):
            raise EncodingError("polarities must be -1 or +1")
        keep = (x >= 0) & (x < width) & (y >= 0) & (y < height)
        if window is not None:
            keep &= (t >= window[0]) & (t <= window[1])
        rejected = int((~keep).sum())
        if rejected:
            logger.warning(
                "Rejected %d of %d events outside the sensor or window", rejected, len(t)
            )
        order = np.argsort(t[keep], kind="stable")
        t, x, y, p = (arr[keep][order] for arr in (t, x, y, p))
        if window is None and len(t):
            window = (float(t[0]), float(t[-1]))
        return cls(t, x, y, p, height, width, window, rejected)

    @classmethod
    def from_csv(
        cls,
        path: StrPath,
        height: int,
        width: int,
        window: tuple[float, float] | None = None,
    ) -> EventStream:
        """Read `t,x,y,p` lines; see `read_events_csv`."""
        return cls.from_events(read_events_csv(path), height, width, window)


def read_events_csv(path: StrPath) -> list[tuple[float, int, int, int]]:
    """Parse `t,x,y,p` lines (seconds, column, row, +-1); an optional header is skipped.

    Raises:
        EventParseError: A malformed line, with its 1-based line number.
    """
    events: list[tuple[float, int, int, int]] = []
    lines = Path(path).read_text().splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = [part.strip() for part in line.split(",")]
        if lineno == 1 and fields and not _is_number(fields[0]):
            continue  # header
        if len(fields) != 4:  # noqa: PLR2004
            raise EventParseError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            t = float(fields[0])
            x, y, p = int(fields[1]), int(fields[2]), int(fields[3])
        except ValueError as e:
            raise EventParseError(f"line {lineno}: {e}") from None
        if not math.isfinite(t):
            raise EventParseError(f"line {lineno}: non-finite timestamp {fields[0]}")
        if x < 0 or y < 0:
            raise EventParseError(f"line {lineno}: negative coordinate")
        if p not in (-1, 1):
            raise EventParseError(f"line {lineno}: polarity must be -1 or 1, got {p}")
        events.append((t, x, y, p))
    return events


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class VoxelGrid:
    """Dense H x W x B grid of accumulated event polarities."""

    grid: Tensor
    bins: int
    upscale: int

    @property
    def mass(self) -> float:
        """Sum over all cells."""
        return float(self.grid.sum(dtype=np.float64))


def voxelize(
    es: EventStream,
    bins: int = DEFAULT_BINS,
    upscale: int = DEFAULT_UPSCALE,
    interpolation: Interpolation = "hard",
) -> VoxelGrid:
    """Accumulate events into `bins * upscale` fine panels, then sum every `upscale` panels.

    With `hard` interpolation each event adds its polarity to the fine panel
    `min(floor((t - t1) / dT * B * u), B * u - 1)`; accumulation is integer, so the grid sum
    equals the polarity sum exactly. `linear` splits each polarity between the two nearest
    fine panels.

    Raises:
        EncodingError: Invalid bins or upscale, or an empty time window.
    """
    if bins < 1 or upscale < 1:
        raise EncodingError(f"bins and upscale must be positive, got {bins} and {upscale}")
    height, width = es.height, es.width
    fine = bins * upscale
    if not len(es):
        return VoxelGrid(np.zeros((height, width, bins), dtype=np.float32), bins, upscale)
    if es.window is None:
        raise EncodingError("event stream has no time window")
    t1, t_n = es.window
    duration = t_n - t1
    if not duration > 0:
        raise EncodingError(f"time window must have positive length, got {duration}")

    if interpolation == "hard":
        panel = np.floor((es.t - t1) / duration * fine).astype(np.int64)
        panel = np.clip(panel, 0, fine - 1)
        acc = np.zeros((height, width, fine), dtype=np.int64)
        np.add.at(acc, (es.y, es.x, panel), es.p)
    elif interpolation == "linear":
        pos = (es.t - t1) / duration * (fine - 1)
        left = np.clip(np.floor(pos).astype(np.int64), 0, fine - 1)
        frac = pos - left
        acc = np.zeros((height, width, fine), dtype=np.float64)
        np.add.at(acc, (es.y, es.x, left), es.p * (1 - frac))
        right = left + 1
        inside = right < fine
        np.add.at(acc, (es.y[inside], es.x[inside], right[inside]), (es.p * frac)[inside])
    else:
        raise ValueError(f"Unknown interpolation: {interpolation}")

    grid = acc.reshape(height, width, bins, upscale).sum(axis=-1)
    return VoxelGrid(grid.astype(np.float32), bins, upscale)


def thermal_encode(t: Tensor) -> Tensor:
    """Replicate a single-channel thermal image into three identical channels."""
    img = np.asarray(t, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:  # noqa: PLR2004
        img = img[..., 0]
    if img.ndim != 2:  # noqa: PLR2004
        raise ShapeError(f"thermal image must be H x W, got {img.shape}")
    return np.repeat(img[..., None], 3, axis=-1)


def depth_encode(d: Tensor) -> Tensor:
    """Min-max normalise a depth image to [0, 1] and replicate it into three channels.

    Raises:
        EncodingError: The depth image is constant.
    """
    depth = np.asarray(d, dtype=np.float64)
    if depth.ndim != 2:  # noqa: PLR2004
        raise ShapeError(f"depth image must be H x W, got {depth.shape}")
    low, high = depth.min(), depth.max()
    if not high > low:
        raise EncodingError("depth image is constant, cannot normalise")
    unit = (depth - low) / (high - low)
    return np.repeat(unit[..., None], 3, axis=-1).astype(np.float32)
