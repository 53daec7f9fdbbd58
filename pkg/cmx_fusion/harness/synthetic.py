"""Deterministic tile scenes where the second modality carries class information rgb lacks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import matplotlib as mpl
import numpy as np

from cmx_fusion.encoders import EventStream, voxelize
from cmx_fusion.numerics import Rng, ShapeError

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from cmx_fusion.types import IdMap, Tensor, XKind

logger = logging.getLogger(__name__)

DEFAULT_TILE = 8
RGB_NOISE = 0.05
BAND_NOISE = 0.02
TEXTURE_GRAY = 0.5
TEXTURE_SPREAD = 0.1
EVENTS_PER_PIXEL = 2


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """One generated scene.

    `ambiguous` marks the pixels whose rgb is the shared class-independent texture; there only
    `x_modality` identifies the class.
    """

    rgb: Tensor
    x_modality: Tensor
    labels: IdMap
    ambiguous: NDArray[np.bool_]
    seed: int


def palette(num_classes: int) -> Tensor:
    """K fully saturated colours evenly spaced in hue, K x 3."""
    return mpl.colormaps["hsv"](np.arange(num_classes) / num_classes)[:, :3]


def palette_classifier(rgb: Tensor, num_classes: int) -> IdMap:
    """Class of the nearest palette colour for every pixel."""
    colours = palette(num_classes)
    dist = ((np.asarray(rgb, dtype=np.float64)[..., None, :] - colours) ** 2).sum(axis=-1)
    return dist.argmin(axis=-1)


def ambiguity_ceiling(ambiguity: float, num_classes: int) -> float:
    """Best accuracy any rgb-only pixel classifier reaches: `(1 - a) + a / K`."""
    return (1 - ambiguity) + ambiguity / num_classes


def _event_grid(
    labels: IdMap, num_classes: int, rng: Rng, bins: int, upscale: int
) -> Tensor:
    # class k fires during the k-th of K equal segments of the unit window
    height, width = labels.shape
    ys, xs = np.indices((height, width))
    k = np.repeat(labels.reshape(-1), EVENTS_PER_PIXEL)
    t = (k + rng.uniform(k.size)) / num_classes
    rows = np.column_stack(
        [
            t,
            np.repeat(xs.reshape(-1), EVENTS_PER_PIXEL),
            np.repeat(ys.reshape(-1), EVENTS_PER_PIXEL),
            np.ones(k.size),
        ]
    )
    stream = EventStream.from_events(rows, height, width, window=(0.0, 1.0))
    return voxelize(stream, bins, upscale).grid


def gen_synthetic(
    n: int,
    H: int,
    W: int,
    K: int,
    ambiguity: float,
    seed: int,
    *,
    tile: int = DEFAULT_TILE,
    x_kind: XKind = "bands",
    bins: int = 3,
    upscale: int = 6,
) -> list[SyntheticScene]:
    """Generate `n` scenes of square class tiles.

    Every tile gets a random class and, in rgb, its palette colour plus noise. A fraction
    `ambiguity` of the tiles (rounded) instead shows one gray texture shared by all of them,
    and their classes are dealt round-robin so that every class is equally frequent among them
    whenever K divides their number. The x modality encodes the class everywhere: as intensity
    band `(k + 1) / (K + 1)` for `bands`, or as the voxel grid of events timed in the k-th
    segment of the window for `events`.

    Args:
        n: Number of scenes.
        H: Scene height, a multiple of `tile`.
        W: Scene width, a multiple of `tile`.
        K: Number of classes.
        ambiguity: Fraction of rgb-ambiguous tiles in [0, 1].
        seed: Generator seed; scene i uses `Rng(seed).split(i)`.
        tile: Tile edge length.
        x_kind: `bands` (H x W x 3) or `events` (H x W x bins).
        bins: Event time bins.
        upscale: Event fine-panel factor.

    Raises:
        ValueError: Ambiguity outside [0, 1] or fewer than two classes.
        ShapeError: Scene size not divisible by the tile size.
    """
    if not 0.0 <= ambiguity <= 1.0:
        raise ValueError(f"ambiguity must lie in [0, 1], got {ambiguity}")
    if K < 2:  # noqa: PLR2004
        raise ValueError(f"need at least two classes, got {K}")
    if H % tile or W % tile:
        raise ShapeError(f"scene size {H}x{W} not divisible by tile {tile}")
    rows, cols = H // tile, W // tile
    n_tiles = rows * cols
    n_ambiguous = round(ambiguity * n_tiles)
    colours = palette(K)
    root = Rng(seed)

    scenes = []
    for i in range(n):
        rng = root.split(i)
        classes = rng.integers(0, K, n_tiles)
        ambiguous_tiles = rng.permutation(n_tiles)[:n_ambiguous]
        classes[ambiguous_tiles] = np.arange(n_ambiguous) % K
        tile_mask = np.zeros(n_tiles, dtype=bool)
        tile_mask[ambiguous_tiles] = True

        labels = classes.reshape(rows, cols).repeat(tile, axis=0).repeat(tile, axis=1)
        mask = tile_mask.reshape(rows, cols).repeat(tile, axis=0).repeat(tile, axis=1)

        rgb = colours[labels] + rng.uniform((H, W, 3), -RGB_NOISE, RGB_NOISE)
        texture = TEXTURE_GRAY + rng.uniform((tile, tile, 1), -TEXTURE_SPREAD, TEXTURE_SPREAD)
        rgb = np.where(mask[..., None], np.tile(texture, (rows, cols, 3)), rgb)

        if x_kind == "bands":
            level = (labels + 1) / (K + 1)
            x = level[..., None] + rng.uniform((H, W, 3), -BAND_NOISE, BAND_NOISE)
        elif x_kind == "events":
            x = _event_grid(labels, K, rng, bins, upscale)
        else:
            raise ValueError(f"Unknown x kind: {x_kind}")

        scenes.append(
            SyntheticScene(
                rgb=rgb.astype(np.float32),
                x_modality=np.asarray(x, dtype=np.float32),
                labels=labels.astype(np.int64),
                ambiguous=mask,
                seed=rng.seed,
            )
        )
    logger.debug("Generated %d scenes (%d of %d tiles ambiguous)", n, n_ambiguous, n_tiles)
    return scenes
