"""Debugging tools."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
from matplotlib.figure import Figure

if TYPE_CHECKING:
    from collections.abc import Mapping

    from _typeshed import StrPath

    from cmx_fusion.numerics import Param
    from cmx_fusion.types import IdMap, Tensor


def print_param_tree(params: Mapping[str, Param]) -> None:
    """Print dotted parameter names as a tree with shapes. Debugging tool."""
    printed: set[tuple[str, ...]] = set()
    for name, param in params.items():
        parts = tuple(name.split("."))
        for depth in range(1, len(parts)):
            prefix = parts[:depth]
            if prefix not in printed:
                printed.add(prefix)
                print(f"{'  ' * (depth - 1)}| {prefix[-1]}")  # noqa: T201
        print(f"{'  ' * (len(parts) - 1)}* {parts[-1]}: {param.shape}")  # noqa: T201


def param_norms(params: Mapping[str, Param]) -> dict[str, float]:
    """L2 norm of every parameter value and gradient."""
    out: dict[str, float] = {}
    for name, param in params.items():
        out[name] = float(np.linalg.norm(param.value))
        out[f"{name}.grad"] = float(np.linalg.norm(param.grad))
    return out


def draw_label_maps(
    maps: Mapping[str, IdMap], file: StrPath, num_classes: int, ignore_id: int = 255
) -> Figure:
    """Draw label maps side by side with one colour per class. Debugging tool.

    Args:
        maps: Titles and H x W class-id maps, e.g. prediction and ground truth.
        file: The file to save the figure to.
        num_classes: Number of classes K; ids outside [0, K) are drawn blank.
        ignore_id: Id of unlabelled pixels.
    """
    fig = Figure(figsize=(3 * len(maps), 3), constrained_layout=True)
    axes = fig.subplots(1, len(maps), squeeze=False)[0]
    for ax, (title, ids) in zip(axes, maps.items(), strict=True):
        masked = np.ma.masked_where((ids == ignore_id) | (ids >= num_classes), ids)
        ax.imshow(masked, cmap="hsv", vmin=0, vmax=num_classes, interpolation="nearest")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.savefig(file)
    return fig


def draw_prediction(ids: IdMap, file: StrPath, num_classes: int) -> Figure:
    """Draw one predicted label map. Debugging tool."""
    return draw_label_maps({"prediction": ids}, file, num_classes)


def draw_voxel_panels(grid: Tensor, file: StrPath) -> Figure:
    """Draw every time bin of an H x W x B voxel grid with a shared symmetric colour scale."""
    bins = grid.shape[2]
    limit = float(np.abs(grid).max()) or 1.0
    fig = Figure(figsize=(2.5 * bins, 2.5), constrained_layout=True)
    axes = fig.subplots(1, bins, squeeze=False)[0]
    for b, ax in enumerate(axes):
        image = ax.imshow(grid[..., b], cmap="RdBu_r", vmin=-limit, vmax=limit)
        ax.set_title(f"bin {b}")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(image, ax=list(axes), shrink=0.8)
    fig.savefig(file)
    return fig
