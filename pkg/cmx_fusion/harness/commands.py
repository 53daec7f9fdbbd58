"""File-level commands: sensor encoding, checkpoint inference and offline metrics."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from matplotlib import image as mpimg

from cmx_fusion.debug import draw_prediction, draw_voxel_panels
from cmx_fusion.encoders import (
    DEFAULT_BINS,
    DEFAULT_UPSCALE,
    EncodingError,
    EventStream,
    PolarStack,
    depth_encode,
    polar_encode,
    thermal_encode,
    voxelize,
)
from cmx_fusion.harness.reports import EncodeReport, InferReport
from cmx_fusion.network import forward, load_checkpoint, predict
from cmx_fusion.numerics import cmxt
from cmx_fusion.training import DEFAULT_IGNORE_ID, metrics

if TYPE_CHECKING:
    from collections.abc import Sequence

    from _typeshed import StrPath

    from cmx_fusion.training import SegMetrics
    from cmx_fusion.types import (
        AolpConvention,
        Chroma,
        EncodeKind,
        IdMap,
        Interpolation,
        PolarKind,
        Tensor,
    )

logger = logging.getLogger(__name__)

N_POLAR_IMAGES = 4
RGBA_CHANNELS = 4


def read_tensor(path: StrPath) -> Tensor:
    """Load `.png` (alpha dropped), `.npy` or CMXT files."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        arr = mpimg.imread(path)
        if arr.ndim == 3 and arr.shape[2] == RGBA_CHANNELS:  # noqa: PLR2004
            arr = arr[..., :3]
    elif suffix == ".npy":
        arr = np.load(path)
    else:
        arr = cmxt.load(path)
    return np.asarray(arr, dtype=np.float32)


def read_ids(path: StrPath) -> IdMap:
    """Load an H x W (or H x W x 1) class-id map stored as floats."""
    arr = read_tensor(path)
    if arr.ndim == 3 and arr.shape[2] == 1:  # noqa: PLR2004
        arr = arr[..., 0]
    return np.rint(arr).astype(np.int64)


def sha256_file(path: StrPath) -> str:
    """Hex digest of a file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_encode(
    kind: EncodeKind,
    inputs: Sequence[StrPath],
    out: StrPath,
    *,
    polar_kind: PolarKind = "dolp",
    chroma: Chroma = "mono",
    convention: AolpConvention = "folded",
    height: int | None = None,
    width: int | None = None,
    bins: int = DEFAULT_BINS,
    upscale: int = DEFAULT_UPSCALE,
    interpolation: Interpolation = "hard",
    panels: StrPath | None = None,
) -> EncodeReport:
    """Encode sensor files into a network input and write it as CMXT.

    `polar` takes the 0, 45, 90 and 135 degree images in that order, `events` one `t,x,y,p`
    CSV and needs the sensor size, `thermal` and `depth` one image each.

    Raises:
        EncodingError: Wrong number of inputs or missing sensor size.
        EventParseError: Malformed event line.
    """
    expected = N_POLAR_IMAGES if kind == "polar" else 1
    if len(inputs) != expected:
        raise EncodingError(f"{kind} encoding takes {expected} input file(s), got {len(inputs)}")

    if kind == "polar":
        stack = PolarStack(*(read_tensor(path) for path in inputs))
        tensor = polar_encode(stack, polar_kind, chroma, convention)
    elif kind == "events":
        if height is None or width is None:
            raise EncodingError("event encoding needs --height and --width")
        stream = EventStream.from_csv(inputs[0], height, width)
        if stream.rejected:
            logger.info("%d events outside the %dx%d sensor", stream.rejected, height, width)
        tensor = voxelize(stream, bins, upscale, interpolation).grid
        if panels is not None:
            draw_voxel_panels(tensor, panels)
    elif kind == "thermal":
        tensor = thermal_encode(read_tensor(inputs[0]))
    elif kind == "depth":
        tensor = depth_encode(read_tensor(inputs[0]))
    else:
        raise ValueError(f"Unknown encoding: {kind}")

    cmxt.save(out, tensor)
    report = EncodeReport(
        kind=kind, path=str(out), shape=list(tensor.shape), sha256=sha256_file(out)
    )
    logger.info("%s -> %s %s sha256 %s", kind, out, tuple(tensor.shape), report.sha256)
    return report


def cmd_infer(
    checkpoint: StrPath,
    rgb_path: StrPath,
    x_path: StrPath | None,
    out: StrPath,
    png: StrPath | None = None,
) -> InferReport:
    """Predict the label map of one input pair with saved weights; ids are written as CMXT."""
    p, ablation = load_checkpoint(checkpoint)
    rgb = read_tensor(rgb_path)
    x = read_tensor(x_path) if x_path is not None else None
    ids = predict(forward(rgb, x, p, ablation))
    cmxt.save(out, ids.astype(np.float32))
    num_classes = p.config.num_classes
    if png is not None:
        draw_prediction(ids, png, num_classes)
    return InferReport(
        path=str(out),
        shape=list(ids.shape),
        class_counts=np.bincount(ids.reshape(-1), minlength=num_classes).tolist(),
        sha256=sha256_file(out),
    )


def cmd_metrics(
    pred_path: StrPath, gt_path: StrPath, num_classes: int, ignore_id: int = DEFAULT_IGNORE_ID
) -> SegMetrics:
    """Score a saved prediction against a saved ground truth.

    Raises:
        ValueError: A predicted id outside [0, K), or a ground-truth id outside [0, K) that is
            not the ignore id.
    """
    pred, gt = read_ids(pred_path), read_ids(gt_path)
    if pred.size and (pred.min() < 0 or pred.max() >= num_classes):
        raise ValueError(f"prediction has ids outside [0, {num_classes})")
    return metrics(pred, gt, num_classes, ignore_id)
