"""Loss, segmentation metrics and the momentum SGD training step."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, NamedTuple

import msgspec
import numpy as np

from cmx_fusion.network import forward
from cmx_fusion.numerics import Kernel, ShapeError, Var, apply

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from numpy.typing import NDArray

    from cmx_fusion.config import RunConfig, TrainConfig
    from cmx_fusion.network import NetworkParams
    from cmx_fusion.numerics import Param
    from cmx_fusion.numerics.kernels import Operand
    from cmx_fusion.types import IdMap, Tensor

logger = logging.getLogger(__name__)

DEFAULT_IGNORE_ID = 255


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite."""


class CrossEntropy(Kernel):
    """Mean negative log-likelihood of the labelled class over non-ignored pixels."""

    name = "cross_entropy"

    def __init__(self, labels: IdMap, ignore_id: int = DEFAULT_IGNORE_ID) -> None:
        super().__init__()
        self.labels = np.asarray(labels)
        self.ignore_id = ignore_id

    def _forward(self, logits: Tensor) -> tuple[Tensor, Any]:
        k = logits.shape[-1]
        if logits.shape[:-1] != self.labels.shape:
            raise ShapeError(f"logits {logits.shape} do not match labels {self.labels.shape}")
        labels = self.labels.reshape(-1)
        valid = labels != self.ignore_id
        if np.any((labels[valid] < 0) | (labels[valid] >= k)):
            raise ValueError(f"labels must lie in [0, {k}) or equal {self.ignore_id}")
        flat = logits.reshape(-1, k)
        shifted = flat - flat.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        rows = np.flatnonzero(valid)
        n_valid = len(rows)
        picked = log_probs[rows, labels[rows]]
        loss = -picked.sum() / n_valid if n_valid else 0.0
        return np.asarray(loss, dtype=logits.dtype), (log_probs, rows, labels, logits.shape)

    def _backward(self, upstream: Tensor, saved: Any) -> tuple[Tensor]:
        log_probs, rows, labels, shape = saved
        grad = np.zeros_like(log_probs)
        if len(rows):
            grad[rows] = np.exp(log_probs[rows])
            grad[rows, labels[rows]] -= 1
            grad *= upstream / len(rows)
        return (grad.reshape(shape),)

    def flops(self, inputs: Sequence[Tensor], out: Tensor) -> int:
        return 4 * inputs[0].size


def cross_entropy(logits: Operand, labels: IdMap, ignore_id: int = DEFAULT_IGNORE_ID) -> Var:
    """Scalar cross-entropy; ignored pixels contribute neither loss nor gradient."""
    return apply(CrossEntropy(labels, ignore_id), logits)


class SegMetrics(msgspec.Struct):
    """Segmentation scores; classes absent from prediction and ground truth have IoU None."""

    miou: float
    pixel_acc: float
    mean_acc: float
    per_class_iou: list[float | None]


def confusion_matrix(
    pred: IdMap, gt: IdMap, num_classes: int, ignore_id: int = DEFAULT_IGNORE_ID
) -> NDArray[np.int64]:
    """K x K counts, rows ground truth, columns prediction, ignored pixels dropped.

    Raises:
        ShapeError: Prediction and ground truth differ in size.
        ValueError: A scored pixel has a class id outside [0, K).
    """
    pred, gt = np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = gt != ignore_id
    for label, ids in (("prediction", pred[valid]), ("ground truth", gt[valid])):
        if ids.size and (ids.min() < 0 or ids.max() >= num_classes):
            raise ValueError(f"{label} has ids outside [0, {num_classes})")
    index = gt[valid].astype(np.int64) * num_classes + pred[valid].astype(np.int64)
    counts = np.bincount(index, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def metrics_from_confusion(conf: NDArray[np.int64]) -> SegMetrics:
    """Per-class IoU `TP / (TP + FP + FN)`, their mean over present classes, accuracies."""
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf)
    gt_count = conf.sum(axis=1)
    pred_count = conf.sum(axis=0)
    union = gt_count + pred_count - tp
    per_class = [float(t / u) if u else None for t, u in zip(tp, union, strict=True)]
    present = [iou for iou in per_class if iou is not None]
    total = int(conf.sum())
    accs = [float(t / g) for t, g in zip(tp, gt_count, strict=True) if g]
    return SegMetrics(
        miou=float(np.mean(present)) if present else 0.0,
        pixel_acc=float(tp.sum() / total) if total else 0.0,
        mean_acc=float(np.mean(accs)) if accs else 0.0,
        per_class_iou=per_class,
    )


def metrics(
    pred: IdMap, gt: IdMap, num_classes: int, ignore_id: int = DEFAULT_IGNORE_ID
) -> SegMetrics:
    """mIoU, pixel accuracy, mean class accuracy and per-class IoU of one label map."""
    return metrics_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_id))


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Constant rate, or linear warm-up followed by poly decay."""
    if cfg.schedule == "constant":
        return cfg.lr
    if epoch < cfg.warmup_epochs:
        return cfg.lr * (epoch + 1) / cfg.warmup_epochs
    remaining = max(cfg.epochs - cfg.warmup_epochs, 1)
    progress = min((epoch - cfg.warmup_epochs) / remaining, 1.0)
    return cfg.lr * (1 - progress) ** cfg.power


@dataclass
class SgdState:
    """Momentum SGD with optional decoupled weight decay; velocities keyed by parameter name."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    velocity: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> SgdState:
        """Fresh state for a training config."""
        return cls(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    def update(self, params: Mapping[str, Param], lr: float | None = None) -> None:
        """`v = momentum * v + grad`, `value -= lr * v` (+ `lr * weight_decay * value`)."""
        lr = self.lr if lr is None else lr
        for name, param in params.items():
            previous = self.velocity.get(name)
            v = param.grad.copy() if previous is None else self.momentum * previous + param.grad
            self.velocity[name] = v
            new = param.value - lr * v
            if self.weight_decay:
                new = new - lr * self.weight_decay * param.value
            param.value = new.astype(param.value.dtype)
        self.step += 1


class Sample(NamedTuple):
    """One training example; `x` is None for single-stream runs."""

    rgb: Tensor
    x: Tensor | None
    labels: IdMap


def clip_grad_norm(params: Mapping[str, Param], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most `max_norm`.

    Returns:
        The joint norm before clipping. `max_norm <= 0` leaves the gradients as they are.
    """
    squares = (np.sum(np.square(param.grad, dtype=np.float64)) for param in params.values())
    total = math.sqrt(float(sum(squares)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for param in params.values():
            param.grad = (param.grad * scale).astype(param.grad.dtype)
    return total


def non_finite(params: Mapping[str, Param]) -> list[str]:
    """Names of parameters whose value or gradient holds a NaN or an infinity."""
    return [
        name
        for name, param in params.items()
        if not (np.isfinite(param.value).all() and np.isfinite(param.grad).all())
    ]


def train_step(
    batch: Sequence[Sample],
    p: NetworkParams,
    cfg: RunConfig,
    state: SgdState,
    lr: float | None = None,
) -> tuple[SgdState, float]:
    """Reset gradients, average the batch loss, backpropagate, clip and update the parameters.

    Raises:
        TrainingDivergedError: The batch loss, a gradient or a parameter is not finite. Nothing
            is updated and the optimizer step is not counted.
    """
    params = p.params()
    p.zero_grad()
    total = 0.0
    for sample in batch:
        logits = forward(sample.rgb, sample.x, p, cfg.ablation)
        loss = cross_entropy(logits, sample.labels, cfg.data.ignore_id)
        loss.backward(np.asarray(1.0 / len(batch), dtype=loss.data.dtype))
        total += float(loss.data)
    mean_loss = total / len(batch)
    bad = non_finite(params)
    if bad or not math.isfinite(mean_loss):
        raise TrainingDivergedError(
            f"step {state.step} diverged with loss {mean_loss}; non-finite tensors: "
            + (", ".join(bad) or "none")
        )
    norm = clip_grad_norm(params, cfg.train.max_grad_norm)
    logger.debug("step %d: loss %.4g, gradient norm %.4g", state.step, mean_loss, norm)
    state.update(params, lr)
    return state, mean_loss
