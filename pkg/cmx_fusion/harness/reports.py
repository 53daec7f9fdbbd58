"""Report structures, canonical JSON and text tables."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

import msgspec

from cmx_fusion.numerics import GradReport  # noqa: TC001
from cmx_fusion.training import SegMetrics  # noqa: TC001

if TYPE_CHECKING:
    from _typeshed import StrPath

logger = logging.getLogger(__name__)

ABLATION_NOTE = (
    "Desk-scale toy runs on synthetic scenes. Each row applies its overrides to the run "
    "configuration; no ordering of the scores is implied."
)


class KernelCoverage(msgspec.Struct):
    """Kernel classes executed during the gradient-check suite versus all registered ones."""

    covered: list[str]
    missing: list[str]

    @property
    def complete(self) -> bool:
        """Every registered kernel was executed."""
        return not self.missing


class RunReport(msgspec.Struct, kw_only=True):
    """Result of `gradcheck` or `train-toy`; wall time only when profiling."""

    command: str
    seed: int | None = None
    config: dict[str, Any] | None = None
    losses: list[float] = msgspec.field(default_factory=list)
    train_pixel_acc: float | None = None
    eval_metrics: SegMetrics | None = None
    gradcheck: dict[str, GradReport] = msgspec.field(default_factory=dict)
    coverage: KernelCoverage | None = None
    passed: bool = True
    wall_time: float | None = None


class AblationRow(msgspec.Struct, kw_only=True):
    """One trained configuration of an ablation suite."""

    label: str
    overrides: dict[str, dict[str, Any]]
    final_loss: float | None
    train_pixel_acc: float
    miou: float
    pixel_acc: float
    mean_acc: float


class AblationReport(msgspec.Struct, kw_only=True):
    """Comparison matrix of one ablation suite."""

    suite: str
    seed: int
    epochs: int
    note: str = ABLATION_NOTE
    rows: list[AblationRow] = msgspec.field(default_factory=list)
    wall_time: float | None = None


class EncodeReport(msgspec.Struct, kw_only=True):
    """Where an encoded tensor was written, its shape and the SHA256 of the file."""

    kind: str
    path: str
    shape: list[int]
    sha256: str


class InferReport(msgspec.Struct, kw_only=True):
    """Predicted label map summary."""

    path: str
    shape: list[int]
    class_counts: list[int]
    sha256: str


Report = RunReport | AblationReport | EncodeReport | InferReport | SegMetrics


def canonical_json(report: Report) -> bytes:
    """Compact JSON with sorted keys; equal reports give equal bytes."""
    return msgspec.json.encode(report, order="sorted")


def format_json(report: Report) -> str:
    """Indented canonical JSON."""
    return msgspec.json.format(canonical_json(report), indent=2).decode()


def write_report(report: Report, out: StrPath) -> None:
    """Write the indented canonical JSON of a report."""
    Path(out).write_text(format_json(report) + "\n")
    logger.info("Report written to %s", out)


def _cell(value: float | None) -> str:
    if value is None or not math.isfinite(value):
        return "-"
    return f"{value:.4f}"


def ablation_table(report: AblationReport) -> str:
    """Aligned text table of an ablation report, headed by its note."""
    header = ["configuration", "final loss", "train acc", "mIoU", "pixel acc", "mAcc"]
    body = [
        [
            row.label,
            _cell(row.final_loss),
            _cell(row.train_pixel_acc),
            _cell(row.miou),
            _cell(row.pixel_acc),
            _cell(row.mean_acc),
        ]
        for row in report.rows
    ]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]

    def fmt(line: list[str]) -> str:
        first = line[0].ljust(widths[0])
        rest = (cell.rjust(width) for cell, width in zip(line[1:], widths[1:], strict=True))
        return " | ".join([first, *rest])

    rule = "-+-".join("-" * w for w in widths)
    title = f"{report.suite} (seed {report.seed}, {report.epochs} epochs)"
    return "\n".join([title, report.note, "", fmt(header), rule, *map(fmt, body)])
