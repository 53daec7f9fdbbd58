"""Command-line entry point."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path  # noqa: TC003
from typing import TYPE_CHECKING, Annotated, TypeVar

import doctyper

from cmx_fusion.config import ConfigError, RunConfig, load_config
from cmx_fusion.encoders import (
    DEFAULT_BINS,
    DEFAULT_UPSCALE,
    EncodingError,
    EventParseError,
)
from cmx_fusion.harness.commands import cmd_encode, cmd_infer, cmd_metrics
from cmx_fusion.harness.reports import ablation_table, format_json, write_report
from cmx_fusion.harness.suites import cmd_ablate, cmd_gradcheck, cmd_train_toy
from cmx_fusion.numerics import ShapeError
from cmx_fusion.numerics.cmxt import CmxtError
from cmx_fusion.training import DEFAULT_IGNORE_ID, TrainingDivergedError
from cmx_fusion.types import (  # noqa: TC001
    AblationSuite,
    AolpConvention,
    Chroma,
    EncodeKind,
    Interpolation,
    PolarKind,
)

if TYPE_CHECKING:
    from collections.abc import Callable

    from cmx_fusion.harness.reports import Report

R = TypeVar("R")
logger = logging.getLogger(__name__)

DEFAULT_SEED = 7
EXPECTED_ERRORS = (
    CmxtError,
    ConfigError,
    EncodingError,
    EventParseError,
    OSError,
    ShapeError,
    TrainingDivergedError,
)

app = doctyper.Typer(add_completion=False, no_args_is_help=True)


@dataclass(frozen=True)
class GlobalOptions:
    """Options given before the sub-command."""

    seed: int
    config_path: Path | None
    out: Path | None

    def config(self) -> RunConfig:
        """The run configuration from `--config`, defaults otherwise."""
        return load_config(self.config_path) if self.config_path else RunConfig()


def wrapped(func: Callable[[], R], name: str) -> R:
    """Run a command, mapping every exception to exit code 1."""
    try:
        return func()
    except EXPECTED_ERRORS as e:
        logger.error("%s failed: %s", name, e)  # noqa: TRY400
        raise doctyper.Exit(code=1) from None
    except Exception:
        logger.exception("Unexpected error during %s", name)
        raise doctyper.Exit(code=1) from None


def emit(report: Report, out: Path | None) -> None:
    """Print a report as JSON and write it to `out` if given."""
    doctyper.echo(format_json(report))
    if out is not None:
        write_report(report, out)


@app.callback()
def main(
    ctx: doctyper.Context,
    seed: int = DEFAULT_SEED,
    config: Path | None = None,
    out: Path | None = None,
) -> None:
    """Cross-modal rectification and fusion toolkit.

    Args:
        ctx: The click context.
        seed: Seed of data generation, initialisation and batch order.
        config: JSON run configuration; `//` comments are allowed.
        out: Output file: the report, or the tensor for `encode` and `infer`.
    """
    ctx.obj = GlobalOptions(seed, config, out)


# Order: encode, gradcheck, train-toy, ablate, infer, metrics
class Commands:
    """Sub-commands of the harness."""

    @classmethod
    def add_commands(cls, app: doctyper.Typer) -> None:
        """Add the sub-commands to the app."""
        app.command("encode")(cls.encode)
        app.command("gradcheck")(cls.gradcheck)
        app.command("train-toy")(cls.train_toy)
        app.command("ablate")(cls.ablate)
        app.command("infer")(cls.infer)
        app.command("metrics")(cls.metrics)

    @staticmethod
    def encode(
        ctx: doctyper.Context,
        sensor: EncodeKind,
        inputs: list[Path],
        kind: PolarKind = "dolp",
        chroma: Chroma = "mono",
        convention: AolpConvention = "folded",
        height: int | None = None,
        width: int | None = None,
        bins: int = DEFAULT_BINS,
        upscale: int = DEFAULT_UPSCALE,
        interpolation: Interpolation = "hard",
        panels: Path | None = None,
    ) -> None:
        """Encode sensor files into a CMXT network input.

        Args:
            ctx: The click context.
            sensor: Sensor type.
            inputs: Polarizer images at 0, 45, 90 and 135 degrees, one event CSV, or one image.
            kind: Polarization map to compute.
            chroma: Monochromatic or trichromatic polarization images.
            convention: Argument order of the polarization angle.
            height: Event sensor height.
            width: Event sensor width.
            bins: Event time bins.
            upscale: Fine panels per event time bin; 1 is the direct representation.
            interpolation: Event panel assignment.
            panels: PNG file for the voxel panels of an event encoding.
        """
        opts: GlobalOptions = ctx.obj
        out = opts.out or Path(f"{sensor}.cmxt")
        report = wrapped(
            lambda: cmd_encode(
                sensor,
                inputs,
                out,
                polar_kind=kind,
                chroma=chroma,
                convention=convention,
                height=height,
                width=width,
                bins=bins,
                upscale=upscale,
                interpolation=interpolation,
                panels=panels,
            ),
            "encode",
        )
        doctyper.echo(format_json(report))

    @staticmethod
    def gradcheck(ctx: doctyper.Context) -> None:
        """Check every hand-written backward pass against central differences.

        Exits with code 1 if any check exceeds its tolerance or a kernel is not covered.

        Args:
            ctx: The click context.
        """
        opts: GlobalOptions = ctx.obj
        report = wrapped(cmd_gradcheck, "gradcheck")
        emit(report, opts.out)
        if not report.passed:
            raise doctyper.Exit(code=1)

    @staticmethod
    def train_toy(
        ctx: doctyper.Context,
        epochs: int | None = None,
        lr: float | None = None,
        save: Path | None = None,
    ) -> None:
        """Train the toy network on synthetic scenes and evaluate it on held-out ones.

        Args:
            ctx: The click context.
            epochs: Number of epochs; the configured value if omitted.
            lr: Learning rate; the configured value if omitted.
            save: Checkpoint file for the trained weights.
        """
        opts: GlobalOptions = ctx.obj
        report = wrapped(
            lambda: cmd_train_toy(
                opts.config(), opts.seed, epochs=epochs, lr=lr, checkpoint=save
            ),
            "train-toy",
        )
        emit(report, opts.out)

    @staticmethod
    def ablate(ctx: doctyper.Context, suite: AblationSuite, epochs: int | None = None) -> None:
        """Train every configuration of an ablation suite and print the comparison matrix.

        Args:
            ctx: The click context.
            suite: `table7` block on/off matrix, `table8` module variants, `table9` second
                modality, `bins` event time bins.
            epochs: Epochs per row; the configured value if omitted.
        """
        opts: GlobalOptions = ctx.obj
        report = wrapped(
            lambda: cmd_ablate(opts.config(), suite, opts.seed, epochs=epochs), "ablate"
        )
        doctyper.echo(ablation_table(report))
        emit(report, opts.out)

    @staticmethod
    def infer(
        ctx: doctyper.Context,
        checkpoint: Path,
        rgb: Path,
        x: Path | None = None,
        png: Path | None = None,
    ) -> None:
        """Predict a label map with saved weights.

        Args:
            ctx: The click context.
            checkpoint: Checkpoint written by `train-toy --save`.
            rgb: RGB image.
            x: Second-modality input; omitted for single-stream checkpoints.
            png: PNG file for a picture of the prediction.
        """
        opts: GlobalOptions = ctx.obj
        out = opts.out or Path("prediction.cmxt")
        report = wrapped(lambda: cmd_infer(checkpoint, rgb, x, out, png), "infer")
        doctyper.echo(format_json(report))

    @staticmethod
    def metrics(
        ctx: doctyper.Context,
        pred: Path,
        gt: Path,
        classes: Annotated[int, doctyper.Option()],
        ignore_id: int = DEFAULT_IGNORE_ID,
    ) -> None:
        """Score a predicted label map against ground truth.

        Args:
            ctx: The click context.
            pred: Predicted class ids.
            gt: Ground-truth class ids.
            classes: Number of classes.
            ignore_id: Id of unlabelled pixels.
        """
        opts: GlobalOptions = ctx.obj
        report = wrapped(lambda: cmd_metrics(pred, gt, classes, ignore_id), "metrics")
        emit(report, opts.out)


Commands.add_commands(app)
