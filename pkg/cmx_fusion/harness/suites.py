"""Gradient-check suite, toy training and the ablation matrices."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

import cmx_fusion.harness.cases  # noqa: F401  # registers the gradient-check cases
from cmx_fusion.config import get_threads
from cmx_fusion.harness.reports import AblationReport, AblationRow, KernelCoverage, RunReport
from cmx_fusion.harness.synthetic import gen_synthetic
from cmx_fusion.network import (
    NetworkParams,
    forward,
    predict,
    save_checkpoint,
    select_second_modality,
)
from cmx_fusion.numerics import KERNELS, OpProfiler, Rng
from cmx_fusion.numerics.profiler import PROFILING_ENABLED
from cmx_fusion.register import GRADCHECK_CASES
from cmx_fusion.training import (
    Sample,
    SgdState,
    confusion_matrix,
    learning_rate,
    metrics_from_confusion,
    train_step,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from _typeshed import StrPath

    from cmx_fusion.config import RunConfig
    from cmx_fusion.harness.synthetic import SyntheticScene
    from cmx_fusion.numerics import GradReport
    from cmx_fusion.register import GradCase
    from cmx_fusion.training import SegMetrics
    from cmx_fusion.types import AblationSuite

logger = logging.getLogger(__name__)

# Scene i of a run draws from `Rng(seed).split(i)`; harness streams live under their own parent.
HARNESS_KEY = -1
MODALITY_KEY = 1
ORDER_KEY = 2
ROW_SEED_OFFSET = 1000
TIME_BINS = (1, 3, 5, 10, 15, 20, 30)
DIRECT_UPSCALE = 1
FINE_UPSCALE = 6


class Variant(NamedTuple):
    """One ablation row: a label and per-section config overrides."""

    label: str
    overrides: dict[str, dict[str, Any]]


def _ablation(**fields: Any) -> dict[str, dict[str, Any]]:
    return {"ablation": fields}


ABLATION_SUITES: dict[AblationSuite, list[Variant]] = {
    "table7": [
        Variant("No & Avg", _ablation(use_cm_frm=False, ffm_mode="avg")),
        Variant("CM-FRM & Avg", _ablation(use_cm_frm=True, ffm_mode="avg")),
        Variant("No & FFM", _ablation(use_cm_frm=False, ffm_mode="full")),
        Variant("CM-FRM & FFM", _ablation(use_cm_frm=True, ffm_mode="full")),
    ],
    "table8": [
        Variant("channel-wise rectification only", _ablation(rectify_mode="channel_only")),
        Variant("spatial-wise rectification only", _ablation(rectify_mode="spatial_only")),
        Variant("average pooling only", _ablation(pool_mode="avg_only")),
        Variant("max pooling only", _ablation(pool_mode="max_only")),
        Variant("fusion stage 2 only", _ablation(ffm_mode="stage2_only")),
        Variant("self-attention exchange", _ablation(ffm_mode="self_attn")),
    ],
    "table9": [
        Variant("rgb only", _ablation(second_modality="none")),
        Variant("rgb + rgb copy", _ablation(second_modality="rgb_copy")),
        Variant("rgb + noise", _ablation(second_modality="noise")),
        Variant("rgb + x", _ablation(second_modality="real")),
    ],
    "bins": [
        Variant(
            f"B={b} {'direct' if u == DIRECT_UPSCALE else f'u={u}'}",
            {
                "data": {"x_kind": "events", "bins": b, "upscale": u},
                "network": {"x_channels": b},
            },
        )
        for b in TIME_BINS
        for u in (DIRECT_UPSCALE, FINE_UPSCALE)
    ],
}


def cmd_gradcheck(cases: dict[str, GradCase] | None = None) -> RunReport:
    """Run every registered gradient-check case and the kernel coverage audit.

    The report passes iff every case is within its threshold and every registered kernel
    was executed. Failing cases log their worst coordinate.
    """
    cases = GRADCHECK_CASES if cases is None else cases
    reports: dict[str, GradReport] = {}
    with OpProfiler("gradcheck") as prof:
        for name, case in cases.items():
            with prof.track(name):
                report = case()
            reports[report.name or name] = report
            if report.passed:
                logger.info(
                    "%-28s %4d checks  max rel err %.2e", name, report.n_checks, report.max_rel_err
                )
            else:
                logger.error(
                    "%s FAILED: max rel err %.3e > %.0e at %s; non-finite at %s",
                    name,
                    report.max_rel_err,
                    report.threshold,
                    report.worst,
                    report.nonfinite or "-",
                )
    coverage = KernelCoverage(
        covered=sorted(prof.kernels & set(KERNELS)),
        missing=sorted(set(KERNELS) - prof.kernels),
    )
    if coverage.missing:
        logger.error("Kernels without gradient check: %s", ", ".join(coverage.missing))
    wall = prof.finalize()
    return RunReport(
        command="gradcheck",
        gradcheck=reports,
        coverage=coverage,
        passed=coverage.complete and all(r.passed for r in reports.values()),
        wall_time=wall if PROFILING_ENABLED else None,
    )


def harness_rng(seed: int, key: int) -> Rng:
    """Generator for a harness stream, disjoint from the per-scene streams of `gen_synthetic`."""
    return Rng(seed).split(HARNESS_KEY).split(key)


def prepare_samples(
    scenes: Sequence[SyntheticScene], cfg: RunConfig, rng: Rng
) -> list[Sample]:
    """Pair scenes with the x input the ablation's second-modality setting feeds."""
    mode = cfg.ablation.second_modality
    return [
        Sample(s.rgb, select_second_modality(s.rgb, s.x_modality, mode, rng), s.labels)
        for s in scenes
    ]


def evaluate(samples: Sequence[Sample], p: NetworkParams, cfg: RunConfig) -> SegMetrics:
    """Metrics of the merged confusion matrix over all samples."""
    k = cfg.network.num_classes
    conf = np.zeros((k, k), dtype=np.int64)
    for sample in samples:
        pred = predict(forward(sample.rgb, sample.x, p, cfg.ablation))
        conf += confusion_matrix(pred, sample.labels, k, cfg.data.ignore_id)
    return metrics_from_confusion(conf)


def cmd_train_toy(
    cfg: RunConfig,
    seed: int,
    *,
    epochs: int | None = None,
    lr: float | None = None,
    init_offset: int = 0,
    checkpoint: StrPath | None = None,
) -> RunReport:
    """Train on `n_train` generated scenes and evaluate on `n_eval` held-out ones.

    Args:
        cfg: Run configuration.
        seed: Seed of the scenes, the second-modality substitutes and the batch order.
        epochs: Overrides `train.epochs`.
        lr: Overrides `train.lr`.
        init_offset: Added to `seed` for the weight initialisation.
        checkpoint: Where to save the trained weights.

    Raises:
        TrainingDivergedError: The loss became non-finite.
    """
    overrides = {
        key: value for key, value in (("epochs", epochs), ("lr", lr)) if value is not None
    }
    if overrides:
        cfg = cfg.with_updates(train=overrides)
    data, net, train_cfg = cfg.data, cfg.network, cfg.train
    prof = OpProfiler("train-toy")

    with prof.track("data"):
        scenes = gen_synthetic(
            data.n_train + data.n_eval,
            data.height,
            data.width,
            net.num_classes,
            data.ambiguity,
            seed,
            tile=data.tile,
            x_kind=data.x_kind,
            bins=data.bins,
            upscale=data.upscale,
        )
        samples = prepare_samples(scenes, cfg, harness_rng(seed, MODALITY_KEY))
    train, held_out = samples[: data.n_train], samples[data.n_train :]

    p = NetworkParams.init(net, cfg.ablation, Rng(seed + init_offset))
    state = SgdState.from_config(train_cfg)
    order_rng = harness_rng(seed, ORDER_KEY)
    losses: list[float] = []
    with prof.track("train"):
        for epoch in range(train_cfg.epochs):
            rate = learning_rate(train_cfg, epoch)
            order = order_rng.permutation(len(train))
            batch_losses = []
            for start in range(0, len(train), train_cfg.batch_size):
                batch = [train[i] for i in order[start : start + train_cfg.batch_size]]
                state, loss = train_step(batch, p, cfg, state, rate)
                batch_losses.append(loss)
            losses.append(float(np.mean(batch_losses)))
            logger.debug("epoch %d: lr %.4g loss %.6f", epoch, rate, losses[-1])

    with prof.track("eval"):
        train_metrics = evaluate(train, p, cfg)
        eval_metrics = evaluate(held_out, p, cfg)
    logger.info(
        "train pixel acc %.4f | held-out mIoU %.4f pixel acc %.4f",
        train_metrics.pixel_acc,
        eval_metrics.miou,
        eval_metrics.pixel_acc,
    )
    if checkpoint is not None:
        save_checkpoint(checkpoint, p, cfg.ablation)
        logger.info("Checkpoint written to %s", checkpoint)

    wall = prof.finalize()
    return RunReport(
        command="train-toy",
        seed=seed,
        config=cfg.model_dump(mode="json"),
        losses=losses,
        train_pixel_acc=train_metrics.pixel_acc,
        eval_metrics=eval_metrics,
        wall_time=wall if PROFILING_ENABLED else None,
    )


def _run_row(args: tuple[RunConfig, int, int | None, int]) -> RunReport:
    cfg, seed, epochs, offset = args
    return cmd_train_toy(cfg, seed, epochs=epochs, init_offset=offset)


def suite_configs(cfg: RunConfig, suite: AblationSuite) -> list[tuple[Variant, RunConfig]]:
    """Validated config of every row of a suite."""
    try:
        variants = ABLATION_SUITES[suite]
    except KeyError:
        raise ValueError(f"Unknown ablation suite: {suite}") from None
    return [(v, cfg.with_updates(**v.overrides)) for v in variants]


def cmd_ablate(
    cfg: RunConfig, suite: AblationSuite, seed: int, *, epochs: int | None = None
) -> AblationReport:
    """Train every configuration of a suite and collect the comparison matrix.

    Rows share the data seed; row i initialises with `seed + i * 1000`. Rows run in up to
    `CMX_THREADS` worker processes and are reported in suite order.
    """
    rows = suite_configs(cfg, suite)
    jobs = [
        (row_cfg, seed, epochs, i * ROW_SEED_OFFSET) for i, (_, row_cfg) in enumerate(rows)
    ]
    workers = min(get_threads(), len(jobs))
    prof = OpProfiler(f"ablate {suite}")
    with prof.track("rows"):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_row, jobs))
        else:
            results = [_run_row(job) for job in jobs]

    report_rows = []
    for (variant, _), result in zip(rows, results, strict=True):
        m = result.eval_metrics
        if m is None:
            raise RuntimeError(f"row {variant.label} produced no evaluation")
        report_rows.append(
            AblationRow(
                label=variant.label,
                overrides=variant.overrides,
                final_loss=result.losses[-1] if result.losses else None,
                train_pixel_acc=result.train_pixel_acc or 0.0,
                miou=m.miou,
                pixel_acc=m.pixel_acc,
                mean_acc=m.mean_acc,
            )
        )
    wall = prof.finalize()
    return AblationReport(
        suite=suite,
        seed=seed,
        epochs=cfg.train.epochs if epochs is None else epochs,
        rows=report_rows,
        wall_time=wall if PROFILING_ENABLED else None,
    )
