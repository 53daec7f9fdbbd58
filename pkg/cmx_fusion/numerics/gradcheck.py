"""Central finite-difference oracle for the hand-written backward passes."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import TYPE_CHECKING

import msgspec
import numpy as np

from cmx_fusion.numerics.graph import Param, Var, zero_grads
from cmx_fusion.numerics.rng import Rng

if TYPE_CHECKING:
    from collections.abc import Callable, Generator, Mapping, Sequence

    from cmx_fusion.types import Tensor

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-6
MODULE_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


class GradReport(msgspec.Struct, kw_only=True):
    """Outcome of one gradient check."""

    name: str
    max_rel_err: float
    n_checks: int
    threshold: float
    worst: str | None = None
    nonfinite: list[str] = msgspec.field(default_factory=list)

    @property
    def passed(self) -> bool:
        """No non-finite probe and the maximum error within the threshold."""
        return not self.nonfinite and self.max_rel_err <= self.threshold


def relative_error(analytic: float, numeric: float) -> float:
    """`|a - n| / max(1, |a|, |n|)`."""
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def named_params(params: Mapping[str, Param] | Sequence[Param]) -> dict[str, Param]:
    """Give every parameter a unique label, dropping repeated objects."""
    items = params.items() if isinstance(params, dict) else ((p.name, p) for p in params)
    named: dict[str, Param] = {}
    seen: set[int] = set()
    for ix, (name, param) in enumerate(items):
        if id(param) in seen:
            continue
        seen.add(id(param))
        named[name or f"param{ix}"] = param
    return named


@contextmanager
def float64_shadow(params: Sequence[Param]) -> Generator[None]:
    """Temporarily evaluate `params` in float64; restores values and zeroes gradients after."""
    originals = [p.value for p in params]
    try:
        for p in params:
            p.value = p.value.astype(np.float64)
        zero_grads(params)
        yield
    finally:
        for p, value in zip(params, originals, strict=True):
            p.value = value
        zero_grads(params)


def _probe_indices(size: int, max_probes: int | None, rng: Rng) -> list[int]:
    if max_probes is None or size <= max_probes:
        return list(range(size))
    return sorted(int(i) for i in rng.permutation(size)[:max_probes])


def grad_check(
    f: Callable[..., Var],
    params: Mapping[str, Param] | Sequence[Param],
    inputs: Sequence[Tensor] = (),
    h: float = DEFAULT_STEP,
    *,
    threshold: float = MODULE_TOLERANCE,
    max_probes: int | None = None,
    seed: int = 0,
    name: str = "",
) -> GradReport:
    """Compare analytic gradients with central differences of a random projection of `f`.

    `f` receives one graph node per input and returns a node. Both the analytic and the numeric
    evaluation run in float64. Every entry of every parameter and input is probed unless
    `max_probes` caps the number of (deterministically sampled) entries per tensor.

    Args:
        f: Function of the input nodes, reading `params` through `Param.var()`.
        params: Parameters to check, optionally labelled.
        inputs: Input tensors.
        h: Finite-difference step.
        threshold: Maximum accepted relative error.
        max_probes: Cap on the probed entries per tensor.
        seed: Seed of the projection vector and of the probe sampling.
        name: Label of the report.

    Returns:
        The report with the maximum relative error, the number of probed entries, the worst
        coordinate and the coordinates of non-finite probes.
    """
    labelled = named_params(params)
    xs = [np.array(x, dtype=np.float64) for x in inputs]
    rng = Rng(seed)
    report = GradReport(name=name, max_rel_err=0.0, n_checks=0, threshold=threshold)

    with float64_shadow(list(labelled.values())), np.errstate(all="ignore"):
        in_vars = [Var(x) for x in xs]
        out = f(*in_vars)
        projection = rng.normal(out.shape)
        out.backward(projection)

        targets: list[tuple[str, Tensor, Tensor]] = [
            (label, p.value, p.grad.copy()) for label, p in labelled.items()
        ]
        targets += [
            (f"input{ix}", x, var.grad if var.grad is not None else np.zeros_like(x))
            for ix, (x, var) in enumerate(zip(xs, in_vars, strict=True))
        ]

        def objective() -> float:
            return float(np.sum(projection * f(*(Var(x) for x in xs)).data))

        for label, arr, analytic in targets:
            for flat_ix in _probe_indices(arr.size, max_probes, rng):
                coord = f"{label}{[int(i) for i in np.unravel_index(flat_ix, arr.shape)]}"
                original = arr.flat[flat_ix]
                arr.flat[flat_ix] = original + h
                plus = objective()
                arr.flat[flat_ix] = original - h
                minus = objective()
                arr.flat[flat_ix] = original

                numeric = (plus - minus) / (2 * h)
                grad = float(analytic.flat[flat_ix])
                report.n_checks += 1
                if not (np.isfinite(numeric) and np.isfinite(grad)):
                    logger.warning("Non-finite gradient probe at %s", coord)
                    report.nonfinite.append(coord)
                    continue
                err = relative_error(grad, numeric)
                if err > report.max_rel_err:
                    report.max_rel_err = err
                    report.worst = coord

    logger.debug(
        "grad_check %s: %d checks, max rel err %.3e at %s",
        name,
        report.n_checks,
        report.max_rel_err,
        report.worst,
    )
    return report
