"""Optional profiler counting kernel operations and timing segments."""

from __future__ import annotations

import logging
import os
import time
from collections import Counter
from contextlib import contextmanager
from typing import TYPE_CHECKING

import dotenv

if TYPE_CHECKING:
    from collections.abc import Generator

dotenv.load_dotenv()

PROFILING_ENABLED = bool(os.getenv("CMX_PROFILE"))
logger = logging.getLogger(__name__)

_ACTIVE: list[OpProfiler] = []


class OpProfiler:
    """Count floating point operations and kernel calls while active.

    Profilers nest: every active profiler sees every kernel call. Segment timings are only
    recorded when `CMX_PROFILE` is set.

    ```python
    with OpProfiler("cross_exchange") as prof:
        cross_exchange(rgb, x, params)
    prof.flops
    ```
    """

    def __init__(self, operation_name: str) -> None:
        """Start the wall clock of `operation_name`."""
        self.operation = operation_name
        self.flops = 0
        self.calls: Counter[str] = Counter()
        self.timings: dict[str, float] = {}
        self.start_total = time.perf_counter()

    def __enter__(self) -> OpProfiler:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _ACTIVE.remove(self)

    @property
    def kernels(self) -> set[str]:
        """Names of all kernels executed while active."""
        return set(self.calls)

    def add(self, kernel: str, flops: int) -> None:
        """Record one kernel call."""
        self.calls[kernel] += 1
        self.flops += flops

    @contextmanager
    def track(self, label: str) -> Generator[None]:
        """Track a segment."""
        if not PROFILING_ENABLED:
            yield
            return
        start = time.perf_counter()
        yield
        self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - start

    def elapsed(self) -> float:
        """Seconds since the profiler was created."""
        return time.perf_counter() - self.start_total

    def finalize(self) -> float:
        """Log the wall time, and with `CMX_PROFILE` the segments and busiest kernels."""
        total = self.elapsed()
        if not PROFILING_ENABLED:
            logger.info("[%s] %.4fs", self.operation, total)
            return total
        segments = ", ".join(f"{label} {seconds:.4f}s" for label, seconds in self.timings.items())
        busiest = ", ".join(f"{name} x{n}" for name, n in self.calls.most_common(5))
        logger.info(
            "[%s] %.4fs (%s); %d flops; %s",
            self.operation,
            total,
            segments or "no segments",
            self.flops,
            busiest or "no kernels",
        )
        return total


def record(kernel: str, flops: int) -> None:
    """Report a kernel call to every active profiler."""
    for prof in _ACTIVE:
        prof.add(kernel, flops)
