"""Example usage of cmx-fusion."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cmx_fusion import RectifyParams, cm_frm, register
from cmx_fusion.config import RunConfig
from cmx_fusion.harness.reports import format_json
from cmx_fusion.harness.suites import cmd_gradcheck, cmd_train_toy
from cmx_fusion.numerics import Rng, grad_check

if TYPE_CHECKING:
    from cmx_fusion.numerics import GradReport


# Register an extra gradient-check case: rectification of wide, shallow features
@register
def check_wide_rectification() -> GradReport:
    """CM-FRM with 16 channels on a 2 x 2 map."""
    rng = Rng(5)
    rgb, x = rng.normal((2, 2, 16)), rng.normal((2, 2, 16))
    p = RectifyParams.init(16, Rng(6))
    return grad_check(
        lambda a, b: cm_frm(a, b, p)[0], p.params(), [rgb, x], name="wide_rectification"
    )


if __name__ == "__main__":
    # Run every registered case together with the kernel coverage audit
    report = cmd_gradcheck()
    print("gradcheck passed:", report.passed)  # noqa: T201

    # Train the toy network on half-ambiguous scenes for a few epochs
    cfg = RunConfig().with_updates(data={"ambiguity": 0.5}, train={"epochs": 20})
    result = cmd_train_toy(cfg, seed=7)
    print(format_json(result))  # noqa: T201
    print("mean loss of the last epochs:", np.mean(result.losses[-5:]))  # noqa: T201
