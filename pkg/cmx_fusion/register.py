"""Decorator to register and the global registry of gradient-check cases."""

from __future__ import annotations

import logging
from collections.abc import Callable
from typing import TYPE_CHECKING, TypeAlias, TypeVar

if TYPE_CHECKING:
    from cmx_fusion.numerics import GradReport

logger = logging.getLogger(__name__)

GradCase: TypeAlias = "Callable[[], GradReport]"
GradCaseT = TypeVar("GradCaseT", bound=Callable[[], "GradReport"])

GRADCHECK_CASES: dict[str, GradCase] = {}


def register(func: GradCaseT) -> GradCaseT:
    """Register a gradient-check case. Can be used as a decorator.

    A case takes no parameters, builds its own seeded inputs and parameters and returns the
    `GradReport` of `grad_check`. Cases are run in registration order by `gradcheck`.

    ```python
    from cmx_fusion.register import register

    @register
    def check_relu() -> GradReport:
        return grad_check(relu, [], [Rng(0).normal((3, 4))], name="relu")
    ```

    Args:
        func: The case to register.

    Returns:
        The registered function.
    """
    if func in GRADCHECK_CASES.values():
        logger.warning("Case %s is already registered.", func.__name__)
        return func

    # register with unique name
    name = func.__name__
    count = 1
    while name in GRADCHECK_CASES:
        name = f"{func.__name__}_{count}"
        count += 1
    GRADCHECK_CASES[name] = func

    return func
