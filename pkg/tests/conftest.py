from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from cmx_fusion.fusion import FfmParams
from cmx_fusion.numerics import Rng
from cmx_fusion.rectify import RectifyParams
from cmx_fusion.register import GRADCHECK_CASES

if TYPE_CHECKING:
    from collections.abc import Generator

    from cmx_fusion.types import Tensor

pytest_plugins = ("scenes",)


# fixture to reset GRADCHECK_CASES to it's initial state
@pytest.fixture
def reset_gradcheck_cases() -> Generator[None]:
    initial_cases = GRADCHECK_CASES.copy()
    try:
        GRADCHECK_CASES.clear()
        yield
    finally:
        GRADCHECK_CASES.clear()
        GRADCHECK_CASES.update(initial_cases)


@pytest.fixture
def rng() -> Rng:
    return Rng(0)


def get_feature_pair(seed: int, shape: tuple[int, int, int]) -> tuple[Tensor, Tensor]:
    rng = Rng(seed)
    return rng.normal(shape), rng.normal(shape)


@pytest.fixture
def feature_pair() -> tuple[Tensor, Tensor]:
    """Two 4 x 4 x 4 float64 feature maps."""
    return get_feature_pair(21, (4, 4, 4))


@pytest.fixture
def small_pair() -> tuple[Tensor, Tensor]:
    """Two 2 x 2 x 4 float64 feature maps."""
    return get_feature_pair(22, (2, 2, 4))


@pytest.fixture
def rectify_params() -> RectifyParams:
    """Rectification weights for 4 channels with the default lambdas."""
    return RectifyParams.init(4, Rng(1))


@pytest.fixture
def ffm_params() -> FfmParams:
    """Fusion weights for 4 channels and 2 heads."""
    return FfmParams.init(4, 2, Rng(2))


@pytest.fixture
def shared_ffm_params() -> FfmParams:
    """Fusion weights whose two paths are the same objects."""
    return FfmParams.init(4, 2, Rng(2), shared_paths=True)
