from __future__ import annotations

import hashlib
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from cmx_fusion.numerics import Var

if TYPE_CHECKING:
    from _typeshed import StrPath

    from cmx_fusion.types import Tensor


def assert_same_bytes(first: StrPath, *others: StrPath) -> None:
    """Assert that every file has the SHA256 digest of `first`."""
    expected = hashlib.sha256(Path(first).read_bytes()).hexdigest()
    for other in others:
        assert hashlib.sha256(Path(other).read_bytes()).hexdigest() == expected, other


def data(value: Var | Tensor) -> Tensor:
    """The array behind a graph node or the array itself."""
    return value.data if isinstance(value, Var) else np.asarray(value)


def assert_close(actual: Var | Tensor, expected: Var | Tensor, atol: float = 1e-5) -> None:
    """Assert equal shapes and values within an absolute tolerance."""
    a, e = data(actual), data(expected)
    assert a.shape == e.shape, f"shape {a.shape} != {e.shape}"
    np.testing.assert_allclose(a, e, rtol=0, atol=atol)


def assert_bitwise(actual: Var | Tensor, expected: Var | Tensor) -> None:
    """Assert equal shapes, dtypes and values."""
    a, e = data(actual), data(expected)
    assert a.shape == e.shape, f"shape {a.shape} != {e.shape}"
    assert a.dtype == e.dtype, f"dtype {a.dtype} != {e.dtype}"
    assert np.array_equal(a, e)
