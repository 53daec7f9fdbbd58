from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest

from cmx_fusion.numerics import (
    Param,
    Rng,
    Var,
    apply,
    as_var,
    concat_last,
    conv1x1,
    grad_check,
    sigmoid,
)
from cmx_fusion.numerics.gradcheck import (
    END_TO_END_TOLERANCE,
    MODULE_TOLERANCE,
    float64_shadow,
    named_params,
    relative_error,
)
from cmx_fusion.numerics.kernels import Sigmoid
from cmx_fusion.rectify import RectifyParams, cm_frm

if TYPE_CHECKING:
    from cmx_fusion.types import Tensor


class MissingFactorSigmoid(Sigmoid):
    """Backward that forgets the `1 - y` factor."""

    def _backward(self, upstream: Tensor, y: Tensor) -> tuple[Tensor]:
        return (upstream * y,)


class LogKernel(Sigmoid):
    """Natural logarithm; undefined for negative inputs."""

    def _forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return np.log(x), x

    def _backward(self, upstream: Tensor, x: Tensor) -> tuple[Tensor]:
        return (upstream / x,)


def test_tolerances() -> None:
    assert MODULE_TOLERANCE == 1e-4
    assert END_TO_END_TOLERANCE == 1e-3


def test_relative_error() -> None:
    assert relative_error(0.5, 0.25) == 0.25
    assert relative_error(4.0, 2.0) == 0.5
    assert relative_error(1.0, 1.0) == 0


def test_named_params_drops_repeats() -> None:
    p = Param(np.zeros(2), "w")
    q = Param(np.zeros(2))
    assert list(named_params([p, q, p])) == ["w", "param1"]
    assert list(named_params({"a": p, "b": p})) == ["a"]


def test_float64_shadow_restores() -> None:
    p = Param(np.ones(2), "w")
    with float64_shadow([p]):
        assert p.value.dtype == np.float64
        p.grad += 1
    assert p.value.dtype == np.float32
    assert not p.grad.any()


def test_sigmoid_sum() -> None:
    report = grad_check(lambda x: sigmoid(x), [], [Rng(1).normal((2, 2))])
    assert report.n_checks == 4
    assert report.max_rel_err <= 1e-6
    assert report.passed


def test_conv1x1_params_and_input() -> None:
    rng = Rng(2)
    w, b = Param(rng.normal((2, 3)), "w"), Param(rng.normal(3), "b")
    report = grad_check(lambda x: conv1x1(x, w, b), [w, b], [rng.normal((3, 3, 2))])
    assert report.n_checks == 6 + 3 + 18
    assert report.max_rel_err <= 1e-4
    assert w.value.dtype == np.float32


def test_cm_frm_full_output(feature_pair: tuple[Tensor, Tensor]) -> None:
    p = RectifyParams.init(4, Rng(3))
    report = grad_check(
        lambda r, s: concat_last(*cm_frm(r, s, p)), p.params(), list(feature_pair)
    )
    assert report.passed, report.worst


def test_corrupted_backward_detected(caplog: pytest.LogCaptureFixture) -> None:
    def broken(x: Any) -> Var:
        return apply(MissingFactorSigmoid(), x)

    report = grad_check(broken, [], [Rng(4).normal((3, 3))], name="broken")
    assert report.max_rel_err > 1e-2
    assert not report.passed
    assert report.worst is not None
    assert report.worst.startswith("input0")
    assert "non-finite" not in caplog.text


def test_empty_model_passes_vacuously() -> None:
    report = grad_check(lambda: as_var(np.zeros(3)), [])
    assert report.n_checks == 0
    assert report.max_rel_err == 0
    assert report.passed


def test_max_probes_is_deterministic() -> None:
    x = Rng(5).normal((6, 6))
    first = grad_check(sigmoid, [], [x], max_probes=4, seed=3)
    second = grad_check(sigmoid, [], [x], max_probes=4, seed=3)
    assert first.n_checks == 4
    assert first == second


def test_nonfinite_probe_fails(caplog: pytest.LogCaptureFixture) -> None:
    def log_of(x: Any) -> Var:
        return apply(LogKernel(), x)

    with caplog.at_level(logging.WARNING):
        report = grad_check(log_of, [], [np.array([1e-7, 1.0])])
    assert report.nonfinite == ["input0[0]"]
    assert not report.passed
    assert "Non-finite gradient probe at input0[0]" in caplog.text
