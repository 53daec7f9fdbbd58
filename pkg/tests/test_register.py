from __future__ import annotations

import logging
import runpy
from pathlib import Path
from typing import TYPE_CHECKING, NoReturn

from cmx_fusion.harness import cases, suites
from cmx_fusion.numerics import Rng, grad_check, relu
from cmx_fusion.register import GRADCHECK_CASES, register

if TYPE_CHECKING:
    import pytest

    from cmx_fusion.numerics import GradReport


def check_relu() -> GradReport:
    return grad_check(relu, [], [Rng(0).normal((3, 4))], name="relu")


def check_relu_copy() -> GradReport:
    return grad_check(relu, [], [Rng(1).normal((3, 4))], name="relu")


def check_relu_another_copy() -> GradReport:
    return grad_check(relu, [], [Rng(2).normal((3, 4))], name="relu")


def test_builtin_cases_registered() -> None:
    assert "check_network" in GRADCHECK_CASES
    assert GRADCHECK_CASES["check_network"] is cases.check_network
    assert "check_cm_frm_channel_only_both" in GRADCHECK_CASES
    assert "check_ffm_avg" in GRADCHECK_CASES
    assert list(GRADCHECK_CASES)[0] == "check_sigmoid"


check_relu_copy.__name__ = "check_relu"
check_relu_another_copy.__name__ = "check_relu"


def test_register(reset_gradcheck_cases: None, caplog: pytest.LogCaptureFixture) -> None:
    del reset_gradcheck_cases
    register(cases.check_network)

    with caplog.at_level(logging.WARNING):
        register(cases.check_network)
    assert "check_network is already registered" in caplog.text

    register(check_relu)

    with caplog.at_level(logging.WARNING):
        register(check_relu)
    assert "check_relu is already registered" in caplog.text

    register(check_relu_copy)
    register(check_relu_another_copy)

    expected = {
        "check_network": cases.check_network,
        "check_relu": check_relu,
        "check_relu_1": check_relu_copy,
        "check_relu_2": check_relu_another_copy,
    }
    assert GRADCHECK_CASES == expected  # noqa: SIM300


def test_register_as_decorator(reset_gradcheck_cases: None) -> None:
    del reset_gradcheck_cases

    @register
    def check_custom() -> GradReport:
        return check_relu()

    assert GRADCHECK_CASES == {"check_custom": check_custom}  # noqa: SIM300
    assert GRADCHECK_CASES["check_custom"]().passed


def test_example_only_registers_on_import(
    reset_gradcheck_cases: None, monkeypatch: pytest.MonkeyPatch
) -> None:
    del reset_gradcheck_cases

    def fail(*_: object, **__: object) -> NoReturn:
        raise AssertionError("example ran its commands on import")

    monkeypatch.setattr(suites, "cmd_gradcheck", fail)
    monkeypatch.setattr(suites, "cmd_train_toy", fail)
    runpy.run_path(str(Path(__file__).parents[1] / "example.py"), run_name="example")
    assert list(GRADCHECK_CASES) == ["check_wide_rectification"]
