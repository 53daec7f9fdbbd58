from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any

import pytest
from scenes import SMALL_CONFIG

from cmx_fusion.config import (
    AblationConfig,
    ConfigError,
    NetworkConfig,
    RunConfig,
    get_threads,
    load_config,
    validate_config,
)

if TYPE_CHECKING:
    from pathlib import Path


def test_defaults(default_config: RunConfig) -> None:
    net = default_config.network
    assert net.channels == (32, 64, 128, 256)
    assert net.strides == (4, 2, 2, 2)
    assert net.total_stride == 32
    assert [s.n_heads for s in net.stages] == [1, 2, 4, 8]
    assert [s.in_ch for s in net.stages] == [3, 32, 64, 128]
    assert default_config.ablation == AblationConfig()
    assert not default_config.ablation.single_stream
    assert default_config.train.lr == 0.05
    assert (default_config.data.height, default_config.data.ignore_id) == (32, 255)


def test_load_config_with_comments(config_file: Path, small_config: RunConfig) -> None:
    cfg = load_config(config_file)
    assert cfg == small_config
    assert cfg.network.decoder_dim == 8
    assert cfg.ablation.ffm_mode == "full"


def test_load_config_reports_path(tmp_path: Path) -> None:
    file = tmp_path / "bad.json"
    file.write_text('{"train": {"lr": -1}}')
    with pytest.raises(ConfigError, match="bad.json"):
        load_config(file)


def update(section: str, **fields: Any) -> dict[str, Any]:
    raw = {key: dict(value) for key, value in SMALL_CONFIG.items()}
    raw.setdefault(section, {}).update(fields)
    return raw


@pytest.mark.parametrize(
    ("raw", "message"),
    [
        (update("network", heads=[1, 2, 3, 4]), "heads do not divide"),
        (update("network", strides=[2, 2]), "same non-zero length"),
        (update("network", strides=[2, 2, 2, 3]), "strides"),
        (update("data", height=20), "not divisible"),
        (update("data", x_kind="events", bins=5), "bins"),
        (update("data", ignore_id=2), "collides"),
        (update("ablation", ffm_mode="concat"), "ffm_mode"),
        (update("train", momentum=1.0), "momentum"),
        (update("train", optimizer="adam"), "optimizer"),
    ],
    ids=["heads", "lengths", "stride", "size", "bins", "ignore", "mode", "momentum", "extra"],
)
def test_invalid_configs(raw: dict[str, Any], message: str) -> None:
    with pytest.raises(ConfigError, match=message):
        validate_config(raw)


def test_event_input_width() -> None:
    raw = update("data", x_kind="events", bins=5)
    raw["network"] = {**raw["network"], "x_channels": 5}
    cfg = validate_config(raw)
    assert cfg.network.x_channels == cfg.data.bins == 5


def test_band_input_needs_rgb_width() -> None:
    with pytest.raises(ConfigError, match="x_channels == rgb_channels"):
        validate_config(update("network", x_channels=4))


def test_with_updates_revalidates(small_config: RunConfig) -> None:
    cfg = small_config.with_updates(ablation={"ffm_mode": "avg"}, train={"epochs": 5})
    assert cfg.ablation.ffm_mode == "avg"
    assert cfg.train.epochs == 5
    assert cfg.network == small_config.network
    assert small_config.ablation.ffm_mode == "full"
    with pytest.raises(ConfigError):
        small_config.with_updates(data={"tile": 3})


def test_configs_are_frozen(small_config: RunConfig) -> None:
    with pytest.raises(ValueError, match="frozen"):
        small_config.train.lr = 1.0  # type: ignore[misc]


def test_network_config_direct() -> None:
    net = NetworkConfig(channels=(8,), strides=(4,), heads=(2,))
    assert net.total_stride == 4
    assert net.stages[0].downsample == 4


@pytest.mark.parametrize(
    ("value", "expected"), [(None, 1), ("4", 4), ("0", 1), ("many", 1)], ids=str
)
def test_get_threads(
    value: str | None,
    expected: int,
    monkeypatch: pytest.MonkeyPatch,
    caplog: pytest.LogCaptureFixture,
) -> None:
    if value is None:
        monkeypatch.delenv("CMX_THREADS", raising=False)
    else:
        monkeypatch.setenv("CMX_THREADS", value)
    with caplog.at_level(logging.WARNING):
        assert get_threads() == expected
    assert ("Ignoring invalid" in caplog.text) == (value == "many")
