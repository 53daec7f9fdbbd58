from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING

import numpy as np
import pytest

from cmx_fusion.encoders import (
    EncodingError,
    EventParseError,
    EventStream,
    PolarStack,
    StokesMaps,
    aolp,
    aolp_to_unit,
    depth_encode,
    dolp,
    polar_encode,
    read_events_csv,
    stokes,
    stokes_consistency,
    thermal_encode,
    voxelize,
)
from cmx_fusion.numerics import Rng, ShapeError

if TYPE_CHECKING:
    from pathlib import Path

    from cmx_fusion.types import AolpConvention


def stack(*values: float, shape: tuple[int, ...] = (1, 1)) -> PolarStack:
    """Constant images for the 0, 45, 90 and 135 degree polarizers."""
    return PolarStack(*(np.full(shape, v) for v in values))


def maps(s0: float, s1: float, s2: float) -> StokesMaps:
    return StokesMaps(np.array([s0]), np.array([s1]), np.array([s2]))


# --- polarization ---


@pytest.mark.parametrize(
    ("images", "expected"),
    [
        ((1.0, 0.5, 0.0, 0.5), (1.0, 1.0, 0.0)),
        ((0.5, 0.5, 0.5, 0.5), (1.0, 0.0, 0.0)),
        ((0.5, 1.0, 0.5, 0.0), (1.0, 0.0, 1.0)),
    ],
    ids=["horizontal", "unpolarized", "diagonal"],
)
def test_stokes(images: tuple[float, ...], expected: tuple[float, float, float]) -> None:
    sm = stokes(stack(*images))
    assert (float(sm.s0[0, 0]), float(sm.s1[0, 0]), float(sm.s2[0, 0])) == expected


def test_stokes_is_linear() -> None:
    rng = Rng(1)
    a = PolarStack(*(rng.uniform((3, 3)) for _ in range(4)))
    b = PolarStack(*(rng.uniform((3, 3)) for _ in range(4)))
    mixed = PolarStack(*(2 * ia + 3 * ib for ia, ib in zip(a.images, b.images, strict=True)))
    for s_mixed, s_a, s_b in zip(stokes(mixed), stokes(a), stokes(b), strict=True):
        np.testing.assert_allclose(s_mixed, 2 * s_a + 3 * s_b, atol=1e-12)


def test_inconsistent_stack_warns(caplog: pytest.LogCaptureFixture) -> None:
    ps = stack(1.0, 0.0, 1.0, 0.0)
    assert stokes_consistency(ps)[0, 0] == 2.0
    with caplog.at_level(logging.WARNING):
        stokes(ps)
    assert "not physically consistent" in caplog.text


def test_consistent_stack_is_quiet(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING):
        stokes(stack(1.0, 0.5, 0.0, 0.5))
    assert not caplog.records


@pytest.mark.parametrize(
    ("sm", "expected"),
    [
        ((2.0, 1.0, 1.0), math.sqrt(2) / 2),
        ((1.0, 1.0, 0.0), 1.0),
        ((1.0, 0.0, 0.0), 0.0),
        ((0.0, 0.0, 0.0), 0.0),
        ((1e-7, 1e-7, 0.0), 0.0),
        ((1.0, 2.0, 0.0), 1.0),
    ],
    ids=["diagonal", "full", "none", "dark", "below-eps", "clipped"],
)
def test_dolp(sm: tuple[float, float, float], expected: float) -> None:
    assert dolp(maps(*sm))[0] == pytest.approx(expected)


def test_dolp_in_unit_interval() -> None:
    rng = Rng(2)
    ps = PolarStack(*(rng.uniform((1000, 1000)) for _ in range(4)))
    d = dolp(stokes(ps))
    assert d.min() >= 0
    assert d.max() <= 1
    assert np.isfinite(d).all()


@pytest.mark.parametrize(
    ("s1", "s2", "convention", "expected"),
    [
        (1.0, 0.0, "folded", math.pi / 4),
        (0.0, 1.0, "folded", 0.0),
        (1.0, 1.0, "folded", math.pi / 8),
        (-1.0, 0.0, "folded", math.pi / 4),
        (1.0, 0.0, "standard", 0.0),
        (0.0, 1.0, "standard", math.pi / 4),
        (1.0, 1.0, "standard", math.pi / 8),
        (0.0, 0.0, "folded", 0.0),
        (0.0, 0.0, "standard", 0.0),
    ],
)
def test_aolp(s1: float, s2: float, convention: AolpConvention, expected: float) -> None:
    assert aolp(maps(1.0, s1, s2), convention)[0] == pytest.approx(expected)


def test_aolp_folded_range() -> None:
    rng = Rng(3)
    sm = StokesMaps(np.ones(10000), rng.normal(10000), rng.normal(10000))
    angle = aolp(sm, "folded")
    assert angle.min() > -math.pi / 4
    assert angle.max() <= math.pi / 4
    unit = aolp_to_unit(angle, "folded")
    assert unit.min() >= 0
    assert unit.max() <= 1


def test_aolp_unknown_convention() -> None:
    with pytest.raises(ValueError, match="convention"):
        aolp(maps(1.0, 1.0, 0.0), "radar")  # type: ignore[arg-type]


def test_polar_encode_mono_replicates() -> None:
    out = polar_encode(stack(1.0, 0.5, 0.0, 0.5, shape=(2, 3)), "dolp", "mono")
    assert out.shape == (2, 3, 3)
    assert out.dtype == np.float32
    assert (out == 1.0).all()


def test_polar_encode_tri_per_channel() -> None:
    i0 = np.zeros((2, 2, 3))
    i0[..., 0] = 1.0
    diagonal = 0.5 * i0
    ps = PolarStack(i0, diagonal, np.zeros((2, 2, 3)), diagonal)
    out = polar_encode(ps, "dolp", "tri")
    assert out.shape == (2, 2, 3)
    assert (out[..., 0] == 1.0).all()
    assert not out[..., 1:].any()


def test_polar_encode_aolp_unit_range() -> None:
    out = polar_encode(stack(1.0, 0.5, 0.0, 0.5), "aolp", "mono")
    assert out[0, 0].tolist() == [1.0, 1.0, 1.0]
    out = polar_encode(stack(0.5, 0.5, 0.5, 0.5), "aolp", "mono")
    assert out[0, 0].tolist() == [0.5, 0.5, 0.5]


def test_polar_encode_chroma_mismatch() -> None:
    with pytest.raises(EncodingError, match="tri"):
        polar_encode(stack(1.0, 0.5, 0.0, 0.5), "dolp", "tri")


def test_polar_stack_shapes() -> None:
    with pytest.raises(ShapeError, match="differ"):
        PolarStack(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ShapeError, match="H x W x 3"):
        _ = stack(0, 0, 0, 0, shape=(2, 2, 2)).chroma


# --- events ---


def test_read_events_csv(events_csv: Path) -> None:
    events = read_events_csv(events_csv)
    assert len(events) == 5
    assert events[1] == (0.25, 1, 2, -1)


def test_event_stream_rejects_outside_sensor(
    events_csv: Path, caplog: pytest.LogCaptureFixture
) -> None:
    with caplog.at_level(logging.WARNING):
        es = EventStream.from_csv(events_csv, 4, 4)
    assert len(es) == 4
    assert es.rejected == 1
    assert es.window == (0.0, 1.0)
    assert es.polarity_sum == 2
    assert "Rejected 1 of 5 events" in caplog.text


def test_event_stream_sorts_and_windows() -> None:
    events = [(0.7, 0, 0, 1), (0.1, 1, 1, -1), (2.0, 0, 0, 1)]
    es = EventStream.from_events(events, 2, 2, window=(0.0, 1.0))
    assert es.t.tolist() == [0.1, 0.7]
    assert es.p.tolist() == [-1, 1]
    assert es.rejected == 1


def test_event_stream_rejects_bad_polarity() -> None:
    with pytest.raises(EncodingError, match="polarities"):
        EventStream.from_events([(0.0, 0, 0, 2)], 2, 2)


@pytest.mark.parametrize(
    ("line", "message"),
    [
        ("0.1,1,2", "expected 4 fields"),
        ("0.1,a,2,1", "line 2"),
        ("nan,1,1,1", "non-finite"),
        ("0.1,-1,0,1", "negative"),
        ("0.1,1,1,0", "polarity"),
    ],
    ids=["fields", "number", "nan", "negative", "polarity"],
)
def test_read_events_csv_errors(line: str, message: str, tmp_path: Path) -> None:
    file = tmp_path / "bad.csv"
    file.write_text(f"t,x,y,p\n{line}\n")
    with pytest.raises(EventParseError, match=message):
        read_events_csv(file)


def test_voxelize_csv_events(events_csv: Path) -> None:
    es = EventStream.from_csv(events_csv, 4, 4)
    vg = voxelize(es, bins=2, upscale=1)
    assert vg.grid.shape == (4, 4, 2)
    assert vg.grid.dtype == np.float32
    assert vg.grid[0, 0].tolist() == [1.0, 0.0]
    assert vg.grid[2, 1].tolist() == [-1.0, 0.0]
    assert vg.grid[3, 3].tolist() == [0.0, 1.0]
    assert vg.grid[0, 2].tolist() == [0.0, 1.0]
    assert vg.mass == es.polarity_sum


@pytest.mark.parametrize(("bins", "expected_bin"), [(1, 0), (3, 1), (4, 2)])
def test_voxelize_midpoint_event(bins: int, expected_bin: int) -> None:
    es = EventStream.from_events([(0.5, 1, 0, 1)], 1, 2, window=(0.0, 1.0))
    vg = voxelize(es, bins=bins, upscale=6)
    assert vg.grid[0, 1, expected_bin] == 1.0
    assert vg.mass == 1.0


def test_voxelize_mass_is_polarity_sum() -> None:
    rng = Rng(4)
    n = 5000
    events = zip(
        rng.uniform(n).tolist(),
        rng.integers(0, 8, (n,)).tolist(),
        rng.integers(0, 6, (n,)).tolist(),
        (2 * rng.integers(0, 2, (n,)) - 1).tolist(),
        strict=True,
    )
    es = EventStream.from_events(events, 6, 8, window=(0.0, 1.0))
    for bins, upscale in ((1, 1), (3, 6), (5, 2), (30, 1)):
        assert voxelize(es, bins, upscale).mass == es.polarity_sum
    linear = voxelize(es, 3, 6, "linear")
    # one float32 rounding per cell
    tol = linear.grid.size * np.finfo(np.float32).eps * float(np.abs(linear.grid).max())
    assert linear.mass == pytest.approx(es.polarity_sum, abs=tol)


def test_voxelize_superimposes() -> None:
    a = [(0.1, 0, 0, 1), (0.6, 1, 1, -1)]
    b = [(0.35, 0, 0, 1), (0.95, 1, 0, 1)]

    def grid(events: list[tuple[float, int, int, int]]) -> np.ndarray:
        return voxelize(EventStream.from_events(events, 2, 2, window=(0.0, 1.0)), 4, 2).grid

    assert np.array_equal(grid(a + b), grid(a) + grid(b))


def test_voxelize_upscale_is_group_sum() -> None:
    rng = Rng(5)
    events = [(float(t), 0, 0, 1) for t in rng.uniform(200)]
    es = EventStream.from_events(events, 1, 1, window=(0.0, 1.0))
    coarse = voxelize(es, bins=2, upscale=3).grid
    fine = voxelize(es, bins=6, upscale=1).grid
    assert np.array_equal(coarse, fine.reshape(1, 1, 2, 3).sum(axis=-1))


def test_voxelize_last_event_in_last_bin() -> None:
    es = EventStream.from_events([(0.0, 0, 0, 1), (1.0, 0, 0, -1)], 1, 1)
    assert voxelize(es, bins=3, upscale=2).grid[0, 0].tolist() == [1.0, 0.0, -1.0]


def test_voxelize_linear_splits_polarity() -> None:
    es = EventStream.from_events([(0.5, 0, 0, 1)], 1, 1, window=(0.0, 1.0))
    grid = voxelize(es, bins=2, upscale=1, interpolation="linear").grid
    assert grid[0, 0].tolist() == [0.5, 0.5]


def test_voxelize_empty_stream() -> None:
    es = EventStream.from_events([], 3, 2)
    vg = voxelize(es, bins=3)
    assert vg.grid.shape == (3, 2, 3)
    assert vg.mass == 0


def test_voxelize_errors() -> None:
    single = EventStream.from_events([(0.5, 0, 0, 1)], 1, 1)
    with pytest.raises(EncodingError, match="positive length"):
        voxelize(single)
    with pytest.raises(EncodingError, match="positive"):
        voxelize(single, bins=0)
    with pytest.raises(ValueError, match="interpolation"):
        voxelize(
            EventStream.from_events([(0.5, 0, 0, 1)], 1, 1, window=(0.0, 1.0)),
            interpolation="cubic",  # type: ignore[arg-type]
        )


# --- thermal and depth ---


def test_thermal_encode() -> None:
    t = np.arange(6.0).reshape(2, 3)
    out = thermal_encode(t)
    assert out.shape == (2, 3, 3)
    assert all(np.array_equal(out[..., c], t) for c in range(3))
    assert np.array_equal(thermal_encode(t[..., None]), out)
    with pytest.raises(ShapeError):
        thermal_encode(np.zeros((2, 3, 2)))


def test_depth_encode() -> None:
    out = depth_encode(np.array([[0.0, 2.0], [4.0, 8.0]]))
    assert out[..., 0].tolist() == [[0.0, 0.25], [0.5, 1.0]]
    assert np.array_equal(out[..., 0], out[..., 2])
    with pytest.raises(EncodingError, match="constant"):
        depth_encode(np.ones((2, 2)))
