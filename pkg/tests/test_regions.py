"""Integral region enumeration against brute-force oracles."""

import dataclasses

import numpy as np
import pytest

from capnet.errors import ConfigError, ContractViolation
from capnet.regions import (Region, RegionPolicy, enumerate_regions,
                            write_regions_csv)

# Hand-derived: anchors {0, 7} per axis, widths/heights in {7, 14} where they
# fit; anchor rows outer, per anchor the height multiplier varies before the
# width one.
FROZEN_14 = [
    (0, 0, 7, 7), (0, 0, 14, 7), (0, 0, 7, 14), (0, 0, 14, 14),
    (7, 0, 7, 7), (7, 0, 7, 14),
    (0, 7, 7, 7), (0, 7, 14, 7),
    (7, 7, 7, 7),
]


def as_tuples(regions):
    return [(r.i, r.j, r.w_px, r.h_px) for r in regions]


def brute_force_full(width, height, dx, dy, stride):
    out = []
    for j in range(0, height - dy + 1, stride):
        for i in range(0, width - dx + 1, stride):
            for n in range(1, height // dy + 1):
                if j + n * dy > height:
                    continue
                for m in range(1, width // dx + 1):
                    if i + m * dx > width:
                        continue
                    out.append((i, j, m * dx, n * dy))
    return out


def test_frozen_14x14_sequence():
    policy = RegionPolicy(delta=(7, 7), anchor_stride=7, mode="full")
    assert as_tuples(enumerate_regions(14, 14, policy)) == FROZEN_14


def test_single_cell_grid():
    policy = RegionPolicy(delta=(7, 7), anchor_stride=7, mode="full")
    assert as_tuples(enumerate_regions(7, 7, policy)) == [(0, 0, 7, 7)]


def test_full_matches_brute_force(rng):
    for _ in range(20):
        dx, dy = rng.integers(1, 5, size=2)
        width = int(dx * rng.integers(1, 7))
        height = int(dy * rng.integers(1, 7))
        stride = int(rng.integers(1, 4))
        policy = RegionPolicy(delta=(int(dx), int(dy)),
                              anchor_stride=stride, mode="full")
        got = as_tuples(enumerate_regions(width, height, policy))
        assert got == brute_force_full(width, height, int(dx), int(dy), stride)


def test_regions_stay_inside_grid(rng):
    policy = RegionPolicy(delta=(3, 2), anchor_stride=2, mode="full")
    for r in enumerate_regions(13, 9, policy):
        assert 0 <= r.i and r.i + r.w_px <= 13
        assert 0 <= r.j and r.j + r.h_px <= 9
        assert r.w_px % 3 == 0 and r.h_px % 2 == 0


def test_pyramid_counts():
    desk = RegionPolicy(delta=(4, 4), mode="pyramid",
                        pyramid_levels=((1, 3), (2, 3), (3, 3)))
    assert len(enumerate_regions(12, 12, desk)) == 27
    full_scale = RegionPolicy(delta=(7, 7), mode="pyramid",
                              pyramid_levels=((1, 3), (2, 3), (4, 3)))
    assert len(enumerate_regions(42, 42, full_scale)) == 27


def test_pyramid_anchor_line_42():
    policy = RegionPolicy(delta=(7, 7), mode="pyramid",
                          pyramid_levels=((1, 3),))
    got = as_tuples(enumerate_regions(42, 42, policy))
    # rint(linspace(0, 35, 3)) per axis; row-major over anchors.
    anchors = [0, 18, 35]
    assert got == [(i, j, 7, 7) for j in anchors for i in anchors]


def test_pyramid_is_subset_of_stride1_full(rng):
    policy = RegionPolicy(delta=(4, 4), mode="pyramid",
                          pyramid_levels=((1, 3), (2, 2), (3, 3)))
    pyramid = set(as_tuples(enumerate_regions(16, 12, policy)))
    everything = set(brute_force_full(16, 12, 4, 4, 1))
    assert pyramid <= everything


def test_enumeration_is_deterministic():
    policy = RegionPolicy(delta=(2, 3), anchor_stride=2, mode="full")
    first = as_tuples(enumerate_regions(10, 9, policy))
    second = as_tuples(enumerate_regions(10, 9, policy))
    assert first == second


def test_grid_smaller_than_cell_refused():
    policy = RegionPolicy(delta=(7, 7), anchor_stride=7, mode="full")
    with pytest.raises(ContractViolation):
        enumerate_regions(6, 14, policy)


def test_policy_validation():
    with pytest.raises(ConfigError):
        RegionPolicy(mode="spiral")
    with pytest.raises(ConfigError):
        RegionPolicy(delta=(0, 4))
    with pytest.raises(ConfigError):
        RegionPolicy(anchor_stride=0)
    with pytest.raises(ConfigError):
        RegionPolicy(mode="pyramid", pyramid_levels=())


def test_region_is_immutable():
    r = Region(0, 0, 7, 7)
    with pytest.raises(dataclasses.FrozenInstanceError):
        r.i = 3


def test_regions_csv(tmp_path):
    path = tmp_path / "regions.csv"
    write_regions_csv([Region(0, 0, 7, 7), Region(7, 0, 7, 14)], path)
    assert path.read_text() == "i,j,w_px,h_px\n0,0,7,7\n7,0,7,14\n"
