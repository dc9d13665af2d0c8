"""Rectangular region proposals on a feature-map grid.

A region is anchored at column i, row j and spans w_px x h_px cells, always
an integer multiple of the base cell (delta_x, delta_y). Enumeration order
is deterministic: anchors row-major (j outer, i inner), and where several
sizes share an anchor, ascending (n, m) with n the height multiple.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class Region:
    i: int      # anchor column, pixels
    j: int      # anchor row, pixels
    w_px: int   # width, pixels
    h_px: int   # height, pixels


@dataclass(frozen=True)
class RegionPolicy:
    delta: tuple = (7, 7)           # base cell (delta_x, delta_y)
    anchor_stride: int = 7          # anchor grid step for full mode
    mode: str = "full"              # "full" or "pyramid"
    # Pyramid levels as (size multiplier, anchor grid side) pairs.
    pyramid_levels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in ("full", "pyramid"):
            raise ConfigError(f"region mode must be full or pyramid, got {self.mode!r}")
        dx, dy = self.delta
        if dx < 1 or dy < 1:
            raise ConfigError(f"region cell must be positive, got {self.delta}")
        if self.mode == "full" and self.anchor_stride < 1:
            raise ConfigError(f"anchor stride must be positive, got {self.anchor_stride}")
        if self.mode == "pyramid" and not self.pyramid_levels:
            raise ConfigError("pyramid mode needs at least one (multiplier, grid) level")


def enumerate_regions(width: int, height: int, policy: RegionPolicy) -> list:
    """All legal regions for the policy on a width x height grid, in order."""
    dx, dy = policy.delta
    if width < dx or height < dy:
        raise ContractViolation(
            f"grid {width}x{height} is smaller than one {dx}x{dy} cell")
    if policy.mode == "full":
        return _enumerate_full(width, height, dx, dy, policy.anchor_stride)
    return _enumerate_pyramid(width, height, dx, dy, policy.pyramid_levels)


def _enumerate_full(width, height, dx, dy, stride) -> list:
    out = []
    for j in range(0, height - dy + 1, stride):
        for i in range(0, width - dx + 1, stride):
            n = 1
            while j + n * dy <= height:
                m = 1
                while i + m * dx <= width:
                    out.append(Region(i, j, m * dx, n * dy))
                    m += 1
                n += 1
    return out


def _anchor_line(limit: int, grid: int) -> np.ndarray:
    # Evenly spaced anchors over [0, limit], rounded to the pixel grid.
    return np.rint(np.linspace(0.0, float(limit), grid)).astype(int)


def _enumerate_pyramid(width, height, dx, dy, levels) -> list:
    out = []
    for mult, grid in levels:
        if mult < 1 or grid < 1:
            raise ConfigError(f"bad pyramid level ({mult}, {grid})")
        w_px, h_px = mult * dx, mult * dy
        if w_px > width or h_px > height:
            raise ContractViolation(
                f"pyramid level {mult} spans {w_px}x{h_px}, grid is {width}x{height}")
        for j in _anchor_line(height - h_px, grid):
            for i in _anchor_line(width - w_px, grid):
                out.append(Region(int(i), int(j), w_px, h_px))
    return out


def write_regions_csv(regions, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "w_px", "h_px"])
        for r in regions:
            writer.writerow([r.i, r.j, r.w_px, r.h_px])
