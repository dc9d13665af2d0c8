"""Differentiable bilinear crop-and-resize over feature-map regions.

Sampling is align-corners: target index t on an axis of extent S maps to
source offset t * (S - 1) / (T - 1), and a single-point target reads the
region center. Each output value mixes at most the four direct neighbor
cells of its sample point, the four weights summing to one, so gradients
reach only those cells and an integer-aligned crop is an exact copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DimensionError
from .regions import Region
from .tensor import Tensor, _record


@dataclass(frozen=True)
class PoolSpec:
    target: tuple = (7, 7)   # (width, height) of the pooled grid

    def __post_init__(self):
        tw, th = self.target
        if tw < 1 or th < 1:
            raise ContractViolation(f"pool target must be positive, got {self.target}")


def _axis_coords(start: float, extent: int, count: int) -> np.ndarray:
    if count == 1:
        return np.array([start + (extent - 1) / 2.0])
    return start + np.arange(count) * ((extent - 1) / (count - 1))


def _axis_taps(coords: np.ndarray, size: int):
    lo = np.floor(coords).astype(np.int64)
    lo = np.clip(lo, 0, size - 1)
    hi = np.minimum(lo + 1, size - 1)
    frac = coords - lo
    return lo, hi, frac


def _resample(x: Tensor, region: Region, target_w: int, target_h: int) -> Tensor:
    h, w, _ = x.shape
    xs = _axis_coords(float(region.i), region.w_px, target_w)
    ys = _axis_coords(float(region.j), region.h_px, target_h)
    x0, x1, fx = _axis_taps(xs, w)
    y0, y1, fy = _axis_taps(ys, h)
    wx0, wx1 = (1.0 - fx)[None, :, None], fx[None, :, None]
    wy0, wy1 = (1.0 - fy)[:, None, None], fy[:, None, None]
    d = x.data
    y = (wy0 * (wx0 * d[y0[:, None], x0[None, :]] + wx1 * d[y0[:, None], x1[None, :]]) +
         wy1 * (wx0 * d[y1[:, None], x0[None, :]] + wx1 * d[y1[:, None], x1[None, :]]))
    out = Tensor(y)
    src_shape = x.shape

    def backward(gs):
        (g,) = gs
        gx = np.zeros(src_shape, dtype=np.float64)
        np.add.at(gx, (y0[:, None], x0[None, :]), wy0 * wx0 * g)
        np.add.at(gx, (y0[:, None], x1[None, :]), wy0 * wx1 * g)
        np.add.at(gx, (y1[:, None], x0[None, :]), wy1 * wx0 * g)
        np.add.at(gx, (y1[:, None], x1[None, :]), wy1 * wx1 * g)
        return (gx,)

    _record((x,), (out,), backward, "bilinear")
    return out


def pool_region(x: Tensor, region: Region, spec: PoolSpec) -> Tensor:
    """Resample one region of an (H, W, C) map onto the spec's fixed grid."""
    if x.ndim != 3:
        raise DimensionError(f"pool_region: needs an (H, W, C) map, got {x.shape}")
    h, w, _ = x.shape
    if (region.i < 0 or region.j < 0 or region.w_px < 1 or region.h_px < 1
            or region.i + region.w_px > w or region.j + region.h_px > h):
        raise ContractViolation(f"region {region} outside {w}x{h} map")
    tw, th = spec.target
    return _resample(x, region, tw, th)


def pool_all(x: Tensor, regions, spec: PoolSpec) -> list:
    """pool_region over an ordered region list; order is preserved."""
    return [pool_region(x, r, spec) for r in regions]


def upsample_bilinear(x: Tensor, target: tuple) -> Tensor:
    """Resize a whole (H, W, C) map up to (target_h, target_w); upscale only."""
    if x.ndim != 3:
        raise DimensionError(f"upsample_bilinear: needs an (H, W, C) map, got {x.shape}")
    th, tw = target
    h, w, _ = x.shape
    if th < h or tw < w:
        raise ContractViolation(
            f"upsample_bilinear: target {th}x{tw} is below source {h}x{w}")
    return _resample(x, Region(0, 0, w, h), tw, th)
