"""Image and displacement quality measures: residuals, RMSE, SSIM, ML-SSIM, strain, scanlines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Kind, LatticeDescriptor, ValidationError
from .pyramids import haar_step
from .volume import DisplacementField, Volume, warp

__all__ = [
    "SsimParams",
    "residual",
    "rmse",
    "ssim",
    "ssim_map",
    "ml_ssim",
    "StrainField",
    "strain",
    "scanline",
    "residual_stats",
    "AXES",
]

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class SsimParams:
    window_edge: int = 7
    C1: float = 0.01**2
    C2: float = 0.03**2
    C3: float | None = None  # defaults to C2 / 2
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    levels_M: int = 3

    def __post_init__(self):
        if self.C3 is None:
            object.__setattr__(self, "C3", self.C2 / 2.0)
        if int(self.window_edge) != self.window_edge or self.window_edge < 1:
            raise ValidationError("window_edge must be a positive integer")
        if not (self.C1 > 0 and self.C2 > 0 and self.C3 > 0):
            raise ValidationError("SSIM constants must be positive")
        if int(self.levels_M) != self.levels_M or self.levels_M < 1:
            raise ValidationError("levels_M must be a positive integer")


def _pair(a: Volume, b: Volume) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise ValidationError(f"extents differ: {a.data.shape} vs {b.data.shape}")
    return np.asarray(a.data, dtype=np.float64), np.asarray(b.data, dtype=np.float64)


def residual(fixed: Volume, moving: Volume, field: DisplacementField | None = None) -> Volume:
    """|I0 - I1| or, given a field, |I0(x) - I1(x + u(x))|."""
    if not fixed.lattice.same_grid(moving.lattice):
        raise ValidationError("fixed and moving live on different lattices")
    if field is not None:
        moving = warp(moving, field)
    a, b = _pair(fixed, moving)
    return Volume(fixed.lattice, np.abs(a - b))


def rmse(fixed: Volume, warped: Volume) -> float:
    a, b = _pair(fixed, warped)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def residual_stats(res: Volume) -> dict:
    r = res.data
    return {
        "mean": float(r.mean()),
        "max": float(r.max()),
        "rms": float(np.sqrt(np.mean(r**2))),
        "q90": float(np.quantile(r, 0.9)),
    }


def _box_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Mean over every fully contained w^3 window (valid mode) via summed-area tables."""
    s = np.pad(x, [(1, 0)] * 3).cumsum(0).cumsum(1).cumsum(2)
    t = (
        s[w:, w:, w:] - s[:-w, w:, w:] - s[w:, :-w, w:] - s[w:, w:, :-w]
        + s[:-w, :-w, w:] + s[:-w, w:, :-w] + s[w:, :-w, :-w] - s[:-w, :-w, :-w]
    )
    return t / float(w**3)


def _ssim_components(a: np.ndarray, b: np.ndarray, params: SsimParams, window: int):
    # centre first so the summed-area tables stay well conditioned
    shift = 0.5 * (a.mean() + b.mean())
    a = a - shift
    b = b - shift
    ma = _box_mean(a, window)
    mb = _box_mean(b, window)
    va = np.maximum(_box_mean(a * a, window) - ma * ma, 0.0)
    vb = np.maximum(_box_mean(b * b, window) - mb * mb, 0.0)
    sab = np.sqrt(va * vb)
    cov = np.clip(_box_mean(a * b, window) - ma * mb, -sab, sab)
    ma = ma + shift
    mb = mb + shift
    lum = (2.0 * ma * mb + params.C1) / (ma * ma + mb * mb + params.C1)
    con = (2.0 * sab + params.C2) / (va + vb + params.C2)
    struct = (cov + params.C3) / (sab + params.C3)
    return lum, con, struct


def _pow(x, e):
    return x if e == 1 else np.power(x, e)


def ssim_map(a: Volume, b: Volume, params: SsimParams = SsimParams()) -> np.ndarray:
    """Per-window l^alpha c^beta s^gamma for every interior-anchored window."""
    x, y = _pair(a, b)
    w = params.window_edge
    if w > min(x.shape):
        raise ValidationError(f"SSIM window {w} larger than volume {x.shape}")
    lum, con, struct = _ssim_components(x, y, params, w)
    return _pow(lum, params.alpha) * _pow(con, params.beta) * _pow(struct, params.gamma)


def ssim(a: Volume, b: Volume, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM over all windows."""
    return float(ssim_map(a, b, params).mean())


def ml_ssim(a: Volume, b: Volume, params: SsimParams = SsimParams()) -> float:
    """Multi-level SSIM over ``levels_M`` 2x2x2 block-mean levels.

    Luminance enters at the coarsest level only, contrast and structure at
    every level; each level contributes the mean of its window map.  Windows
    larger than a coarse level shrink to fit it.
    """
    x, y = _pair(a, b)
    M = params.levels_M
    if min(x.shape) < 2 ** (M - 1):
        raise ValidationError(f"extents {x.shape} do not support {M - 1} halvings")
    total = 1.0
    for j in range(M):
        w = min(params.window_edge, min(x.shape))
        lum, con, struct = _ssim_components(x, y, params, w)
        cs = _pow(con, params.beta) * _pow(struct, params.gamma)
        if j == M - 1:
            total *= float((_pow(lum, params.alpha) * cs).mean())
        else:
            total *= float(cs.mean())
            x, y = haar_step(x), haar_step(y)
    return total


@dataclass(frozen=True)
class StrainField:
    lattice: LatticeDescriptor
    e11: np.ndarray
    e22: np.ndarray
    e33: np.ndarray
    e12: np.ndarray
    e13: np.ndarray
    e23: np.ndarray

    COMPONENTS = ("e11", "e22", "e33", "e12", "e13", "e23")

    def component(self, name: str) -> np.ndarray:
        if name not in self.COMPONENTS:
            raise ValidationError(f"unknown strain component {name!r}")
        return getattr(self, name)


def strain(field: DisplacementField) -> StrainField:
    """Symmetric small-strain tensor by central differences (one-sided at the boundary)."""
    lat = field.lattice
    if lat.kind is not Kind.CARTESIAN:
        raise ValidationError("strain is only defined on Cartesian lattices")
    if min(lat.extents) < 2:
        raise ValidationError("strain needs at least 2 points along every axis")
    comps = field.stacked()
    # d[i][j] = du_i / dx_j
    d = [np.gradient(comps[i], lat.spacing, edge_order=1) for i in range(3)]

    def sym(i, j):
        return 0.5 * (d[i][j] + d[j][i])

    return StrainField(lat, d[0][0], d[1][1], d[2][2], sym(0, 1), sym(0, 2), sym(1, 2))


def scanline(volume: Volume, axis: str, slice_index: int, line_index: int) -> list[tuple[float, float]]:
    """Grey values along one grid line.

    For a line along ``axis`` the remaining two axes (a, b) with a < b are
    fixed: ``slice_index`` selects b and ``line_index`` selects a.
    """
    lat = volume.lattice
    if lat.kind is not Kind.CARTESIAN:
        raise ValidationError("scanlines are taken on Cartesian volumes")
    if axis not in AXES:
        raise ValidationError(f"axis must be one of x, y, z; got {axis!r}")
    ax = AXES[axis]
    a, b = [k for k in range(3) if k != ax]
    ext = lat.extents
    if not 0 <= slice_index < ext[b]:
        raise ValidationError(f"slice_index {slice_index} outside 0..{ext[b] - 1}")
    if not 0 <= line_index < ext[a]:
        raise ValidationError(f"line_index {line_index} outside 0..{ext[a] - 1}")
    idx = [slice(None)] * 3
    idx[a] = line_index
    idx[b] = slice_index
    values = volume.data[tuple(idx)]
    coords = lat.origin[ax] + lat.spacing * np.arange(ext[ax])
    return [(float(c), float(v)) for c, v in zip(coords, values)]
