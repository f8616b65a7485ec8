"""Factor-2 Cartesian pyramids used as baselines: Gaussian and Haar approximations."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .lattice import Kind, LatticeDescriptor, ValidationError
from .volume import Volume

__all__ = ["gaussian_kernel_1d", "gaussian_pyramid", "haar_pyramid", "haar_step"]


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian on integer offsets |m| <= 2*sigma, normalised to sum 1.

    The 3D kernel is the outer product of three copies; since the support is
    a cube, renormalising the product equals the product of the normalised
    1D factors.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    radius = int(math.floor(2.0 * sigma))
    m = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-(m**2) / (2.0 * sigma**2))
    return w / w.sum()


def _check_levels(volume: Volume, levels: int):
    if volume.lattice.kind is not Kind.CARTESIAN:
        raise ValidationError("pyramids are built on Cartesian volumes")
    if levels < 0:
        raise ValidationError("levels must be non-negative")
    ext = np.array(volume.lattice.extents)
    for n in range(levels):
        if ext.min() < 2:
            raise ValidationError(
                f"{levels} pyramid levels requested but extents {volume.lattice.extents} "
                f"support at most {n}"
            )
        ext = (ext + 1) // 2


def _level_lattice(parent: LatticeDescriptor, extents, shift: float) -> LatticeDescriptor:
    origin = tuple(o + shift * parent.spacing for o in parent.origin)
    return LatticeDescriptor(Kind.CARTESIAN, extents, 2 * parent.spacing, origin, parent.level + 3)


def gaussian_pyramid(volume: Volume, sigma: float = 1.0, levels: int = 1) -> list[Volume]:
    """Blur with a truncated Gaussian and keep every second sample, ``levels`` times.

    Returns ``levels + 1`` volumes, the input first.  Boundaries replicate edges.
    """
    _check_levels(volume, levels)
    kernel = gaussian_kernel_1d(sigma)
    out = [volume]
    for _ in range(levels):
        prev = out[-1]
        data = np.asarray(prev.data, dtype=np.float64)
        for axis in range(3):
            data = ndimage.correlate1d(data, kernel, axis=axis, mode="nearest")
        data = data[::2, ::2, ::2]
        out.append(Volume(_level_lattice(prev.lattice, data.shape, 0.0), data))
    return out


def haar_step(data: np.ndarray) -> np.ndarray:
    """Pairwise means f1(k) = (f(2k) + f(2k+1)) / 2 along each axis in turn."""
    data = np.asarray(data, dtype=np.float64)
    pad = [(0, n % 2) for n in data.shape]
    if any(p[1] for p in pad):
        data = np.pad(data, pad, mode="edge")
    for axis in range(3):
        even = np.take(data, np.arange(0, data.shape[axis], 2), axis=axis)
        odd = np.take(data, np.arange(1, data.shape[axis], 2), axis=axis)
        data = (even + odd) / 2.0
    return data


def haar_pyramid(volume: Volume, levels: int = 1) -> list[Volume]:
    """Haar approximations (2x2x2 block means), ``levels + 1`` volumes, input first.

    Each coarse sample sits at the centre of its block, so the level lattice
    origin moves by half a parent spacing per level.
    """
    _check_levels(volume, levels)
    out = [volume]
    for _ in range(levels):
        prev = out[-1]
        data = haar_step(prev.data)
        out.append(Volume(_level_lattice(prev.lattice, data.shape, 0.5), data))
    return out
