"""Synthetic concrete-like phantoms and ground-truth deformations."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import Kind, ValidationError
from .volume import DisplacementField, Volume, sample

__all__ = ["CrackSpec", "PhantomSpec", "make_phantom", "Translate", "CrackOpen", "deform", "PRESETS"]


@dataclass(frozen=True)
class CrackSpec:
    """Dark planar slab covering indices [position, position + opening) along ``axis``."""

    axis: int = 2
    position: int = 16
    opening: int = 2
    grey: float = 0.05


@dataclass(frozen=True)
class PhantomSpec:
    extents: tuple[int, int, int] = (32, 32, 32)
    grain_count: int = 20
    grain_radius_range: tuple[float, float] = (2.5, 5.0)
    grain_grey: float = 0.3
    matrix_grey: float = 0.7
    crack: CrackSpec | None = None
    noise_sigma: float = 0.01
    seed: int = 0
    edge_width: float = 1.5  # width of the linear grey ramp at grain boundaries, voxels
    min_gap: float = 1.0
    max_tries: int = 10_000

    def __post_init__(self):
        for name in ("grain_grey", "matrix_grey"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.crack is not None:
            if isinstance(self.crack, dict):
                object.__setattr__(self, "crack", CrackSpec(**self.crack))
            if self.crack.opening < 0 or not 0.0 <= self.crack.grey <= 1.0:
                raise ValidationError("crack opening must be >= 0 and grey in [0, 1]")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")
        lo, hi = self.grain_radius_range
        if not 0 < lo <= hi:
            raise ValidationError("grain_radius_range must satisfy 0 < min <= max")

    def to_json(self) -> dict:
        return asdict(self)


def _place_grains(spec: PhantomSpec, rng: np.random.Generator):
    ext = np.array(spec.extents, dtype=float)
    centres, radii = [], []
    tries = 0
    while len(centres) < spec.grain_count:
        tries += 1
        if tries > spec.max_tries:
            raise ValidationError(
                f"could only place {len(centres)} of {spec.grain_count} grains "
                f"after {spec.max_tries} attempts"
            )
        r = rng.uniform(*spec.grain_radius_range)
        c = rng.uniform(0.0, 1.0, size=3) * (ext - 1)
        if centres:
            dist = np.linalg.norm(np.array(centres) - c, axis=1)
            if np.any(dist < np.array(radii) + r + spec.min_gap):
                continue
        centres.append(c)
        radii.append(r)
    return centres, radii


def make_phantom(spec: PhantomSpec) -> Volume:
    """Mortar matrix with non-overlapping spherical grains, optional crack, noise."""
    rng = np.random.default_rng(spec.seed)
    data = np.full(spec.extents, spec.matrix_grey, dtype=np.float64)
    grid = np.indices(spec.extents, dtype=np.float64)
    for c, r in zip(*_place_grains(spec, rng)):
        lo = np.maximum(np.floor(c - r - spec.edge_width) , 0).astype(int)
        hi = np.minimum(np.ceil(c + r + spec.edge_width) + 1, spec.extents).astype(int)
        box = tuple(slice(a, b) for a, b in zip(lo, hi))
        dist = np.sqrt(sum((grid[a][box] - c[a]) ** 2 for a in range(3)))
        if spec.edge_width > 0:
            frac = np.clip((r - dist) / spec.edge_width + 0.5, 0.0, 1.0)
        else:
            frac = (dist <= r).astype(float)
        data[box] += frac * (spec.grain_grey - spec.matrix_grey)
    if spec.crack is not None and spec.crack.opening > 0:
        sl = [slice(None)] * 3
        sl[spec.crack.axis] = slice(spec.crack.position, spec.crack.position + spec.crack.opening)
        data[tuple(sl)] = spec.crack.grey
    if spec.noise_sigma > 0:
        data += rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return Volume.from_array(np.clip(data, 0.0, 1.0))


@dataclass(frozen=True)
class Translate:
    shift: tuple[float, float, float]


@dataclass(frozen=True)
class CrackOpen:
    """Material beyond ``position`` along ``axis`` moves rigidly by ``opening``.

    The opened gap is filled with ``gap_grey`` (the volume minimum if None).
    """

    axis: int = 2
    position: float = 16.0
    opening: float = 2.0
    gap_grey: float | None = None


def deform(volume: Volume, truth) -> tuple[Volume, DisplacementField]:
    """Return ``(moving, truth_field)`` with moving(x + u(x)) = volume(x).

    ``moving`` is resampled by backward lookup, the same convention as
    :func:`morphflow.volume.warp`.
    """
    lat = volume.lattice
    if lat.kind is not Kind.CARTESIAN:
        raise ValidationError("deform expects a Cartesian volume")
    sites = lat.sites()
    if isinstance(truth, Translate):
        t = np.asarray(truth.shift, dtype=float)
        moved = sample(volume, sites - t)
        field = DisplacementField.constant(lat, t)
    elif isinstance(truth, CrackOpen):
        a = truth.axis
        e = np.zeros(3)
        e[a] = truth.opening
        coord = sites[:, a]
        beyond = coord > truth.position + truth.opening
        gap = (coord > truth.position) & ~beyond
        moved = sample(volume, sites).copy()
        moved[beyond] = sample(volume, sites[beyond] - e)
        fill = float(volume.data.min()) if truth.gap_grey is None else truth.gap_grey
        moved[gap] = fill
        mask = (coord > truth.position).reshape(lat.extents)
        comps = [np.where(mask, e[i], 0.0) for i in range(3)]
        field = DisplacementField(lat, *comps)
    else:
        raise ValidationError(f"unknown deformation {truth!r}")
    return Volume(lat, moved.reshape(lat.extents)), field


PRESETS = {
    "grains32": PhantomSpec(extents=(32, 32, 32), grain_count=20),
    "crack32": PhantomSpec(extents=(32, 32, 32), grain_count=20,
                           crack=CrackSpec(axis=2, position=16, opening=2)),
    "grains64": PhantomSpec(extents=(64, 64, 64), grain_count=120),
    "crack64": PhantomSpec(extents=(64, 64, 64), grain_count=120,
                           crack=CrackSpec(axis=2, position=32, opening=2)),
}
