"""Lattice descriptors and the storage layouts used for every grid in the package.

All three lattice kinds are stored as dense, box-shaped arrays.  The mapping
between an array index ``(i, j, k)`` and the point it represents is given by a
*layout*; positions are expressed as integer *grid coordinates* ``q`` in units
of the lattice spacing ``s`` (physical position = origin + s * q).

=================  =====================================  ======================
kind               grid coordinates of index (i, j, k)     Bravais basis / s
=================  =====================================  ======================
Cartesian          (i, j, k)                               e1, e2, e3
FCC                (i, j, 2k + (i + j) % 2)                (1,1,0) (1,0,1) (0,1,1)
TiltedCuboid       (i, 2j + i % 2, 2k)                     (1,1,0) (1,-1,0) (0,0,2)
=================  =====================================  ======================

Two more layouts (``fcc1``, ``cub1``, ``d2rem``) hold the points removed by the
lifting steps.  See :mod:`morphflow.lifting`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

__all__ = [
    "ValidationError",
    "Kind",
    "LatticeDescriptor",
    "cartesian",
    "layout_coords",
    "layout_index",
    "NEIGHBOR_OFFSETS",
]


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class Kind(str, enum.Enum):
    CARTESIAN = "cartesian"
    FCC = "fcc"
    TILTED_CUBOID = "tilted_cuboid"


# Integer basis (columns) in grid units, and its exact inverse.
_INT_BASIS = {
    Kind.CARTESIAN: np.eye(3, dtype=np.int64),
    Kind.FCC: np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=np.int64),
    Kind.TILTED_CUBOID: np.array([[1, 1, 0], [1, -1, 0], [0, 0, 2]], dtype=np.int64),
}
# entries are multiples of 1/2, so B^-1 q is exact in binary floating point
_INT_BASIS_INV = {
    Kind.CARTESIAN: np.eye(3),
    Kind.FCC: 0.5 * np.array([[1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]]),
    Kind.TILTED_CUBOID: 0.5 * np.array([[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 1.0]]),
}

_KIND_LAYOUT = {
    Kind.CARTESIAN: "cart",
    Kind.FCC: "fcc0",
    Kind.TILTED_CUBOID: "cub0",
}

# Voronoi neighbours in grid units.
NEIGHBOR_OFFSETS = {
    Kind.CARTESIAN: np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.int64,
    ),
    Kind.FCC: np.array(
        [
            [sx, sy, 0] for sx in (1, -1) for sy in (1, -1)
        ]
        + [[sx, 0, sz] for sx in (1, -1) for sz in (1, -1)]
        + [[0, sy, sz] for sy in (1, -1) for sz in (1, -1)],
        dtype=np.int64,
    ),
    Kind.TILTED_CUBOID: np.array(
        [[1, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0], [0, 0, 2], [0, 0, -2]],
        dtype=np.int64,
    ),
}


def _as_int3(values, name):
    out = tuple(int(v) for v in values)
    if len(out) != 3:
        raise ValidationError(f"{name} must have 3 entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class LatticeDescriptor:
    """Which lattice a volume lives on and how its array is laid out.

    ``spacing`` is the grid unit in finest-voxel edges; ``extents`` is the
    shape of the storage array.  ``level`` counts lifting steps from the
    finest grid.
    """

    kind: Kind
    extents: tuple[int, int, int]
    spacing: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        ext = _as_int3(self.extents, "extents")
        if min(ext) < 1:
            raise ValidationError(f"extents must be positive, got {ext}")
        object.__setattr__(self, "extents", ext)
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 3 or not all(math.isfinite(v) for v in origin):
            raise ValidationError(f"origin must be a finite 3-vector, got {self.origin}")
        object.__setattr__(self, "origin", origin)
        spacing = float(self.spacing)
        if not (spacing > 0 and math.isfinite(spacing)):
            raise ValidationError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "spacing", spacing)
        if int(self.level) < 0:
            raise ValidationError("level must be non-negative")
        object.__setattr__(self, "level", int(self.level))

    @property
    def layout(self) -> str:
        return _KIND_LAYOUT[self.kind]

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    @property
    def int_basis(self) -> np.ndarray:
        return _INT_BASIS[self.kind]

    @property
    def basis(self) -> np.ndarray:
        """Physical basis vectors as matrix columns."""
        return self.spacing * _INT_BASIS[self.kind].astype(float)

    @property
    def int_basis_inverse(self) -> np.ndarray:
        return _INT_BASIS_INV[self.kind]

    @property
    def basis_inverse(self) -> np.ndarray:
        return _INT_BASIS_INV[self.kind] / self.spacing

    def same_grid(self, other: "LatticeDescriptor") -> bool:
        """True if both describe the same set of points in the same storage order."""
        return (
            self.kind == other.kind
            and self.extents == other.extents
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def with_extents(self, extents) -> "LatticeDescriptor":
        return replace(self, extents=tuple(extents))

    def grid_coords(self) -> np.ndarray:
        """Integer grid coordinates of every stored point, shape (N, 3), C order."""
        return layout_coords(self.layout, self.extents)

    def sites(self) -> np.ndarray:
        """Physical positions of every stored point, shape (N, 3)."""
        return np.asarray(self.origin) + self.spacing * self.grid_coords()

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical bounding box of the stored points."""
        q_max = _layout_max(self.layout, self.extents)
        lo = np.asarray(self.origin)
        return lo, lo + self.spacing * q_max

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "basis": self.basis.T.tolist(),
            "origin": list(self.origin),
            "extents": list(self.extents),
            "spacing": self.spacing,
            "level": self.level,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LatticeDescriptor":
        lat = cls(
            kind=Kind(obj["kind"]),
            extents=tuple(obj["extents"]),
            spacing=obj.get("spacing", 1.0),
            origin=tuple(obj.get("origin", (0.0, 0.0, 0.0))),
            level=obj.get("level", 0),
        )
        if "basis" in obj and not np.allclose(np.asarray(obj["basis"]).T, lat.basis):
            raise ValidationError("sidecar basis does not match lattice kind and spacing")
        return lat


def cartesian(extents, spacing: float = 1.0, origin=(0.0, 0.0, 0.0), level: int = 0):
    return LatticeDescriptor(Kind.CARTESIAN, tuple(extents), spacing, tuple(origin), level)


# --- layouts -----------------------------------------------------------------


def _coords_from_index(layout, i, j, k):
    if layout == "cart":
        return i, j, k
    if layout in ("fcc0", "fcc1"):
        p = 0 if layout == "fcc0" else 1
        return i, j, 2 * k + (i + j + p) % 2
    if layout in ("cub0", "cub1"):
        p = 0 if layout == "cub0" else 1
        return i, 2 * j + (i + p) % 2, 2 * k + p
    if layout == "d2rem":
        return 2 * i + 1, 2 * j + 1, 2 * k
    if layout == "even":
        return 2 * i, 2 * j, 2 * k
    raise ValueError(f"unknown layout {layout!r}")


def _index_from_coords(layout, x, y, z):
    if layout == "cart":
        return x, y, z
    if layout in ("fcc0", "fcc1"):
        p = 0 if layout == "fcc0" else 1
        return x, y, (z - (x + y + p) % 2) // 2
    if layout in ("cub0", "cub1"):
        p = 0 if layout == "cub0" else 1
        return x, (y - (x + p) % 2) // 2, (z - p) // 2
    if layout == "d2rem":
        return (x - 1) // 2, (y - 1) // 2, z // 2
    if layout == "even":
        return x // 2, y // 2, z // 2
    raise ValueError(f"unknown layout {layout!r}")


def _layout_max(layout, extents):
    """Largest grid coordinate along each axis over all stored points."""
    n = np.asarray(extents) - 1
    if layout == "cart":
        return n.astype(float)
    if layout == "fcc0" or layout == "fcc1":
        odd = 1 if (n[0] > 0 or n[1] > 0 or layout == "fcc1") else 0
        return np.array([n[0], n[1], 2 * n[2] + odd], dtype=float)
    if layout in ("cub0", "cub1"):
        p = 0 if layout == "cub0" else 1
        y_max = 2 * n[1] + (1 if n[0] > 0 or p else 0)
        return np.array([n[0], y_max, 2 * n[2] + p], dtype=float)
    if layout == "d2rem":
        return np.array([2 * n[0] + 1, 2 * n[1] + 1, 2 * n[2]], dtype=float)
    return 2.0 * n


@lru_cache(maxsize=64)
def _cached_coords(layout, extents):
    i, j, k = np.indices(extents, dtype=np.int64).reshape(3, -1)
    q = np.stack(_coords_from_index(layout, i, j, k), axis=1)
    q.setflags(write=False)
    return q


def layout_coords(layout: str, extents) -> np.ndarray:
    """Grid coordinates of every array entry of ``layout`` (flattened C order)."""
    return _cached_coords(layout, tuple(int(e) for e in extents))


def layout_index(layout: str, q: np.ndarray, extents, clamp: bool = False):
    """Flat storage index of grid coordinates ``q`` (..., 3).

    Returns ``(index, valid)``.  ``valid`` is False where ``q`` is not a point
    of the layout.  Invalid entries get index 0 unless ``clamp`` is set, in
    which case they map to a nearby stored point (edge replication).
    """
    q = np.asarray(q, dtype=np.int64)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    i, j, k = _index_from_coords(layout, x, y, z)
    n0, n1, n2 = extents
    inside = (i >= 0) & (i < n0) & (j >= 0) & (j < n1) & (k >= 0) & (k < n2)
    bx, by, bz = _coords_from_index(layout, i, j, k)
    valid = inside & (bx == x) & (by == y) & (bz == z)
    if clamp:
        i = np.clip(i, 0, n0 - 1)
        j = np.clip(j, 0, n1 - 1)
        k = np.clip(k, 0, n2 - 1)
        flat = (i * n1 + j) * n2 + k
    else:
        flat = np.where(valid, (i * n1 + j) * n2 + k, 0)
    return flat, valid
