"""Scalar and vector fields on lattices, raw file I/O, interpolation and warping."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .lattice import Kind, LatticeDescriptor, ValidationError, cartesian, layout_index

__all__ = [
    "Volume",
    "DisplacementField",
    "VolumeMeta",
    "RawFormatError",
    "sample_flat",
    "load_raw",
    "save_raw",
    "load_volume",
    "save_field",
    "load_field",
    "lattice_to_physical",
    "interpolate",
    "sample",
    "warp",
]

_DTYPE_MAX = {"uint8": 255.0, "uint16": 65535.0}


class RawFormatError(OSError):
    """Raw file does not match the size implied by its metadata."""


def _frozen(array, dtype=None):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Volume:
    """Grey values on a lattice.  ``data`` has shape ``lattice.extents``."""

    lattice: LatticeDescriptor
    data: np.ndarray
    original_extents: tuple[int, int, int] | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.shape != self.lattice.extents:
            raise ValidationError(
                f"data shape {data.shape} does not match extents {self.lattice.extents}"
            )
        if not np.all(np.isfinite(data)):
            raise ValidationError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        if self.original_extents is not None:
            object.__setattr__(
                self, "original_extents", tuple(int(e) for e in self.original_extents)
            )

    @classmethod
    def from_array(cls, array, spacing: float = 1.0, origin=(0.0, 0.0, 0.0)) -> "Volume":
        array = np.asarray(array)
        if array.ndim != 3:
            raise ValidationError(f"expected a 3D array, got shape {array.shape}")
        return cls(cartesian(array.shape, spacing, origin), array)

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def with_data(self, data) -> "Volume":
        return Volume(self.lattice, np.asarray(data).reshape(self.lattice.extents),
                      self.original_extents)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Three displacement components in finest-voxel units, sharing one lattice."""

    lattice: LatticeDescriptor
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("u", "v", "w"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != self.lattice.extents:
                raise ValidationError(
                    f"component {name} has shape {arr.shape}, expected {self.lattice.extents}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"component {name} contains non-finite values")
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def zeros(cls, lattice: LatticeDescriptor) -> "DisplacementField":
        z = np.zeros(lattice.extents)
        return cls(lattice, z, z, z)

    @classmethod
    def constant(cls, lattice: LatticeDescriptor, vector) -> "DisplacementField":
        a, b, c = (np.full(lattice.extents, float(x)) for x in vector)
        return cls(lattice, a, b, c)

    @classmethod
    def from_stacked(cls, lattice: LatticeDescriptor, stacked) -> "DisplacementField":
        stacked = np.asarray(stacked).reshape((3,) + lattice.extents)
        return cls(lattice, stacked[0], stacked[1], stacked[2])

    def stacked(self) -> np.ndarray:
        """Components as an array of shape (3, *extents)."""
        return np.stack([self.u, self.v, self.w])

    def flat(self) -> np.ndarray:
        """Components as an array of shape (3, N)."""
        return self.stacked().reshape(3, -1)


@dataclass(frozen=True)
class VolumeMeta:
    """Shape and sample type of a headerless raw file (x varies fastest)."""

    shape: tuple[int, int, int]
    dtype: str = "uint8"


def load_raw(path, meta: VolumeMeta) -> Volume:
    """Read a little-endian raw volume and normalise grey values to [0, 1]."""
    if meta.dtype not in ("uint8", "uint16", "float32"):
        raise ValidationError(f"unsupported dtype {meta.dtype!r}")
    shape = tuple(int(s) for s in meta.shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ValidationError(f"invalid shape {meta.shape}")
    dtype = np.dtype(meta.dtype).newbyteorder("<")
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise RawFormatError(f"{path}: expected {expected} bytes, found {actual}")
    raw = np.fromfile(path, dtype=dtype).reshape(shape, order="F")
    if meta.dtype == "float32":
        data = raw.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"{path}: non-finite samples")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValidationError(f"{path}: float samples outside [0, 1]")
    else:
        data = (raw.astype(np.float64) / _DTYPE_MAX[meta.dtype]).astype(np.float32)
    return Volume(cartesian(shape), data)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def save_raw(volume: Volume, path) -> None:
    """Write ``volume`` as raw little-endian floats plus a JSON sidecar.

    The sample type follows the volume (float32 or float64) so the round trip
    is exact; the sidecar records it.
    """
    dtype = np.dtype(volume.data.dtype).newbyteorder("<")
    meta = volume.lattice.to_json()
    meta["original_extents"] = list(volume.original_extents or volume.lattice.extents)
    meta["dtype"] = volume.data.dtype.name
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(np.asarray(volume.data, dtype=dtype).tobytes(order="F"))
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_volume(path) -> Volume:
    """Read a volume written by :func:`save_raw` (sidecar required)."""
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise RawFormatError(f"{path}: missing sidecar {side.name}; use load_raw with a VolumeMeta")
    meta = json.loads(side.read_text())
    lattice = LatticeDescriptor.from_json(meta)
    dtype = np.dtype(meta.get("dtype", "float32")).newbyteorder("<")
    expected = lattice.size * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise RawFormatError(f"{path}: expected {expected} bytes, found {actual}")
    data = np.fromfile(path, dtype=dtype).reshape(lattice.extents, order="F")
    orig = meta.get("original_extents")
    return Volume(lattice, data.astype(dtype.newbyteorder("=")), tuple(orig) if orig else None)


def save_field(field: DisplacementField, prefix) -> list[Path]:
    """Write u, v, w as ``<prefix>_{u,v,w}.raw`` (float32) with ``<prefix>.json``."""
    prefix = str(prefix)
    paths = []
    for name in ("u", "v", "w"):
        p = Path(f"{prefix}_{name}.raw")
        p.write_bytes(np.asarray(getattr(field, name), dtype="<f4").tobytes(order="F"))
        paths.append(p)
    meta = field.lattice.to_json()
    meta["dtype"] = "float32"
    meta["components"] = [p.name for p in paths]
    side = Path(prefix + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return paths + [side]


def load_field(prefix) -> DisplacementField:
    prefix = str(prefix)
    meta = json.loads(Path(prefix + ".json").read_text())
    lattice = LatticeDescriptor.from_json(meta)
    comps = []
    for name in ("u", "v", "w"):
        p = Path(f"{prefix}_{name}.raw")
        expected = lattice.size * 4
        if os.path.getsize(p) != expected:
            raise RawFormatError(f"{p}: expected {expected} bytes, found {os.path.getsize(p)}")
        comps.append(np.fromfile(p, dtype="<f4").reshape(lattice.extents, order="F"))
    return DisplacementField(lattice, *comps)


# --- geometry of points --------------------------------------------------------


def lattice_to_physical(lattice: LatticeDescriptor, index) -> np.ndarray:
    """Physical position of the lattice point with Bravais coordinates ``index``.

    Raises :class:`IndexError` when that point is not stored in the volume.
    """
    n = np.asarray(index, dtype=np.int64)
    q = lattice.int_basis @ n
    _, valid = layout_index(lattice.layout, q, lattice.extents)
    if not bool(valid):
        raise IndexError(f"lattice point {tuple(n)} lies outside the stored extents")
    return np.asarray(lattice.origin) + lattice.spacing * q.astype(float)


_LAYOUT_CODE = {"cart": 0, "fcc0": 1, "cub0": 2}


@numba.njit(cache=True)
def _stencil_kernel(c, basis, code, n0, n1, n2, idx, weights):
    # c: (N, 3) Bravais coordinates; fills idx/weights (8, N)
    for p in range(c.shape[0]):
        f0 = np.floor(c[p, 0])
        f1 = np.floor(c[p, 1])
        f2 = np.floor(c[p, 2])
        t0 = c[p, 0] - f0
        t1 = c[p, 1] - f1
        t2 = c[p, 2] - f2
        a0 = np.int64(f0)
        a1 = np.int64(f1)
        a2 = np.int64(f2)
        corner = 0
        for dx in range(2):
            for dy in range(2):
                for dz in range(2):
                    b0 = a0 + dx
                    b1 = a1 + dy
                    b2 = a2 + dz
                    x = basis[0, 0] * b0 + basis[0, 1] * b1 + basis[0, 2] * b2
                    y = basis[1, 0] * b0 + basis[1, 1] * b1 + basis[1, 2] * b2
                    z = basis[2, 0] * b0 + basis[2, 1] * b1 + basis[2, 2] * b2
                    if code == 0:
                        i, j, k = x, y, z
                    elif code == 1:
                        i, j, k = x, y, (z - (x + y) % 2) // 2
                    else:
                        i, j, k = x, (y - x % 2) // 2, z // 2
                    i = min(max(i, 0), n0 - 1)
                    j = min(max(j, 0), n1 - 1)
                    k = min(max(k, 0), n2 - 1)
                    idx[corner, p] = (i * n1 + j) * n2 + k
                    wx = t0 if dx else 1.0 - t0
                    wy = t1 if dy else 1.0 - t1
                    wz = t2 if dz else 1.0 - t2
                    weights[corner, p] = wx * wy * wz
                    corner += 1


def _stencil(lat: LatticeDescriptor, points):
    """Flat corner indices (8, N) and trilinear weights (8, N) for physical ``points``.

    Corners that are not stored replicate a nearby stored value.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = lat.bounds()
    pts = np.clip(pts, lo, hi)
    rel = (pts - np.asarray(lat.origin)) / lat.spacing
    c = np.ascontiguousarray(rel @ lat.int_basis_inverse.T)
    idx = np.empty((8, len(pts)), dtype=np.int64)
    weights = np.empty((8, len(pts)))
    n0, n1, n2 = lat.extents
    _stencil_kernel(c, lat.int_basis, _LAYOUT_CODE[lat.layout], n0, n1, n2, idx, weights)
    return idx, weights


def sample_flat(lattice: LatticeDescriptor, values, points) -> np.ndarray:
    """Interpolate flat channels ``values`` (..., N_sites) at ``points``; see :func:`sample`."""
    values = np.asarray(values, dtype=np.float64)
    idx, weights = _stencil(lattice, points)
    out = np.zeros(values.shape[:-1] + (idx.shape[1],))
    for corner in range(8):
        out += weights[corner] * values[..., idx[corner]]
    return out


def sample(volume: Volume, points) -> np.ndarray:
    """Trilinear interpolation in Bravais coordinates at physical ``points`` (N, 3).

    Points are first clamped to the physical bounding box of the stored sites,
    lattice corners outside the stored set replicate the nearest stored value.
    """
    return sample_flat(volume.lattice, volume.data.reshape(-1), points)


def interpolate(volume: Volume, point) -> float:
    """Grey value at one physical point (see :func:`sample`)."""
    return float(sample(volume, np.asarray(point, dtype=float).reshape(1, 3))[0])


def warp(moving: Volume, field: DisplacementField) -> Volume:
    """Resample ``moving`` at every site displaced by ``field``: out(p) = I(p + u(p))."""
    if not moving.lattice.same_grid(field.lattice):
        raise ValidationError("moving volume and displacement field live on different lattices")
    pts = moving.lattice.sites() + field.flat().T
    return Volume(moving.lattice, sample(moving, pts).reshape(moving.lattice.extents),
                  moving.original_extents)
