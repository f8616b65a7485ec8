"""Finite-volume gradients and their adjoint divergence on all lattice kinds.

The gradient at a cell P follows from the divergence theorem with the face
value taken as the mean of the two adjacent cells::

    grad u(P) = 1/|Omega| * sum_f (u(P) + u(Q_f))/2 * |S_f| n_f
              = sum_f w_f * (u(Q_f) - u(P)),      w_f = |S_f| n_f / (2 |Omega|)

(the two forms agree because the cell is closed, sum_f |S_f| n_f = 0).  A
neighbour outside the volume is replaced by P itself, which is edge
replication on Cartesian grids.  ``divergence`` is the exact negative adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .lattice import NEIGHBOR_OFFSETS, Kind, LatticeDescriptor, ValidationError, layout_index
from .volume import Volume

__all__ = ["CellGeometry", "cell_geometry", "DiffOperator", "operator_for", "gradient", "divergence"]

_SQRT2 = np.sqrt(2.0)

# face areas in grid units^2, ordered like NEIGHBOR_OFFSETS; cell volume in grid units^3
_FACE_AREAS = {
    Kind.CARTESIAN: np.ones(6),
    Kind.FCC: np.full(12, _SQRT2 / 2),
    Kind.TILTED_CUBOID: np.array([2 * _SQRT2] * 4 + [2.0, 2.0]),
}
_CELL_VOLUME = {Kind.CARTESIAN: 1.0, Kind.FCC: 2.0, Kind.TILTED_CUBOID: 4.0}


@dataclass(frozen=True)
class CellGeometry:
    """Voronoi cell of a lattice point: volume and one entry per face."""

    cell_volume: float
    normals: np.ndarray  # (F, 3) unit vectors
    areas: np.ndarray  # (F,)
    neighbor_offsets: np.ndarray  # (F, 3) physical

    @property
    def n_faces(self) -> int:
        return len(self.areas)

    def closure(self) -> np.ndarray:
        """sum_f |S_f| n_f, zero for a closed cell."""
        return (self.areas[:, None] * self.normals).sum(axis=0)


def cell_geometry(lattice: LatticeDescriptor) -> CellGeometry:
    kind = lattice.kind
    if kind not in _CELL_VOLUME:
        raise ValidationError(f"unsupported lattice kind {kind}")
    s = lattice.spacing
    offsets = NEIGHBOR_OFFSETS[kind].astype(float)
    normals = offsets / np.linalg.norm(offsets, axis=1, keepdims=True)
    return CellGeometry(
        cell_volume=_CELL_VOLUME[kind] * s**3,
        normals=normals,
        areas=_FACE_AREAS[kind] * s**2,
        neighbor_offsets=offsets * s,
    )


@numba.njit(cache=True)
def _grad_kernel(u, nbr, weights, out):
    # u: (C, N); out: (C, N, 3)
    n_faces, n = nbr.shape
    for c in range(u.shape[0]):
        for i in range(n):
            gx = 0.0
            gy = 0.0
            gz = 0.0
            ui = u[c, i]
            for f in range(n_faces):
                d = u[c, nbr[f, i]] - ui
                gx += d * weights[f, 0]
                gy += d * weights[f, 1]
                gz += d * weights[f, 2]
            out[c, i, 0] = gx
            out[c, i, 1] = gy
            out[c, i, 2] = gz


@numba.njit(cache=True)
def _div_kernel(p, nbr, valid, weights, out):
    # p: (C, N, 3); out: (C, N)
    n_faces, n = nbr.shape
    for c in range(p.shape[0]):
        for i in range(n):
            acc = 0.0
            for f in range(n_faces):
                if valid[f, i]:
                    j = nbr[f, i]
                    acc += weights[f, 0] * (p[c, i, 0] + p[c, j, 0])
                    acc += weights[f, 1] * (p[c, i, 1] + p[c, j, 1])
                    acc += weights[f, 2] * (p[c, i, 2] + p[c, j, 2])
            out[c, i] = acc


class DiffOperator:
    """Gradient/divergence pair for one lattice, with cached neighbour tables."""

    def __init__(self, lattice: LatticeDescriptor):
        self.lattice = lattice
        geo = cell_geometry(lattice)
        self.geometry = geo
        self.weights = geo.areas[:, None] * geo.normals / (2.0 * geo.cell_volume)  # (F, 3)
        q = lattice.grid_coords()
        n = len(q)
        nbr = np.empty((geo.n_faces, n), dtype=np.intp)
        valid = np.empty((geo.n_faces, n), dtype=bool)
        self_idx = np.arange(n)
        for f, d in enumerate(NEIGHBOR_OFFSETS[lattice.kind]):
            idx, ok = layout_index(lattice.layout, q + d, lattice.extents)
            nbr[f] = np.where(ok, idx, self_idx)
            valid[f] = ok
        self.neighbors = nbr
        self.valid = valid

    @property
    def size(self) -> int:
        return self.neighbors.shape[1]

    def grad(self, u: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Gradient of flat values ``u`` (..., N) -> (..., N, 3)."""
        u = np.asarray(u, dtype=np.float64)
        lead = u.shape[:-1]
        u2 = np.ascontiguousarray(u.reshape(-1, u.shape[-1]))
        if out is None:
            out = np.empty(u2.shape + (3,))
        _grad_kernel(u2, self.neighbors, self.weights, out.reshape(u2.shape + (3,)))
        return out.reshape(lead + (u.shape[-1], 3))

    def div(self, p: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Divergence of flat vectors ``p`` (..., N, 3) -> (..., N); equals -grad^T."""
        p = np.asarray(p, dtype=np.float64)
        lead = p.shape[:-2]
        p2 = np.ascontiguousarray(p.reshape((-1,) + p.shape[-2:]))
        if out is None:
            out = np.empty(p2.shape[:2])
        _div_kernel(p2, self.neighbors, self.valid, self.weights, out.reshape(p2.shape[:2]))
        return out.reshape(lead + (p.shape[-2],))


@lru_cache(maxsize=32)
def _operator_cached(lattice: LatticeDescriptor) -> DiffOperator:
    return DiffOperator(lattice)


def operator_for(lattice: LatticeDescriptor) -> DiffOperator:
    # level does not affect geometry; normalise it away for the cache key
    return _operator_cached(lattice.__class__(lattice.kind, lattice.extents, lattice.spacing,
                                              lattice.origin, 0))


def gradient(field: Volume) -> np.ndarray:
    """Lattice-aware gradient of a scalar volume, shape (*extents, 3)."""
    op = operator_for(field.lattice)
    return op.grad(field.data.reshape(-1)).reshape(field.lattice.extents + (3,))


def divergence(dual: np.ndarray, lattice: LatticeDescriptor) -> np.ndarray:
    """Divergence of a vector field of shape (*extents, 3) on ``lattice``."""
    dual = np.asarray(dual, dtype=np.float64)
    if dual.shape != lattice.extents + (3,):
        raise ValidationError(f"dual field shape {dual.shape} does not match {lattice.extents}")
    op = operator_for(lattice)
    return op.div(dual.reshape(-1, 3)).reshape(lattice.extents)
