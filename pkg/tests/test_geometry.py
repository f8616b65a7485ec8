import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from morphflow.geometry import cell_geometry, divergence, gradient, operator_for
from morphflow.lattice import Kind, LatticeDescriptor
from morphflow.lifting import analyze
from morphflow.volume import Volume

KINDS = list(Kind)


def interior_mask(lat: LatticeDescriptor):
    """Points whose full Voronoi neighbourhood is stored."""
    op = operator_for(lat)
    return op.valid.all(axis=0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("s", [1.0, 2.0, 4.0])
def test_face_closure(kind, s):
    geo = cell_geometry(LatticeDescriptor(kind, (2, 2, 2), spacing=s))
    assert np.abs(geo.closure()).max() <= 1e-14 * s * s


def test_cartesian_cell():
    geo = cell_geometry(LatticeDescriptor(Kind.CARTESIAN, (2, 2, 2)))
    assert geo.n_faces == 6 and geo.cell_volume == 1.0 and np.all(geo.areas == 1.0)


def test_fcc_cell():
    geo = cell_geometry(LatticeDescriptor(Kind.FCC, (2, 2, 2)))
    assert geo.n_faces == 12 and geo.cell_volume == 2.0
    assert np.allclose(geo.areas, np.sqrt(2) / 2)
    # pyramid decomposition: sum of area * (distance to face) / 3 is the volume
    dist = np.linalg.norm(geo.neighbor_offsets, axis=1) / 2
    assert abs((geo.areas * dist).sum() / 3 - geo.cell_volume) < 1e-14


def test_cuboid_cell():
    geo = cell_geometry(LatticeDescriptor(Kind.TILTED_CUBOID, (2, 2, 2)))
    assert geo.cell_volume == 4.0
    assert sorted(np.round(geo.areas, 12)) == sorted(np.round([2 * np.sqrt(2)] * 4 + [2, 2], 12))
    dist = np.linalg.norm(geo.neighbor_offsets, axis=1) / 2
    assert abs((geo.areas * dist).sum() / 3 - 4.0) < 1e-14


@pytest.mark.parametrize("kind", KINDS)
def test_affine_exact(kind, rng):
    lat = LatticeDescriptor(kind, (6, 6, 6), spacing=2.0, origin=(1.0, -1.0, 0.5))
    a = rng.normal(size=3)
    vol = Volume(lat, (lat.sites() @ a + 0.7).reshape(lat.extents))
    g = gradient(vol).reshape(-1, 3)
    inside = interior_mask(lat)
    assert inside.sum() > 0
    assert np.abs(g[inside] - a).max() <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_two_x(kind):
    lat = LatticeDescriptor(kind, (5, 5, 5))
    vol = Volume(lat, (2 * lat.sites()[:, 0]).reshape(lat.extents))
    g = gradient(vol).reshape(-1, 3)[interior_mask(lat)]
    assert np.array_equal(g, np.tile([2.0, 0.0, 0.0], (len(g), 1)))


@pytest.mark.parametrize("kind", KINDS)
def test_constant_gives_zero(kind):
    lat = LatticeDescriptor(kind, (4, 4, 4))
    assert not gradient(Volume(lat, np.full(lat.extents, 0.3))).any()


def test_central_differences(rng):
    data = rng.random((6, 6, 6))
    g = gradient(Volume.from_array(data))
    ref = oracles.central_differences(data)
    inner = (slice(1, -1),) * 3
    assert np.abs(g[inner] - ref[inner]).max() <= 1e-12


def test_boundary_replication(rng):
    data = rng.random((5, 4, 3))
    g = gradient(Volume.from_array(data))
    assert np.allclose(g, oracles.clamped_differences(data), rtol=0, atol=1e-14)


def adjoint_gap(lat, rng):
    op = operator_for(lat)
    u = rng.normal(size=lat.size)
    p = rng.normal(size=(lat.size, 3))
    lhs = np.sum(op.grad(u) * p)
    rhs = np.sum(u * op.div(p))
    # both sides vanish on a single-point lattice
    return abs(lhs + rhs) / max(abs(lhs), abs(rhs), 1e-300)


@given(st.sampled_from(KINDS), st.tuples(*[st.integers(1, 6)] * 3), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_adjointness(kind, ext, seed):
    lat = LatticeDescriptor(kind, ext, spacing=1.5)
    assert adjoint_gap(lat, np.random.default_rng(seed)) <= 1e-10


def test_adjointness_on_lifted_fcc(rng):
    dec = analyze(Volume.from_array(rng.random((8, 8, 8))), 1)
    assert adjoint_gap(dec.coarsest.lattice, rng) <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_constant_dual_divergence_vanishes_inside(kind):
    lat = LatticeDescriptor(kind, (5, 5, 5))
    div = divergence(np.tile([0.3, -1.0, 2.0], lat.extents + (1,)), lat)
    assert np.abs(div.reshape(-1)[interior_mask(lat)]).max() < 1e-14


@pytest.mark.parametrize("kind", KINDS)
def test_operator_norm_below_bound(kind, rng):
    # power iteration on div(grad .): ||grad||^2 must stay below the solver's bound
    op = operator_for(LatticeDescriptor(kind, (8, 8, 8)))
    x = rng.normal(size=op.size)
    for _ in range(200):
        x = -op.div(op.grad(x))
        x /= np.linalg.norm(x)
    norm_sq = np.linalg.norm(op.div(op.grad(x)))
    assert norm_sq < 12.0
