import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs

from grac.errors import MissingNeighbourError
from grac.lattice import (TRIANGULAR, LatticeBasis, NN_DIRECTIONS, SiteIndex,
                          build_reference_config, d2nn_sq, defect_row,
                          discrete_h1_norm, finite_difference_stencil,
                          hexagon_ring, hop_distance, layer_index, row_extent,
                          stencil, voronoi_volume)


def test_single_layer_hexagon():
    cfg = build_reference_config(0, 1)
    assert len(cfg) == 7
    assert set(map(tuple, cfg.sites)) == {(0, 0)} | set(map(tuple, NN_DIRECTIONS))


def test_defect_rows():
    assert len(defect_row(0)) == 0
    assert list(defect_row(2)) == [0, 1]
    assert list(defect_row(3)) == [-1, 0, 1]
    assert list(defect_row(11)) == list(range(-5, 6))


@pytest.mark.parametrize("k", [0, 1, 2, 3, 11])
def test_layer_sizes(k):
    cfg = build_reference_config(k, 6, remove_defect=False)
    n_row = max(len(defect_row(k)), 1)
    counts = np.bincount(cfg.layers)
    assert counts[0] == n_row
    for n in range(1, 7):
        assert counts[n] == 6 * n + 2 * (n_row - 1)


def test_defect_removed():
    cfg = build_reference_config(2, 4)
    assert len(cfg) == len(build_reference_config(2, 4, remove_defect=False)) - 2
    assert (cfg.lookup(np.array([[0, 0], [1, 0]])) < 0).all()
    np.testing.assert_array_equal(cfg.defect_sites, [[0, 0], [1, 0]])


def test_hop_distance():
    assert hop_distance(np.array([1, 1])) == 2
    assert hop_distance(np.array([1, -1])) == 1
    assert hop_distance(np.array([2, -1])) == 2
    assert hop_distance(np.array([0, 0])) == 0


def test_stencils():
    s1 = stencil(1)
    assert s1.size == 6
    np.testing.assert_array_equal(s1.directions[s1.half], NN_DIRECTIONS[:3])
    s2 = stencil(2)
    assert s2.size == 18
    np.testing.assert_array_equal(s2.directions[6], 2 * s2.directions[0])
    # point symmetry and the -rho map
    assert not s2.directions.sum(axis=0).any()
    np.testing.assert_array_equal(s2.directions[s2.neg], -s2.directions)
    assert all(hop_distance(d) <= 2 for d in s2.directions)
    assert len(s2.half) == 9


def test_hexagon_ring_matches_layers():
    ext = row_extent(11)
    for s in range(1, 5):
        ring = hexagon_ring(s, ext)
        assert (layer_index(ring, ext) == s).all()
        assert len(np.unique(ring, axis=0)) == len(ring)


def test_site_index_absent():
    idx = SiteIndex(np.array([[0, 0], [2, -1]]))
    np.testing.assert_array_equal(idx(np.array([[2, -1], [5, 5], [0, 0]])), [1, -1, 0])


@pytest.fixture(scope="module")
def patch():
    return build_reference_config(0, 3)


def test_fd_stencil_affine_and_const(patch):
    st = stencil(1)
    F = np.array([[1.1, 0.2], [-0.3, 0.9]])
    v = patch.positions @ F.T
    D = finite_difference_stencil(patch, v, (0, 0), st)
    np.testing.assert_allclose(D, st.physical() @ F.T, atol=1e-14)
    assert not finite_difference_stencil(patch, np.ones((len(patch), 2)), (1, 0), st).any()


def test_fd_stencil_direct(patch, rng):
    st = stencil(2)
    v = rng.standard_normal((len(patch), 2))
    D = finite_difference_stencil(patch, v, (0, 0), st)
    l = patch.lookup(np.array([0, 0]))
    for r, d in enumerate(st.directions):
        np.testing.assert_array_equal(D[r], v[patch.lookup(d)] - v[l])
    with pytest.raises(MissingNeighbourError):
        finite_difference_stencil(patch, v, (3, 0), st)


def test_d2nn(patch, rng):
    F = rng.standard_normal((2, 2))
    assert d2nn_sq(patch, patch.positions @ F.T, (0, 0)) < 1e-28
    # |x|^2: the second difference along b is 2|b|^2 = 2 for unit bonds
    v = np.sum(patch.positions**2, axis=1)
    assert d2nn_sq(patch, v, (1, 0)) == pytest.approx(3 * 4.0)
    bump = np.zeros((len(patch), 2))
    bump[patch.lookup(np.array([0, 0]))] = [0.3, 0.4]
    assert d2nn_sq(patch, bump, (0, 0)) == pytest.approx(3 * 4 * 0.25)


def test_voronoi_volume():
    assert voronoi_volume() == pytest.approx(np.sqrt(3) / 2)
    assert voronoi_volume(LatticeBasis(np.eye(2))) == 1.0
    assert voronoi_volume(LatticeBasis(2 * TRIANGULAR.A)) == pytest.approx(4 * np.sqrt(3) / 2)


def test_h1_norm(patch, rng):
    st = stencil(2)
    assert discrete_h1_norm(patch, np.zeros(len(patch)), st) == 0
    F = rng.standard_normal((2, 2))
    v = patch.positions @ F.T
    total = 0.0
    for l, x in enumerate(patch.sites):
        for d, rho in zip(st.directions, st.physical()):
            m = patch.lookup(x + d)
            if m >= 0:
                total += np.sum((v[m] - v[l]) ** 2) / np.dot(rho, rho)
    assert discrete_h1_norm(patch, v, st) == pytest.approx(np.sqrt(total), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(hs.integers(-8, 8), hs.integers(-8, 8))
def test_hop_distance_is_nn_graph_distance(i, j):
    # breadth-first search on the nearest-neighbour graph
    target, seen, frontier, dist = (i, j), {(0, 0)}, [(0, 0)], 0
    while target not in seen:
        dist += 1
        frontier = [(a + d[0], b + d[1]) for a, b in frontier for d in NN_DIRECTIONS
                    if (a + d[0], b + d[1]) not in seen]
        seen.update(frontier)
    assert hop_distance(np.array([i, j])) == dist
