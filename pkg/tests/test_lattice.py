from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochrte.lattice import LatticeError, build_lattice, bz_grid, fold_index, fold_k


def test_square_dual_and_volumes():
    lat = build_lattice(2, [[2.0, 0.0], [0.0, 0.5]])
    assert np.allclose(lat.dual, [[np.pi, 0.0], [0.0, 4 * np.pi]])
    assert lat.cell_volume == pytest.approx(1.0)
    assert lat.cell_volume * lat.bz_volume == pytest.approx((2 * np.pi) ** 2, rel=1e-14)


@pytest.mark.parametrize("basis", [[[1.0]], [[1.0, 0.0], [0.5, np.sqrt(3) / 2]], [[1, 0.2, 0], [0, 1, 0.3], [0.1, 0, 2]]])
def test_duality(basis):
    lat = build_lattice(len(basis), basis)
    d = lat.dim
    assert np.max(np.abs(lat.direct @ lat.dual.T - 2 * np.pi * np.eye(d))) < 1e-12
    assert abs(lat.cell_volume * lat.bz_volume / (2 * np.pi) ** d - 1) < 1e-12


def test_singular_basis_rejected():
    with pytest.raises(LatticeError, match="singular|condition"):
        build_lattice(2, [[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(LatticeError):
        build_lattice(2, [[1.0]])


def test_fold_zone_boundary_is_half_open(lat1):
    q, mu = fold_k(np.array([np.pi]), lat1)
    assert q[0] == pytest.approx(-np.pi)
    assert mu[0] == pytest.approx(2 * np.pi)
    q, mu = fold_k(np.array([-np.pi]), lat1)
    assert q[0] == pytest.approx(-np.pi) and mu[0] == pytest.approx(0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_fold_property_2d(kx, ky):
    lat = build_lattice(2, [[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    k = np.array([kx, ky])
    q, n = fold_index(k, lat)
    frac = lat.to_fractional(q)
    assert np.all(frac >= -0.5 - 1e-12) and np.all(frac < 0.5 + 1e-12)
    assert np.allclose(q + n @ lat.dual, k, atol=1e-9)


def test_grid_weights_and_labels(lat2):
    g = bz_grid(lat2, 5)
    assert g.size == 25
    assert g.weights.sum() == pytest.approx(lat2.bz_volume, rel=1e-14)
    assert g.index_of([0, 0]) == 0
    assert g.index_of([6, -1]) == g.index_of([1, 4])
    # a smooth periodic function integrates exactly on the uniform grid
    f = np.cos(g.points @ lat2.direct[0])
    assert abs(np.sum(f * g.weights)) < 1e-12


def test_grid_difference_is_exact(lat2):
    g = bz_grid(lat2, 4)
    for i in range(g.size):
        for k in range(g.size):
            idx, n = g.difference(i, k)
            assert np.allclose(g.points[i] - g.points[k], g.points[idx] + n @ lat2.dual, atol=1e-12)


def test_even_grid_contains_zone_edge(lat1):
    g = bz_grid(lat1, 2)
    assert np.allclose(sorted(g.points[:, 0]), [-np.pi, 0.0])
