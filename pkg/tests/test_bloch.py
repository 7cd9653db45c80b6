from __future__ import annotations

import numpy as np
import pytest

from blochrte.bloch import (
    BandError,
    CellVectorPotential,
    PeriodicPotential,
    PotentialError,
    _make_basis,
    assemble_hamiltonian,
    basis_with_count,
    bloch_orthogonality_check,
    group_velocity,
    plane_wave_basis,
    solve_at,
    solve_bands,
    solve_grid,
)
from blochrte.lattice import build_lattice, bz_grid


def test_basis_count_and_order(lat1, lat2):
    b = basis_with_count(lat1, 21)
    assert b.size == 21
    assert list(b.coords[:3, 0]) == [0, -1, 1]
    b2 = basis_with_count(lat2, 7)
    assert b2.size == 7  # hexagonal first shell has six vectors
    norms = np.linalg.norm(b2.vectors, axis=1)
    assert np.all(np.diff(norms) >= -1e-12)


def test_free_particle_q0_degenerate_pair(lat1):
    sol = solve_at([0.0], basis_with_count(lat1, 11), PeriodicPotential.zero(), None, 3)
    g2 = (2 * np.pi) ** 2 / 2
    assert np.allclose(sol.energies, [0.0, g2, g2], atol=1e-12)
    assert sol.multiplicities == (1, 2)


def test_two_wave_gap_is_exact(lat1):
    # basis {0, -1} at the zone edge: H = [[pi^2/2, U1], [U1, pi^2/2]]
    basis = _make_basis(lat1, 2 * np.pi, [[0], [-1]])
    U1 = 0.17
    H = assemble_hamiltonian([np.pi], None, PeriodicPotential.cosine(1, U1), basis)
    sol = solve_bands(H, 2)
    assert np.allclose(sol.energies, [np.pi**2 / 2 - U1, np.pi**2 / 2 + U1], atol=1e-13)


def test_small_gap_against_perturbation(lat1):
    U1 = 1e-3
    sol = solve_at([-np.pi], basis_with_count(lat1, 21), PeriodicPotential.cosine(1, U1), None, 2)
    gap = sol.energies[1] - sol.energies[0]
    assert gap == pytest.approx(2 * U1, rel=1e-4)


def test_hamiltonian_is_hermitian_with_fields(lat2):
    basis = basis_with_count(lat2, 19)
    U = PeriodicPotential({(1, 0): 0.2 + 0.1j, (-1, 0): 0.2 - 0.1j, (0, 1): 0.05, (0, -1): 0.05})
    A = CellVectorPotential([0.3, -0.2], {(1, 1): [0.1 + 0.05j, 0.02], (-1, -1): [0.1 - 0.05j, 0.02]})
    H = assemble_hamiltonian([0.4, -1.0], A, U, basis)
    assert np.array_equal(H, H.conj().T)


def test_uniform_A_shifts_q(lat1, cosine):
    basis = basis_with_count(lat1, 15)
    a = solve_at([0.3], basis, cosine, CellVectorPotential([0.2]), 3)
    b = solve_at([0.5], basis, cosine, None, 3)
    assert np.allclose(a.energies, b.energies, atol=1e-12)


def test_non_hermitian_potential_rejected():
    with pytest.raises(PotentialError):
        PeriodicPotential({(1,): 0.3, (-1,): 0.2})
    with pytest.raises(PotentialError):
        PeriodicPotential({(1,): 0.3})


def test_potential_outside_closure_rejected(lat1):
    basis = basis_with_count(lat1, 3)
    with pytest.raises(PotentialError, match="closure"):
        PeriodicPotential.cosine(1, 0.1, order=5).matrix(basis)


def test_potential_evaluate_matches_cosine(lat1):
    U = PeriodicPotential.cosine(1, 0.3)
    z = np.linspace(0, 1, 7)[:, None]
    assert np.allclose(U.evaluate(lat1, z), 0.6 * np.cos(2 * np.pi * z[:, 0]))


def _fd_velocity(q, basis, U, n, a, h=1e-3):
    d = len(q)
    out = np.zeros(d)
    for ax in range(d):
        e = np.zeros(d)
        e[ax] = 1.0

        def f(hh):
            return (solve_at(q + hh * e, basis, U, None, n).energies[a] - solve_at(q - hh * e, basis, U, None, n).energies[a]) / (2 * hh)

        out[ax] = (4 * f(h / 2) - f(h)) / 3
    return out


@pytest.mark.parametrize("q", [[0.7], [-2.1], [2.9]])
def test_hellmann_feynman_1d(lat1, cosine, q):
    basis = basis_with_count(lat1, 21)
    sol = solve_at(q, basis, cosine, None, 2)
    for j in range(2):
        v = group_velocity(sol, j)
        assert np.allclose(v, _fd_velocity(np.array(q, float), basis, cosine, 2, j), rtol=1e-6, atol=1e-9)


def test_hellmann_feynman_2d(lat2):
    basis = basis_with_count(lat2, 19)
    U = PeriodicPotential({(1, 0): 0.2, (-1, 0): 0.2, (0, 1): 0.1, (0, -1): 0.1})
    q = np.array([0.9, -0.4])
    sol = solve_at(q, basis, U, None, 2)
    assert sol.multiplicities == (1, 1)
    for j in range(2):
        assert np.allclose(group_velocity(sol, j), _fd_velocity(q, basis, U, 2, j), rtol=1e-6, atol=1e-9)


def test_degenerate_velocity_needs_group_mode(lat1):
    sol = solve_at([0.0], basis_with_count(lat1, 11), PeriodicPotential.zero(), None, 3)
    with pytest.raises(BandError, match="degenerate"):
        group_velocity(sol, 1)
    # the +-2pi pair has velocities +-2pi: not a multiple of the identity
    with pytest.raises(BandError, match="not scalar"):
        group_velocity(sol, 1, group_wise=True)


def test_orthonormality_and_completeness(lat1, cosine):
    sol = solve_at([0.4], basis_with_count(lat1, 21), cosine, None, 21)
    chk = bloch_orthogonality_check(sol)
    assert chk["orthonormality"] < 1e-12
    comp = np.array(chk["completeness"])
    assert np.all(np.diff(comp) < 0)
    assert comp[-1] < 1e-12


def test_phase_convention(lat1, cosine):
    sol = solve_at([1.1], basis_with_count(lat1, 21), cosine, None, 3)
    for a in range(3):
        c = sol.coeffs[:, a]
        p = np.argmax(np.abs(c))
        assert c[p].imag == 0 and c[p].real > 0


def test_solve_grid_layouts(lat1, cosine):
    grid = bz_grid(lat1, 8)
    basis = basis_with_count(lat1, 11)
    t = solve_grid(grid, basis, cosine, None, 2)
    assert t.layout == (1, 1)
    assert t.energies().shape == (2, 8)
    with pytest.raises(BandError):
        solve_grid(grid, basis, PeriodicPotential.zero(), None, 3)
    with pytest.raises(BandError, match="not degenerate"):
        solve_grid(grid, basis, cosine, None, 2, layout=(2,))


def test_band_count_validated(lat1):
    basis = basis_with_count(lat1, 5)
    with pytest.raises(BandError):
        solve_at([0.0], basis, PeriodicPotential.zero(), None, 6)
