from __future__ import annotations

import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from blochrte.bloch import PeriodicPotential, basis_with_count, solve_grid
from blochrte.disorder import CorrelationModel
from blochrte.kernel import KernelWarning, assemble_kernel
from blochrte.lattice import bz_grid
from blochrte.transport import (
    Coefficients,
    DistributionField,
    FieldConfig,
    RTESystem,
    StabilityWarning,
    TransportError,
    evolve,
    lorentz_trace,
    make_field,
    observables,
    rte_rhs,
)
from blochrte.validation import two_point_solution


@pytest.fixture(scope="module")
def two_point(lat1):
    grid = bz_grid(lat1, 2)
    table = solve_grid(grid, basis_with_count(lat1, 5), PeriodicPotential.zero(), None, 1, layout="scalar")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        kern = assemble_kernel(table, CorrelationModel("gaussian", 0.2, 0.5), eta=4.0)
    return table, kern


def _two_point_error(two_point, method, n):
    table, kern = two_point
    W = kern.gain_weight_matrix()
    lam = W[0, 1] + W[1, 0]
    T = 2.0 / lam
    u_init = np.array([1.0, 0.2])
    u0 = make_field(table.grid, (1,), lambda j, x, q: u_init[None, :])
    c = Coefficients(table, table.velocities(), None, kern, table.vector_potential)
    tr = evolve(u0, c, T, T / n, method, snapshot_every=n)
    got = tr.snapshots[-1].blocks[0][0, :, 0, 0].real
    return np.max(np.abs(got - two_point_solution(W, u_init, T)))


def test_rk4_is_fourth_order(two_point):
    e1, e2 = _two_point_error(two_point, "rk4", 10), _two_point_error(two_point, "rk4", 20)
    assert np.log2(e1 / e2) == pytest.approx(4.0, abs=0.3)


def test_euler_is_first_order(two_point):
    e1, e2 = _two_point_error(two_point, "euler", 200), _two_point_error(two_point, "euler", 400)
    assert np.log2(e1 / e2) == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("stencil", ["upwind", "centered"])
def test_advection_center_of_mass(lat1, stencil):
    grid = bz_grid(lat1, 8)
    table = solve_grid(grid, basis_with_count(lat1, 5), PeriodicPotential.zero(), None, 1, layout="scalar")
    vel = table.velocities()
    c = Coefficients(table, vel, None, None, table.vector_potential)
    L, nx = 40.0, 400
    u0 = make_field(grid, (1,), lambda j, x, q: np.exp(-((x - 15.0) ** 2) / 2.0) * np.ones(q.shape[:-1]), n_x=nx, box_length=L)
    t_end, dt = 1.0, 0.002
    tr = evolve(u0, c, t_end, dt, "rk4", snapshot_every=500, stencil=stencil, lorentz=False)
    x = u0.x
    for iq in range(grid.size):
        prof0 = u0.blocks[0][:, iq, 0, 0].real
        prof1 = tr.snapshots[-1].blocks[0][:, iq, 0, 0].real
        shift = (x @ prof1) / prof1.sum() - (x @ prof0) / prof0.sum()
        assert shift == pytest.approx(vel[0, iq, 0] * t_end, abs=1e-6)
    n0, n1 = tr.observables[0]["N"], tr.observables[-1]["N"]
    assert abs(n1 - n0) < 1e-12 * n0


def test_upwind_stays_positive(lat1):
    grid = bz_grid(lat1, 4)
    table = solve_grid(grid, basis_with_count(lat1, 5), PeriodicPotential.zero(), None, 1, layout="scalar")
    c = Coefficients(table, table.velocities(), None, None, table.vector_potential)
    u0 = make_field(grid, (1,), lambda j, x, q: (np.abs(x - 5) < 1).astype(float) * np.ones(q.shape[:-1]), n_x=100, box_length=10.0)
    tr = evolve(u0, c, 0.5, 0.01, "euler", snapshot_every=50, lorentz=False)
    assert max(tr.psd_violation) == 0.0


def _lorentz_coeffs(lat1, nq=3, seed=0):
    grid = bz_grid(lat1, nq)
    table = solve_grid(grid, basis_with_count(lat1, 5), PeriodicPotential.zero(), None, 1, layout="scalar")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(nq, 2, 2)) + 1j * rng.normal(size=(nq, 2, 2))
    M = 0.5 * (X - np.conj(np.swapaxes(X, -1, -2)))
    return grid, Coefficients(table, np.zeros((1, nq, 1)), [M], None, table.vector_potential), M


def test_lorentz_only_evolution_is_unitary_conjugation(lat1):
    grid, c, M = _lorentz_coeffs(lat1)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(1, grid.size, 2, 2)) + 1j * rng.normal(size=(1, grid.size, 2, 2))
    u0 = DistributionField(0.0, grid, [X @ np.conj(np.swapaxes(X, -1, -2))])
    tr = evolve(u0, c, 1.0, 0.01, "rk4", snapshot_every=100)
    for i in range(grid.size):
        U = expm(-M[i])
        exact = U @ u0.blocks[0][0, i] @ U.conj().T
        assert np.allclose(tr.snapshots[-1].blocks[0][0, i], exact, atol=1e-8)
    assert max(abs(v) for v in tr.lorentz_trace) < 1e-13


def test_lorentz_trace_helper(lat1):
    grid, c, _ = _lorentz_coeffs(lat1, seed=2)
    u = DistributionField(0.0, grid, [np.tile(np.diag([1.0, 3.0]).astype(complex), (1, grid.size, 1, 1))])
    assert abs(lorentz_trace(u, c)) < 1e-14


def test_observables(lat1):
    grid = bz_grid(lat1, 4)
    u = make_field(grid, (1, 1), lambda j, x, q: np.full(q.shape[:-1], 1.0 + j))
    obs = observables(u, np.ones((2, 4, 1)))
    assert obs["N"] == pytest.approx(3 * 2 * np.pi)
    assert np.allclose(obs["populations"], [2 * np.pi, 4 * np.pi])
    assert np.allclose(obs["current"], [6 * np.pi])


def test_field_config():
    f = FieldConfig(electric=[0.1, 0.0, 0.2], magnetic=[0.0, 0.3, -0.4], uniform=[0.5])
    de, db = f.check_consistency()
    assert de < 1e-9 and db < 1e-9
    assert not f.is_static and f.is_x_dependent
    with pytest.raises(TransportError, match="B_x"):
        FieldConfig(magnetic=[1.0, 0.0, 0.0])


def test_system_rebuilds_under_electric_field(lat1, cosine):
    grid = bz_grid(lat1, 8)
    sysm = RTESystem(grid, basis_with_count(lat1, 9), cosine, 2, FieldConfig(electric=[0.5]), None, rebuild_threshold=0.05)
    c0 = sysm.node_coefficients(0.0, 1)[0]
    u0 = make_field(grid, c0.table.layout, lambda j, x, q: np.ones(q.shape[:-1]))
    tr = evolve(u0, sysm, 1.0, 0.01, "rk4", snapshot_every=100)
    assert 5 <= tr.rebuilds <= 25
    # A = -E t; a cached build within the rebuild threshold is reused
    c1 = sysm.coefficients_for(FieldConfig(electric=[0.5]).at(1.0, 0.0, 1))
    assert abs(c1.A.uniform[0] + 0.5) <= 0.05


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_stability_and_nonfinite(desk_table, gauss_model):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        kern = assemble_kernel(desk_table, gauss_model)
    c = Coefficients(desk_table, desk_table.velocities(), None, kern, desk_table.vector_potential)
    u0 = make_field(desk_table.grid, desk_table.layout, lambda j, x, q: np.ones(q.shape[:-1]))
    gmax = max(float(np.max(g.real)) for g in kern.gamma)
    with pytest.warns(StabilityWarning):
        with pytest.raises(TransportError, match="non-finite"):
            evolve(u0, c, 400 * 50 / gmax, 50 / gmax, "euler")


def test_time_grid_validation(desk_table):
    c = Coefficients(desk_table, desk_table.velocities(), None, None, desk_table.vector_potential)
    u0 = make_field(desk_table.grid, desk_table.layout)
    with pytest.raises(TransportError):
        evolve(u0, c, 1.0, 0.3)
    with pytest.raises(TransportError):
        evolve(u0, c, 1.0, 0.1, "leapfrog")


def test_rhs_requires_one_coefficient_set_per_node(desk_table):
    c = Coefficients(desk_table, desk_table.velocities(), None, None, desk_table.vector_potential)
    u = make_field(desk_table.grid, desk_table.layout, n_x=3)
    with pytest.raises(TransportError):
        rte_rhs(u, [c, c])
