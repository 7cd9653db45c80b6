"""Invariant checks shared by the ``validate`` command and the acceptance tests.

Each check returns a :class:`Check` with the measured value, its threshold
and a short detail string. Checks are desk scale (seconds each).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bloch import (
    BandTable,
    PeriodicPotential,
    basis_with_count,
    bloch_orthogonality_check,
    group_velocity,
    solve_at,
    solve_grid,
)
from .coupling import coupling_tensor, l_eigen_residual, offset_window, q_orthogonality_residual, t_by_quadrature
from .disorder import CorrelationModel, evaluate_spectrum
from .kernel import KernelWarning, apply_gain, apply_loss, assemble_kernel
from .lattice import LatticeSpec, build_lattice, bz_grid
from .transport import Coefficients, evolve, make_field


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (threshold {self.threshold:.1e}) {self.detail}".rstrip()

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold, "passed": self.passed, "detail": self.detail}


def _check(name, value, threshold, detail="") -> Check:
    value = float(value)
    return Check(name, value, threshold, bool(np.isfinite(value) and value < threshold), detail)


HEX_2D = [[1.0, 0.0], [0.5, np.sqrt(3) / 2]]


# --- 1: geometry ---------------------------------------------------------------------------


def check_geometry(lattices: list[LatticeSpec] | None = None, tol: float = 1e-12) -> Check:
    if lattices is None:
        lattices = [build_lattice(1, [[1.0]]), build_lattice(2, HEX_2D), build_lattice(2, [[1.3, 0.2], [-0.4, 0.9]])]
    worst = 0.0
    for lat in lattices:
        d = lat.dim
        dual_err = np.max(np.abs(lat.direct @ lat.dual.T - 2 * np.pi * np.eye(d)))
        vol_err = abs(lat.cell_volume * lat.bz_volume - (2 * np.pi) ** d) / (2 * np.pi) ** d
        worst = max(worst, dual_err / (2 * np.pi), vol_err)
    return _check("geometry duality and |C| Omega_BZ", worst, tol, f"{len(lattices)} lattices")


# --- 2: free particle ----------------------------------------------------------------------


def check_free_particle(lat: LatticeSpec, n_q: int = 16, n_pw: int = 21, n_bands: int = 4, tol: float = 1e-12) -> Check:
    basis = basis_with_count(lat, n_pw)
    grid = bz_grid(lat, n_q)
    worst = 0.0
    for q in grid.points:
        sol = solve_at(q, basis, PeriodicPotential.zero(), None, n_bands)
        exact = np.sort(0.5 * np.sum((q + basis.vectors) ** 2, axis=1))[: sol.n_states]
        got = sol.energies
        worst = max(worst, float(np.max(np.abs(got - exact) / np.maximum(1.0, np.abs(exact)))))
    return _check(f"free-particle bands ({lat.dim}D)", worst, tol, f"n_q={n_q}^{lat.dim}, n_pw={basis.size}")


# --- 3: orthogonality suite ----------------------------------------------------------------


def check_orthogonality(lat: LatticeSpec, potential: PeriodicPotential, n_pw: int = 21, n_bands: int = 3, n_q: int = 8) -> list[Check]:
    basis = basis_with_count(lat, max(n_pw, 21))
    grid = bz_grid(lat, n_q)
    ortho = qres = lres = 0.0
    for q in grid.points:
        sol = solve_at(q, basis, potential, None, n_bands)
        ortho = max(ortho, bloch_orthogonality_check(sol)["orthonormality"])
        qres = max(qres, q_orthogonality_residual(sol))
        for a in range(sol.n_states):
            for b in range(sol.n_states):
                lres = max(lres, l_eigen_residual(sol, potential, a, b))
    table = solve_grid(grid, basis, potential, None, n_bands, layout="scalar")
    ct = coupling_tensor(table, offset_window(basis, basis.cutoff))
    return [
        _check("Bloch orthonormality over the cell", ortho, 1e-10, f"n_pw={basis.size}"),
        _check("T conjugation relation", ct.conjugation_residual(grid), 1e-12, f"{len(ct.offsets)} offsets"),
        _check("Q orthogonality", qres, 1e-8),
        _check("L eigenrelation", lres, 1e-8),
    ]


# --- 4: Hellmann-Feynman ---------------------------------------------------------------------


def check_hellmann_feynman(
    lat: LatticeSpec, potential: PeriodicPotential, n_pw: int = 21, n_bands: int = 2, n_q: int = 16, tol: float = 1e-6
) -> Check:
    """Group velocity against Richardson-refined central differences of E."""
    basis = basis_with_count(lat, n_pw)
    grid = bz_grid(lat, n_q)
    d = lat.dim
    worst = 0.0
    scale = 0.0
    records = []
    for q in grid.points:
        sol = solve_at(q, basis, potential, None, n_bands)
        for j, (a, b) in enumerate(sol.groups):
            if b - a != 1:
                continue
            v = group_velocity(sol, j)
            fd = np.zeros(d)
            for ax in range(d):
                e = np.zeros(d)
                e[ax] = 1.0

                def deriv(h):
                    ep = solve_at(q + h * e, basis, potential, None, n_bands).energies[a]
                    em = solve_at(q - h * e, basis, potential, None, n_bands).energies[a]
                    return (ep - em) / (2 * h)

                h = 1e-3
                d1, d2 = deriv(h), deriv(h / 2)
                fd[ax] = (4 * d2 - d1) / 3
            records.append((v, fd))
            scale = max(scale, float(np.max(np.abs(v))))
    floor = 1e-2 * scale
    for v, fd in records:
        err = np.max(np.abs(v - fd)) / max(float(np.max(np.abs(v))), floor)
        worst = max(worst, float(err))
    return _check("Hellmann-Feynman group velocity", worst, tol, f"{len(records)} nondegenerate (band, q)")


# --- 5: kernel consistency ---------------------------------------------------------------------


def gamma_by_quadrature(table: BandTable, model: CorrelationModel, eta: float) -> np.ndarray:
    """Golden-rule Gamma for scalar layouts from per-pair real-space T quadrature.

    Loops explicitly over (q_i, q_k, mu') and shares no assembly code with the
    kernel module, only the physical definitions.
    """
    grid = table.grid
    lat = grid.lattice
    E = table.energies()
    G = table.n_groups
    offsets = offset_window(table.basis)
    gam = np.zeros((G, grid.size))
    for i in range(grid.size):
        si = table.solutions[i]
        for k in range(grid.size):
            sk = table.solutions[k]
            for off in offsets:
                mu = off @ lat.dual
                # momentum transfer k_j - k_m = q_i - q_k + mu'
                R = float(evaluate_spectrum(model, (grid.points[i] - grid.points[k] + mu)[None, :])[0])
                if R == 0.0:
                    continue
                T = t_by_quadrature(si, sk, off)
                for j in range(G):
                    for m in range(G):
                        de = E[j, i] - E[m, k]
                        delta = np.exp(-0.5 * (de / eta) ** 2) / (np.sqrt(2 * np.pi) * eta)
                        gam[j, i] += grid.weights[k] * R * delta * abs(T[j, m]) ** 2
    return gam


def check_kernel(table: BandTable, model: CorrelationModel, eta: float | None = None) -> list[Check]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        kern = assemble_kernel(table, model, eta, None, "transfer")
    if not kern.is_scalar:
        raise ValueError("kernel check expects a scalar layout")
    gam_k = np.array([g[:, 0, 0].real for g in kern.gamma])
    gam_q = gamma_by_quadrature(table, model, kern.eta)
    rel = float(np.max(np.abs(gam_k - gam_q)) / np.max(np.abs(gam_q)))
    # loss vs integrated gain for a generic positive distribution
    rng = np.random.default_rng(7)
    u = [rng.uniform(0.5, 1.5, size=(1, table.grid.size, 1, 1)) + 0j for _ in range(table.n_groups)]
    w = table.grid.weights
    gain = sum(float(np.real(g[0, :, 0, 0] @ w)) for g in apply_gain(kern, u))
    loss = sum(float(np.real(l[0, :, 0, 0] @ w)) for l in apply_loss(kern, u))
    return [
        _check("Gamma vs independent golden-rule quadrature", rel, 1e-8, f"eta={kern.eta:.3e}"),
        _check("scalar loss vs integrated gain", abs(loss - gain) / abs(loss), 1e-6, f"eta={kern.eta:.3e}"),
    ]


# --- 6: transport conservation -------------------------------------------------------------


def check_conservation(table: BandTable, model: CorrelationModel, n_steps: int = 1000) -> list[Check]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        kern = assemble_kernel(table, model)
    from .coupling import lorentz_table

    vel = table.velocities()
    coeffs = Coefficients(table, vel, lorentz_table(table, vel), kern, table.vector_potential)
    gmax = max(float(np.max(np.abs(g))) for g in kern.gamma)
    dt = 0.5 / gmax
    E = table.energies()
    u0 = make_field(table.grid, table.layout, lambda j, x, q: np.exp(-E[j][None, :]) * (1.2 + np.tanh(q[..., 0])))
    traj = evolve(u0, coeffs, n_steps * dt, dt, "rk4", snapshot_every=n_steps)
    N0, N1 = traj.observables[0]["N"], traj.observables[-1]["N"]
    return [
        _check("RTE number conservation (RK4)", abs(N1 - N0) / N0, 1e-6, f"{traj.steps} steps, dt*Gmax=0.5"),
        Check("Lorentz trace contribution", max(abs(v) for v in traj.lorentz_trace), 0.0,
              all(v == 0.0 for v in traj.lorentz_trace), "exact zero required per step"),
        _check("Hermiticity before symmetrization", max(traj.hermiticity), 1e-10),
    ]


# --- 7: relaxation ------------------------------------------------------------------------------


def anisotropy(u: np.ndarray, grid) -> float:
    """L2 norm of the inversion-odd part of a scalar profile on the grid."""
    idx = np.array([grid.index_of(-lab) for lab in grid.labels])
    odd = 0.5 * (u - u[..., idx])
    return float(np.sqrt(np.sum(np.abs(odd) ** 2 * grid.weights)))


def odd_sector_gap(kern, grid) -> float:
    """Slowest decay rate of inversion-odd scalar profiles under gain - loss."""
    W = kern.gain_weight_matrix()
    L = W - np.diag(np.concatenate([g[:, 0, 0].real for g in kern.gamma]))
    n = grid.size
    partner = np.array([grid.index_of(-lab) for lab in grid.labels])
    cols = []
    for j in range(kern.n_groups):
        for i in range(n):
            if i < partner[i]:
                v = np.zeros(L.shape[0])
                v[j * n + i], v[j * n + partner[i]] = 1 / np.sqrt(2), -1 / np.sqrt(2)
                cols.append(v)
    Q = np.array(cols).T
    ev = np.linalg.eigvalsh(Q.T @ (0.5 * (L + L.T)) @ Q)
    return float(-ev.max())


def check_relaxation(table: BandTable, model: CorrelationModel, t_final: float | None = None) -> list[Check]:
    """Anisotropic shell data relaxes to an inversion-even, shell-uniform state."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        kern = assemble_kernel(table, model)
    grid = table.grid
    E = table.energies()
    band = 0
    e0 = float(np.median(E[band]))
    width = 2 * kern.eta
    pts = grid.points
    r = np.linalg.norm(pts, axis=1)
    cosang = np.where(r > 0, pts[:, 0] / np.where(r > 0, r, 1.0), 0.0)

    def init(j, x, q):
        if j != band:
            return np.zeros(grid.size)
        return np.exp(-((E[j] - e0) ** 2) / (2 * width**2)) * (1 + 0.9 * cosang)

    u0 = make_field(grid, table.layout, init)
    coeffs = Coefficients(table, table.velocities(), None, kern, table.vector_potential)
    gmax = max(float(np.max(np.abs(g))) for g in kern.gamma)
    dt = 0.5 / gmax
    gap = odd_sector_gap(kern, grid)
    if t_final is None:
        t_final = 10.0 / gap
    n = int(np.ceil(t_final / dt))
    traj = evolve(u0, coeffs, n * dt, dt, "rk4", snapshot_every=max(1, n // 60), lorentz=False)
    an = [sum(anisotropy(s.blocks[j][0, :, 0, 0].real, grid) for j in range(len(s.blocks))) for s in traj.snapshots]
    diffs = np.diff(an)
    worst_rise = float(max(diffs.max(), 0.0) / an[0])
    final = an[-1] / an[0]
    # the broadened shell lets the mean energy diffuse; reported, not asserted
    def mean_energy(s):
        tot = sum(float(np.real(s.blocks[j][0, :, 0, 0] @ grid.weights)) for j in range(len(s.blocks)))
        return sum(float(np.real((s.blocks[j][0, :, 0, 0] * E[j]) @ grid.weights)) for j in range(len(s.blocks))) / tot

    drift = abs(mean_energy(traj.snapshots[-1]) - mean_energy(traj.snapshots[0]))
    return [
        Check("anisotropy monotone decreasing", worst_rise, 0.0, worst_rise == 0.0, f"{len(an)} snapshots"),
        _check(
            "final relative anisotropy", final, 1e-3,
            f"t={n * dt:.3g}, odd-sector gap {gap:.3e}, mean-energy drift {drift / kern.eta:.2f} eta",
        ),
    ]


# --- 9: two-point analytic evolution -------------------------------------------------------


def two_point_solution(W: np.ndarray, u0: np.ndarray, t: float) -> np.ndarray:
    """Closed form of u' = W u - diag(row sums of W) u for a 2x2 non-negative W."""
    p, r = W[0, 1], W[1, 0]
    lam = p + r
    inv = r * u0[0] + p * u0[1]  # conserved combination
    diff = (u0[0] - u0[1]) * np.exp(-lam * t)
    # u0 - u1 = diff, r u0 + p u1 = inv
    u_a = (inv + p * diff) / lam
    return np.array([u_a, u_a - diff])


def check_two_point(eta: float = 4.0, t_final: float | None = None) -> Check:
    lat = build_lattice(1, [[1.0]])
    grid = bz_grid(lat, 2)
    basis = basis_with_count(lat, 5)
    table = solve_grid(grid, basis, PeriodicPotential.zero(), None, 1, layout="scalar")
    model = CorrelationModel("gaussian", 0.2, 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        kern = assemble_kernel(table, model, eta)
    W = kern.gain_weight_matrix()
    gam = kern.gamma[0][:, 0, 0].real
    u_init = np.array([1.0, 0.25])
    lam = W[0, 1] + W[1, 0]
    t_final = 3.0 / lam if t_final is None else t_final
    n = 4000
    dt = t_final / n
    u0 = make_field(grid, (1,), lambda j, x, q: u_init[None, :])
    coeffs = Coefficients(table, table.velocities(), None, kern, table.vector_potential)
    traj = evolve(u0, coeffs, n * dt, dt, "rk4", snapshot_every=n)
    got = traj.snapshots[-1].blocks[0][0, :, 0, 0].real
    exact = two_point_solution(W, u_init, n * dt)
    err = float(np.max(np.abs(got - exact)) / np.max(np.abs(exact)))
    rows = float(np.max(np.abs(W.sum(axis=1) - gam)))
    return _check("two-point RTE vs closed-form 2x2 exponential", max(err, rows), 1e-8, f"lambda={lam:.3e}, t={n * dt:.3g}")


# --- suite ---------------------------------------------------------------------------------


def run_suite(lat: LatticeSpec, potential: PeriodicPotential, model: CorrelationModel, n_q: int = 32, n_pw: int = 21) -> list[Check]:
    """Everything except the Schroedinger oracle, on a 1D desk case."""
    basis = basis_with_count(lat, n_pw)
    table = solve_grid(bz_grid(lat, n_q), basis, potential, None, 2, layout="scalar")
    checks = [check_geometry([lat, build_lattice(2, HEX_2D)])]
    checks.append(check_free_particle(lat))
    if lat.dim == 1:
        checks.append(check_free_particle(build_lattice(2, HEX_2D), n_q=6, n_pw=19))
    checks += check_orthogonality(lat, potential, n_pw)
    checks.append(check_hellmann_feynman(lat, potential, n_pw))
    checks += check_kernel(table, model)
    checks += check_conservation(table, model)
    checks += check_relaxation(table, model)
    checks.append(check_two_point())
    return checks
