"""Overlap coefficients T, kernel functions Q of the cell operator, and Lorentz matrices.

All quantities are reduced to plane-wave coefficient algebra. T between
q_i and the unfolded quasimomentum q_k - mu' is

    T_jm(q_i, q_k - mu') = (2 pi)^{-(d-1)/2} sum_mu c^{m,k}_{mu - mu'} conj(c^{j,i}_mu)

with the convention that the first argument carries the conjugated state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bloch import (
    BandSolution,
    BandTable,
    CellVectorPotential,
    PlaneWaveBasis,
    cell_sample_grid,
    oversampled_points,
    plane_wave_samples,
)
from .lattice import TWO_PI


def t_prefactor(dim: int) -> float:
    return (TWO_PI) ** (-(dim - 1) / 2.0)


@dataclass
class Truncation:
    """Counts plane-wave terms dropped because mu - mu' left the basis."""

    count: int = 0
    max_dropped_weight: float = 0.0

    def add(self, count: int, weight: float) -> None:
        self.count += int(count)
        self.max_dropped_weight = max(self.max_dropped_weight, float(weight))

    def as_dict(self) -> dict:
        return {"count": self.count, "max_dropped_weight": self.max_dropped_weight}


def _shifted_coeffs(C: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Rows p -> C[shift[p]] with zeros where shift is -1. C has basis on axis -2."""
    out = np.zeros_like(C)
    ok = shift >= 0
    out[..., ok, :] = C[..., shift[ok], :]
    return out


def compute_T(
    sol_q: BandSolution,
    sol_qp: BandSolution,
    mu_offset=None,
    truncation: Truncation | None = None,
) -> np.ndarray:
    """Block T_jm(q, q' - mu') over all kept states.

    Rows index states at ``sol_q`` (the conjugated side), columns states at
    ``sol_qp``. ``mu_offset`` is given in integer dual coordinates.
    """
    basis = sol_q.basis
    if sol_qp.basis is not basis and sol_qp.basis != basis:
        raise ValueError("band solutions do not share a plane-wave basis")
    d = basis.lattice.dim
    off = np.zeros(d, dtype=int) if mu_offset is None else np.asarray(mu_offset, dtype=int)
    shift = basis.shift_map(-off)
    Ck = _shifted_coeffs(sol_qp.coeffs, shift)
    if truncation is not None:
        lost = shift < 0
        if np.any(lost):
            w = float(np.max(np.sum(np.abs(sol_q.coeffs[lost]) ** 2, axis=0)))
            truncation.add(int(lost.sum()), w)
    return t_prefactor(d) * (sol_q.coeffs.conj().T @ Ck)


def t_by_quadrature(sol_q: BandSolution, sol_qp: BandSolution, mu_offset=None, oversample: int = 4) -> np.ndarray:
    """Direct cell quadrature of the defining T integral (independent check)."""
    basis = sol_q.basis
    lat = basis.lattice
    d = lat.dim
    off = np.zeros(d) if mu_offset is None else np.asarray(mu_offset, dtype=float)
    q1 = np.asarray(sol_q.q, dtype=float)
    q2 = np.asarray(sol_qp.q, dtype=float) - off @ lat.dual
    npts = oversampled_points(basis, oversample) + 2 * int(np.max(np.abs(off)))
    s, y = cell_sample_grid(lat, npts)
    E = plane_wave_samples(basis, s)
    # Phi(y, q_k - mu') equals Phi(y, q_k) by L*-periodic extension in q
    Phi2 = np.exp(1j * y @ np.asarray(sol_qp.q))[:, None] * (E @ sol_qp.coeffs)
    Phi1 = np.exp(1j * y @ q1)[:, None] * (E @ sol_q.coeffs)
    phase = np.exp(1j * y @ (q1 - q2))
    return t_prefactor(d) * (Phi1.conj().T @ (phase[:, None] * Phi2)) / s.shape[0]


def offset_window(basis: PlaneWaveBasis, cutoff: float | None = None) -> np.ndarray:
    """Integer coordinates of all mu' with |mu'| <= cutoff (default: basis cutoff)."""
    from .bloch import plane_wave_basis

    c = basis.cutoff if cutoff is None else cutoff
    return np.array(plane_wave_basis(basis.lattice, c).coords)


@dataclass
class CouplingTensor:
    """T blocks for every ordered grid pair and every window offset.

    ``blocks[i, k, w]`` is T(q_i, q_k - mu'_w) over kept states, shape
    (Nq, Nq, Nw, n_states, n_states).
    """

    offsets: np.ndarray
    blocks: np.ndarray
    truncation: Truncation = field(default_factory=Truncation)

    def conjugation_residual(self, grid) -> float:
        """max |conj(T_mj(q_k - mu', q_i))^T - T_jm(q_i, q_k - mu')| over stored triples.

        T_mj(q_k - mu', q_i) equals T_mj(q_k, q_i + mu') by joint L* shift,
        which is the stored block at (k, i, -mu').
        """
        index = {tuple(o): w for w, o in enumerate(self.offsets)}
        worst = 0.0
        for w, o in enumerate(self.offsets):
            wn = index.get(tuple(-o))
            if wn is None:
                continue
            lhs = np.conj(np.swapaxes(self.blocks[:, :, wn], -1, -2))
            lhs = np.swapaxes(lhs, 0, 1)
            worst = max(worst, float(np.max(np.abs(lhs - self.blocks[:, :, w]))))
        return worst


def coupling_tensor(table: BandTable, window: np.ndarray | None = None) -> CouplingTensor:
    """Assemble T for all ordered pairs of grid points and window offsets."""
    offsets = offset_window(table.basis) if window is None else np.asarray(window, dtype=int)
    C = table.coeff_array()
    nq, _, ns = C.shape
    blocks = np.empty((nq, nq, len(offsets), ns, ns), dtype=complex)
    trunc = Truncation()
    pref = t_prefactor(table.basis.lattice.dim)
    for w, off in enumerate(offsets):
        shift = table.basis.shift_map(-off)
        Ck = _shifted_coeffs(C, shift)
        lost = shift < 0
        if np.any(lost):
            trunc.add(int(lost.sum()) * nq * nq, float(np.max(np.sum(np.abs(C[:, lost, :]) ** 2, axis=1))))
        blocks[:, :, w] = pref * np.einsum("ipa,kpb->ikab", C.conj(), Ck)
    return CouplingTensor(offsets, blocks, trunc)


def coupling_cache_key(table: BandTable, window: np.ndarray | None = None) -> str:
    """Content hash of everything that determines a CouplingTensor."""
    lat = table.basis.lattice
    payload = {
        "direct": np.round(lat.direct, 15).tolist(),
        "cutoff": table.basis.cutoff,
        "potential": sorted((list(k), [v.real, v.imag]) for k, v in table.potential.coeffs.items()),
        "A0": table.vector_potential.uniform.tolist(),
        "A_periodic": sorted(
            (list(k), np.real(v).tolist(), np.imag(v).tolist())
            for k, v in table.vector_potential.periodic.items()
        ),
        "grid": table.grid.n_per_axis,
        "layout": list(table.layout),
        "window": None if window is None else np.asarray(window).tolist(),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def load_or_build_coupling(table: BandTable, cache_dir: str | Path | None, window=None) -> CouplingTensor:
    """Binary cache (npz) of the coupling tensor keyed by content hash."""
    if cache_dir is None:
        return coupling_tensor(table, window)
    path = Path(cache_dir) / f"coupling-{coupling_cache_key(table, window)}.npz"
    if path.exists():
        with np.load(path) as data:
            tr = Truncation(int(data["trunc_count"]), float(data["trunc_weight"]))
            return CouplingTensor(data["offsets"], data["blocks"], tr)
    ct = coupling_tensor(table, window)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        offsets=ct.offsets,
        blocks=ct.blocks,
        trunc_count=ct.truncation.count,
        trunc_weight=ct.truncation.max_dropped_weight,
    )
    return ct


# --- kernel functions of the cell operator -------------------------------------------------


def compute_Q(sol: BandSolution, a: int, b: int, mu, s: np.ndarray) -> np.ndarray:
    """Samples of Q_ab(z, mu, q) at fractional cell points ``s``.

    States a, b are flat indices into ``sol`` (band and degeneracy label
    combined). The y-convolution collapses to
    Q = c^a_mu exp(i mu.z) conj(phi_b(z)).
    """
    basis = sol.basis
    idx = basis.index(mu)
    if idx < 0:
        return np.zeros(s.shape[0], dtype=complex)
    E = plane_wave_samples(basis, s)
    phase = np.exp(1j * TWO_PI * s @ np.asarray(mu, dtype=float))
    return sol.coeffs[idx, a] * phase * (E @ sol.coeffs[:, b]).conj()


def q_by_quadrature(sol: BandSolution, a: int, b: int, mu, z_frac: np.ndarray, n_y: int) -> np.ndarray:
    """Q from its defining y-integral over the cell (used only to test compute_Q)."""
    basis = sol.basis
    lat = basis.lattice
    sy, y = cell_sample_grid(lat, n_y)
    q = np.asarray(sol.q)
    k = q + np.asarray(mu, dtype=float) @ lat.dual
    out = np.empty(z_frac.shape[0], dtype=complex)
    for i, sz in enumerate(z_frac):
        z = sz @ lat.direct
        diff = (sz[None, :] - sy)
        Phi_a = np.exp(1j * (z - y) @ q) * (plane_wave_samples(basis, diff) @ sol.coeffs[:, a])
        Phi_b = np.exp(1j * z @ q) * (plane_wave_samples(basis, sz[None, :]) @ sol.coeffs[:, b])[0]
        out[i] = np.mean(np.exp(1j * y @ k) * Phi_a) * np.conj(Phi_b)
    return out


def _group_states(sol: BandSolution, groups=None):
    groups = sol.groups if groups is None else groups
    return [list(range(a, b)) for a, b in groups]


def q_orthogonality_residual(sol: BandSolution, groups=None, oversample: int = 4) -> float:
    """max |sum_mu <Q_j^{ab}, Q_m^{a'b'}> - delta| over all band groups and labels."""
    basis = sol.basis
    npts = 2 * oversampled_points(basis, oversample)
    s, _ = cell_sample_grid(basis.lattice, npts)
    labels = [(j, a, b) for j, st in enumerate(_group_states(sol, groups)) for a in st for b in st]
    E = plane_wave_samples(basis, s)
    phib = E @ sol.coeffs  # (npts, n_states)
    gram = np.zeros((len(labels), len(labels)), dtype=complex)
    for p, mu in enumerate(basis.coords):
        phase = np.exp(1j * TWO_PI * s @ mu.astype(float))
        Qs = np.stack([sol.coeffs[p, a] * phase * phib[:, b].conj() for _, a, b in labels], axis=1)
        gram += Qs.conj().T @ Qs / s.shape[0]
    return float(np.max(np.abs(gram - np.eye(len(labels)))))


def _spectral_grad_lap(f: np.ndarray, lat, n: int):
    """Gradient (d, ...) and Laplacian of cell-periodic samples on an n^d grid."""
    d = lat.dim
    shape = (n,) * d
    F = np.fft.fftn(f.reshape(shape))
    freqs = np.stack(np.meshgrid(*([np.fft.fftfreq(n, 1.0 / n)] * d), indexing="ij"), axis=-1)
    kvec = freqs @ lat.dual  # Cartesian wavevectors, shape (*shape, d)
    grad = np.stack([np.fft.ifftn(1j * kvec[..., ax] * F).reshape(-1) for ax in range(d)])
    lap = np.fft.ifftn(-np.sum(kvec**2, axis=-1) * F).reshape(-1)
    return grad, lap


def l_eigen_residual(sol: BandSolution, potential, a: int, b: int, oversample: int = 4) -> float:
    """|| L Q_ab - i (E_a - E_b) Q_ab || over the mu window, cell-averaged L2.

    L is applied spectrally on a cell grid with uniform A0 from the solution:
    (q + mu + A0).grad_z + (i/2) lap_z + i sum_mu' U~(mu') e^{i mu'.z} [f(mu - mu') - f(mu)].
    """
    basis = sol.basis
    lat = basis.lattice
    umax = max((max(abs(c) for c in k) for k in potential.coeffs), default=0)
    n = oversample * (2 * basis.max_abs_coord() + 1) + 2 * umax
    s, z = cell_sample_grid(lat, n)
    A0 = np.zeros(lat.dim) if sol.vector_potential is None else sol.vector_potential.uniform[: lat.dim]
    q = np.asarray(sol.q, dtype=float)
    dE = sol.energies[a] - sol.energies[b]
    fam = {tuple(mu): compute_Q(sol, a, b, mu, s) for mu in basis.coords}
    zero = np.zeros(s.shape[0], dtype=complex)
    Uz = {k: v * np.exp(1j * z @ (np.asarray(k) @ lat.dual)) for k, v in potential.coeffs.items()}
    total = 0.0
    for mu in basis.coords:
        f = fam[tuple(mu)]
        grad, lap = _spectral_grad_lap(f, lat, n)
        k = q + mu @ lat.dual + A0
        Lf = np.einsum("l,lp->p", k, grad) + 0.5j * lap
        for key, uz in Uz.items():
            g = fam.get(tuple(mu - np.asarray(key)), zero)
            Lf = Lf + 1j * uz * (g - f)
        total += float(np.mean(np.abs(Lf - 1j * dE * f) ** 2))
    return float(np.sqrt(total))


# --- Lorentz matrices ----------------------------------------------------------------------


def compute_lorentz_matrix(
    sol: BandSolution,
    j: int,
    v_j,
    vector_potential: CellVectorPotential | None = None,
    groups=None,
) -> tuple[np.ndarray, float]:
    """M_j = i v_j . <A Phi_b, Phi_a>_C over the states of group j.

    Returns the anti-Hermitian part and the size of the Hermitian residual
    that was removed.
    """
    A = vector_potential if vector_potential is not None else sol.vector_potential
    basis = sol.basis
    d = basis.lattice.dim
    groups = sol.groups if groups is None else groups
    a0, b0 = groups[j]
    if A is None:
        return np.zeros((b0 - a0, b0 - a0), dtype=complex), 0.0
    C = sol.coeffs[:, a0:b0]
    Am = A.matrices(basis)
    inner = np.einsum("pa,lpq,qb->lab", C.conj(), Am, C)
    M = 1j * np.einsum("l,lab->ab", np.asarray(v_j, dtype=float)[:d], inner)
    anti = 0.5 * (M - M.conj().T)
    return anti, float(np.max(np.abs(M - anti))) if M.size else 0.0


def lorentz_by_quadrature(sol: BandSolution, j: int, v_j, vector_potential: CellVectorPotential, oversample: int = 4) -> np.ndarray:
    """Same matrix from real-space sampling of A(z) Phi_b conj(Phi_a)."""
    basis = sol.basis
    lat = basis.lattice
    pmax = max((max(abs(c) for c in k) for k in vector_potential.periodic), default=0)
    npts = oversampled_points(basis, oversample) + 2 * pmax
    s, z = cell_sample_grid(lat, npts)
    a0, b0 = sol.groups[j]
    E = plane_wave_samples(basis, s)
    Phi = np.exp(1j * z @ np.asarray(sol.q))[:, None] * (E @ sol.coeffs[:, a0:b0])
    Az = vector_potential.evaluate(lat, z)  # (npts, d)
    vA = Az @ np.asarray(v_j, dtype=float)[: lat.dim]
    return 1j * (Phi.conj().T @ (vA[:, None] * Phi)) / s.shape[0]


def lorentz_table(table: BandTable, velocities: np.ndarray | None = None) -> list[np.ndarray]:
    """M_j(q_i) for all groups, list of arrays (Nq, r_j, r_j)."""
    from .bloch import _as_groups

    if velocities is None:
        velocities = table.velocities()
    o = table.offsets
    groups = tuple((o[j], o[j + 1]) for j in range(table.n_groups))
    out = []
    for j in range(table.n_groups):
        r = table.layout[j]
        arr = np.empty((table.grid.size, r, r), dtype=complex)
        for i, sol in enumerate(table.solutions):
            arr[i], _ = compute_lorentz_matrix(_as_groups(sol, table), j, velocities[j, i], table.vector_potential, groups)
        out.append(arr)
    return out
