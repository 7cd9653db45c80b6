"""Plane-wave solver for the cell eigenproblem of a Bloch electron.

Internal units: hbar = m_e = e = 1. For quasimomentum q the periodic part
phi(z, q) = sum_mu c_mu exp(i mu.z) solves

    [ (1/2)(-i grad + q + A(z))^2 + U(z) ] phi = E phi,

and the Bloch function is Phi(z, q) = exp(i q.z) phi(z, q). Extending Phi
L*-periodically in q means the coefficients of phi(., q - mu0) are those of
phi(., q) shifted by mu0, which is how unfolded quasimomenta are handled
throughout the package.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .lattice import TWO_PI, BZGrid, LatticeSpec

DEFAULT_DEGENERACY_RTOL = 1e-8


class BandError(RuntimeError):
    """Eigensolver failure or an ill-posed band request."""


class PotentialError(ValueError):
    """Fourier data that is non-Hermitian or outside the plane-wave basis."""


def _key(n) -> tuple[int, ...]:
    return tuple(int(v) for v in np.atleast_1d(n))


@dataclass(frozen=True)
class PlaneWaveBasis:
    """Ordered set of dual vectors mu = coords @ lattice.dual."""

    lattice: LatticeSpec
    cutoff: float
    coords: np.ndarray
    vectors: np.ndarray
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    def index(self, n) -> int:
        """Position of integer coordinates ``n`` in the basis, or -1."""
        return self._index.get(_key(n), -1)

    def shift_map(self, offset) -> np.ndarray:
        """For each basis entry mu, the index of mu + offset (or -1)."""
        off = np.asarray(offset, dtype=int)
        return np.array([self._index.get(_key(c + off), -1) for c in self.coords], dtype=int)

    def shifted(self, offset) -> "PlaneWaveBasis":
        """Same set translated by ``offset`` (used for gauge-shift checks)."""
        coords = self.coords + np.asarray(offset, dtype=int)
        return _make_basis(self.lattice, self.cutoff, coords)

    def difference_set(self) -> set[tuple[int, ...]]:
        diffs = self.coords[:, None, :] - self.coords[None, :, :]
        return {_key(v) for v in diffs.reshape(-1, self.lattice.dim)}

    def max_abs_coord(self) -> int:
        return int(np.max(np.abs(self.coords))) if self.size else 0


def _make_basis(lat: LatticeSpec, cutoff: float, coords: np.ndarray) -> PlaneWaveBasis:
    coords = np.asarray(coords, dtype=int).reshape(-1, lat.dim)
    vectors = coords @ lat.dual
    index = {_key(c): i for i, c in enumerate(coords)}
    coords.setflags(write=False)
    vectors.setflags(write=False)
    return PlaneWaveBasis(lat, float(cutoff), coords, vectors, index)


def plane_wave_basis(lat: LatticeSpec, cutoff: float) -> PlaneWaveBasis:
    """All dual vectors with |mu| <= cutoff, ordered by |mu|^2 then lexicographically."""
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    bounds = [int(np.floor(cutoff * np.linalg.norm(e) / TWO_PI + 1e-9)) for e in lat.direct]
    ranges = [range(-b, b + 1) for b in bounds]
    cands = np.array(list(itertools.product(*ranges)), dtype=int).reshape(-1, lat.dim)
    vecs = cands @ lat.dual
    norm2 = np.einsum("ij,ij->i", vecs, vecs)
    keep = norm2 <= cutoff**2 * (1 + 1e-10) + 1e-12
    cands, norm2 = cands[keep], norm2[keep]
    # lexsort: last key is primary
    order = np.lexsort(tuple(cands[:, ax] for ax in reversed(range(lat.dim))) + (np.round(norm2, 9),))
    return _make_basis(lat, cutoff, cands[order])


def basis_with_count(lat: LatticeSpec, n_min: int) -> PlaneWaveBasis:
    """Smallest closed-shell basis holding at least ``n_min`` plane waves."""
    if n_min < 1:
        raise ValueError("n_min must be positive")
    g = float(np.min(np.linalg.norm(lat.dual, axis=1)))
    cutoff = g
    while True:
        b = plane_wave_basis(lat, cutoff)
        if b.size >= n_min:
            norms = np.sort(np.linalg.norm(b.vectors, axis=1))
            return plane_wave_basis(lat, float(norms[n_min - 1]))
        cutoff *= 1.5


def _check_hermitian_map(coeffs: Mapping, name: str, atol: float = 1e-12) -> None:
    for k, val in coeffs.items():
        partner = tuple(-v for v in k)
        if partner not in coeffs:
            if np.any(np.abs(np.asarray(val)) > atol):
                raise PotentialError(f"{name}: coefficient at {k} has no partner at {partner}")
            continue
        if np.any(np.abs(np.conj(coeffs[partner]) - np.asarray(val)) > atol):
            raise PotentialError(f"{name}: coefficient at {partner} is not the conjugate of {k}")


@dataclass(frozen=True)
class PeriodicPotential:
    """Lattice-periodic potential U(z) = sum_mu U~(mu) exp(i mu.z)."""

    coeffs: Mapping[tuple[int, ...], complex]

    def __post_init__(self):
        _check_hermitian_map(self.coeffs, "potential")

    @classmethod
    def zero(cls) -> "PeriodicPotential":
        return cls({})

    @classmethod
    def cosine(cls, dim: int, amplitude: float, axis: int = 0, order: int = 1) -> "PeriodicPotential":
        """U(z) = 2 U1 cos(order * e^axis . z), i.e. U~(+-order e^axis) = U1."""
        n = [0] * dim
        n[axis] = order
        return cls({tuple(n): complex(amplitude), tuple(-v for v in n): complex(amplitude)})

    def matrix(self, basis: PlaneWaveBasis) -> np.ndarray:
        diffs = basis.difference_set()
        for k in self.coeffs:
            if k not in diffs and abs(self.coeffs[k]) > 0:
                raise PotentialError(f"potential coefficient at {k} lies outside the basis closure")
        out = np.zeros((basis.size, basis.size), dtype=complex)
        if not self.coeffs:
            return out
        diff = basis.coords[:, None, :] - basis.coords[None, :, :]
        for k, val in self.coeffs.items():
            mask = np.all(diff == np.asarray(k), axis=-1)
            out[mask] += val
        return out

    def evaluate(self, lat: LatticeSpec, z: np.ndarray) -> np.ndarray:
        """Real-space values at Cartesian points ``z`` (rows)."""
        z = np.atleast_2d(z)
        out = np.zeros(z.shape[0], dtype=complex)
        for k, val in self.coeffs.items():
            mu = np.asarray(k) @ lat.dual
            out += val * np.exp(1j * z @ mu)
        return out.real


@dataclass(frozen=True)
class CellVectorPotential:
    """A(z) = A0 + sum_{mu != 0} A~(mu) exp(i mu.z), vector valued.

    ``uniform`` is the macroscopic A(t, x) sampled at one (t, x); ``periodic``
    carries optional cell-scale structure.
    """

    uniform: np.ndarray
    periodic: Mapping[tuple[int, ...], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        u = np.asarray(self.uniform, dtype=float).reshape(-1)
        if not np.all(np.isfinite(u)):
            raise PotentialError("uniform vector potential must be finite")
        object.__setattr__(self, "uniform", u)
        per = {}
        for k, v in self.periodic.items():
            if all(c == 0 for c in k):
                raise PotentialError("periodic vector potential must not carry a mu = 0 term")
            per[_key(k)] = np.asarray(v, dtype=complex).reshape(-1)
        _check_hermitian_map(per, "vector potential")
        object.__setattr__(self, "periodic", per)

    @classmethod
    def zero(cls, dim: int) -> "CellVectorPotential":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.uniform.shape[0]

    @property
    def is_uniform(self) -> bool:
        return not any(np.any(v != 0) for v in self.periodic.values())

    def fourier(self) -> dict[tuple[int, ...], np.ndarray]:
        """All Fourier coefficients, A0 included at mu = 0."""
        out = {tuple([0] * self.dim): self.uniform.astype(complex)}
        out.update(self.periodic)
        return out

    def square_fourier(self) -> dict[tuple[int, ...], complex]:
        """Fourier coefficients of A(z).A(z) by exact convolution."""
        four = self.fourier()
        out: dict[tuple[int, ...], complex] = {}
        for k1, a1 in four.items():
            for k2, a2 in four.items():
                k = tuple(x + y for x, y in zip(k1, k2))
                out[k] = out.get(k, 0.0) + complex(np.dot(a1, a2))
        return out

    def matrices(self, basis: PlaneWaveBasis) -> np.ndarray:
        """Component matrices A_l(mu - mu') in the basis, shape (d, N, N)."""
        d, n = basis.lattice.dim, basis.size
        out = np.zeros((d, n, n), dtype=complex)
        diff = basis.coords[:, None, :] - basis.coords[None, :, :]
        for k, val in self.fourier().items():
            mask = np.all(diff == np.asarray(k), axis=-1)
            out[:, mask] += val[:d, None]
        return out

    def evaluate(self, lat: LatticeSpec, z: np.ndarray) -> np.ndarray:
        """Real-space A at Cartesian points (rows), shape (npts, d)."""
        z = np.atleast_2d(z)
        out = np.zeros((z.shape[0], lat.dim), dtype=complex)
        for k, val in self.fourier().items():
            mu = np.asarray(k) @ lat.dual
            out += np.exp(1j * z @ mu)[:, None] * val[None, : lat.dim]
        return out.real


def assemble_hamiltonian(
    q,
    vector_potential: CellVectorPotential | None,
    potential: PeriodicPotential,
    basis: PlaneWaveBasis,
) -> np.ndarray:
    """Hermitian plane-wave matrix of the cell Hamiltonian at quasimomentum q."""
    lat = basis.lattice
    q = np.asarray(q, dtype=float).reshape(lat.dim)
    A = vector_potential if vector_potential is not None else CellVectorPotential.zero(lat.dim)
    K = q[None, :] + basis.vectors
    H = potential.matrix(basis)
    H[np.diag_indices(basis.size)] += 0.5 * np.einsum("ij,ij->i", K, K)

    diffs = basis.difference_set()
    for k in A.periodic:
        if k not in diffs:
            raise PotentialError(f"vector potential coefficient at {k} lies outside the basis closure")
    Amat = A.matrices(basis)
    # (1/2)(p.A + A.p) with p -> q + mu on either side
    H += 0.5 * np.einsum("lij,il->ij", Amat, K) + 0.5 * np.einsum("lij,jl->ij", Amat, K)
    diff = basis.coords[:, None, :] - basis.coords[None, :, :]
    for k, val in A.square_fourier().items():
        if val == 0:
            continue
        mask = np.all(diff == np.asarray(k), axis=-1)
        H[mask] += 0.5 * val
    # exact by construction up to the ordering of floating additions
    return 0.5 * (H + H.conj().T)


def velocity_operator(q, vector_potential: CellVectorPotential | None, basis: PlaneWaveBasis) -> np.ndarray:
    """dH/dq_l as matrices, shape (d, N, N)."""
    lat = basis.lattice
    q = np.asarray(q, dtype=float).reshape(lat.dim)
    A = vector_potential if vector_potential is not None else CellVectorPotential.zero(lat.dim)
    K = q[None, :] + basis.vectors
    out = A.matrices(basis)
    for ax in range(lat.dim):
        out[ax][np.diag_indices(basis.size)] += K[:, ax]
    return out


@dataclass(frozen=True)
class BandSolution:
    """Lowest bands at one quasimomentum.

    ``coeffs[:, s]`` holds the plane-wave coefficients of state s; ``groups``
    lists index ranges (start, stop) of degenerate clusters.
    """

    q: np.ndarray
    energies: np.ndarray
    coeffs: np.ndarray
    groups: tuple[tuple[int, int], ...]
    tol_degeneracy: float
    basis: PlaneWaveBasis | None = None
    vector_potential: CellVectorPotential | None = None

    @property
    def n_states(self) -> int:
        return self.energies.shape[0]

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in self.groups)

    def group_energy(self, j: int) -> float:
        a, b = self.groups[j]
        return float(np.mean(self.energies[a:b]))

    def group_coeffs(self, j: int) -> np.ndarray:
        a, b = self.groups[j]
        return self.coeffs[:, a:b]


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for s in range(out.shape[1]):
        mag = np.abs(out[:, s])
        # ties broken toward the lowest index; rounding keeps it stable
        i = int(np.argmax(np.round(mag, 12)))
        c = out[i, s]
        if abs(c) > 0:
            out[:, s] *= np.conj(c) / abs(c)
    return out


def cluster_degenerate(energies: np.ndarray, tol: float) -> tuple[tuple[int, int], ...]:
    """Group consecutive sorted energies whose gaps are <= tol."""
    groups = []
    start = 0
    for i in range(1, len(energies) + 1):
        if i == len(energies) or energies[i] - energies[i - 1] > tol:
            groups.append((start, i))
            start = i
    return tuple(groups)


def solve_bands(
    H: np.ndarray,
    n_bands: int,
    tol_degeneracy: float | None = None,
    *,
    q=None,
    basis: PlaneWaveBasis | None = None,
    vector_potential: CellVectorPotential | None = None,
    rtol: float = DEFAULT_DEGENERACY_RTOL,
) -> BandSolution:
    """Diagonalize H and keep the lowest ``n_bands`` states.

    If the last kept state belongs to a degenerate cluster that extends past
    ``n_bands``, the whole cluster is kept so every group is complete.
    ``tol_degeneracy`` defaults to ``rtol`` times the width of the kept
    energy window (at least 1).
    """
    n = H.shape[0]
    if not 1 <= n_bands <= n:
        raise BandError(f"n_bands={n_bands} must lie in [1, {n}]")
    try:
        w, v = scipy.linalg.eigh(H)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(H) if np.all(np.isfinite(H)) else np.inf
        raise BandError(f"eigensolver failed ({exc}); condition number {cond:.3e}") from exc
    if tol_degeneracy is None:
        # scale by the kept energy window, not the full basis spectrum
        width = float(w[min(n_bands, n - 1)] - w[0])
        tol_degeneracy = rtol * max(width, 1.0)
    groups_all = cluster_degenerate(w, tol_degeneracy)
    keep = n_bands
    for a, b in groups_all:
        if a < n_bands < b:
            keep = b
    groups = tuple(g for g in groups_all if g[1] <= keep)
    coeffs = _fix_phases(v[:, :keep])
    energies = w[:keep].copy()
    energies.setflags(write=False)
    coeffs.setflags(write=False)
    qv = None if q is None else np.asarray(q, dtype=float)
    return BandSolution(qv, energies, coeffs, groups, float(tol_degeneracy), basis, vector_potential)


def solve_at(
    q,
    basis: PlaneWaveBasis,
    potential: PeriodicPotential,
    vector_potential: CellVectorPotential | None = None,
    n_bands: int = 1,
    tol_degeneracy: float | None = None,
) -> BandSolution:
    H = assemble_hamiltonian(q, vector_potential, potential, basis)
    return solve_bands(
        H, n_bands, tol_degeneracy, q=q, basis=basis, vector_potential=vector_potential
    )


def velocity_matrix(sol: BandSolution, j: int, vector_potential: CellVectorPotential | None = None) -> np.ndarray:
    """Matrix elements of dH/dq within group j, shape (d, r, r)."""
    if sol.basis is None or sol.q is None:
        raise BandError("band solution lacks basis/q information")
    A = vector_potential if vector_potential is not None else sol.vector_potential
    V = velocity_operator(sol.q, A, sol.basis)
    C = sol.group_coeffs(j)
    return np.einsum("pa,lpq,qb->lab", C.conj(), V, C)


def group_velocity(
    sol: BandSolution,
    j: int,
    vector_potential: CellVectorPotential | None = None,
    *,
    group_wise: bool = False,
    rtol: float = 1e-6,
) -> np.ndarray:
    """Hellmann-Feynman group velocity v_j = grad_q E_j of band group j.

    For a degenerate group (``group_wise=True``) the velocity matrix must be
    a multiple of the identity; otherwise there is no single v_j.
    """
    Vm = velocity_matrix(sol, j, vector_potential)
    r = Vm.shape[1]
    if r == 1:
        return Vm[:, 0, 0].real.copy()
    if not group_wise:
        raise BandError(f"band group {j} is {r}-fold degenerate; pass group_wise=True")
    v = np.real(np.trace(Vm, axis1=1, axis2=2)) / r
    dev = np.max(np.abs(Vm - v[:, None, None] * np.eye(r)[None]))
    scale = max(1.0, float(np.max(np.abs(Vm))))
    if dev > rtol * scale:
        raise BandError(
            f"velocity matrix of degenerate group {j} is not scalar (deviation {dev:.3e})"
        )
    return v


def cell_sample_grid(lat: LatticeSpec, n_per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform fractional grid s in [0,1)^d and Cartesian points z = s @ direct."""
    axes = [np.arange(n_per_axis) / n_per_axis] * lat.dim
    s = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lat.dim)
    return s, s @ lat.direct


def plane_wave_samples(basis: PlaneWaveBasis, s: np.ndarray) -> np.ndarray:
    """exp(i mu . z) at fractional points s, shape (npts, N)."""
    return np.exp(1j * TWO_PI * s @ basis.coords.T)


def bloch_samples(sol: BandSolution, s: np.ndarray, q=None) -> np.ndarray:
    """Phi_s(z, q) = exp(i q.z) phi_s(z) at fractional points, shape (npts, n_states)."""
    basis = sol.basis
    qq = sol.q if q is None else np.asarray(q, dtype=float)
    z = s @ basis.lattice.direct
    E = plane_wave_samples(basis, s)
    return np.exp(1j * z @ qq)[:, None] * (E @ sol.coeffs)


def oversampled_points(basis: PlaneWaveBasis, oversample: int = 4) -> int:
    return oversample * (2 * basis.max_abs_coord() + 1)


def bloch_orthogonality_check(sol: BandSolution, oversample: int = 4) -> dict:
    """Cell-quadrature orthonormality and truncated completeness residuals.

    ``orthonormality`` is max |(Phi_a, Phi_b) - delta_ab|. ``completeness``
    lists, for n = 1..n_states, the relative Frobenius distance between the
    n-band kernel sum_a Phi_a(z) conj(Phi_a(y)) and the full plane-wave kernel
    over all sample pairs (z, y).
    """
    if sol.n_states < 2:
        raise BandError("orthogonality check needs at least two solved bands")
    basis = sol.basis
    npts = oversampled_points(basis, oversample)
    s, _ = cell_sample_grid(basis.lattice, npts)
    Phi = bloch_samples(sol, s)
    gram = Phi.T @ Phi.conj() / s.shape[0]
    ortho = float(np.max(np.abs(gram - np.eye(sol.n_states))))

    E = plane_wave_samples(basis, s)
    G = E.conj().T @ E  # Gram of plane waves over the samples
    full = np.sqrt(np.real(np.trace(G @ G)))
    comp = []
    C = sol.coeffs
    for n in range(1, sol.n_states + 1):
        X = C[:, :n] @ C[:, :n].conj().T - np.eye(basis.size)
        val = np.real(np.trace(X @ G @ X.conj().T @ G))
        comp.append(float(np.sqrt(max(val, 0.0)) / full))
    return {"orthonormality": ortho, "completeness": comp}


@dataclass(frozen=True)
class BandTable:
    """Band solutions over a BZ grid with a common group layout."""

    grid: BZGrid
    basis: PlaneWaveBasis
    potential: PeriodicPotential
    vector_potential: CellVectorPotential
    solutions: tuple[BandSolution, ...]
    layout: tuple[int, ...]

    @property
    def n_groups(self) -> int:
        return len(self.layout)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.layout)]))

    def group_slice(self, j: int) -> slice:
        o = self.offsets
        return slice(o[j], o[j + 1])

    def energies(self) -> np.ndarray:
        """Group energies, shape (n_groups, Nq)."""
        out = np.empty((self.n_groups, self.grid.size))
        for i, sol in enumerate(self.solutions):
            for j in range(self.n_groups):
                out[j, i] = float(np.mean(sol.energies[self.group_slice(j)]))
        return out

    def state_energies(self) -> np.ndarray:
        """Per-state energies, shape (n_states, Nq)."""
        n = self.offsets[-1]
        return np.stack([sol.energies[:n] for sol in self.solutions], axis=1)

    def coeff_array(self) -> np.ndarray:
        """Coefficients of the kept states, shape (Nq, N_pw, n_states)."""
        n = self.offsets[-1]
        return np.stack([sol.coeffs[:, :n] for sol in self.solutions])

    def velocities(self) -> np.ndarray:
        """Group velocities, shape (n_groups, Nq, d)."""
        out = np.empty((self.n_groups, self.grid.size, self.grid.lattice.dim))
        for i, sol in enumerate(self.solutions):
            for j in range(self.n_groups):
                Vm = velocity_matrix(_as_groups(sol, self), j)
                r = Vm.shape[1]
                if r == 1:
                    out[j, i] = Vm[:, 0, 0].real
                else:
                    out[j, i] = group_velocity(_as_groups(sol, self), j, group_wise=True)
        return out


def _as_groups(sol: BandSolution, table: BandTable) -> BandSolution:
    o = table.offsets
    groups = tuple((o[j], o[j + 1]) for j in range(table.n_groups))
    return BandSolution(sol.q, sol.energies, sol.coeffs, groups, sol.tol_degeneracy, sol.basis, sol.vector_potential)


def solve_grid(
    grid: BZGrid,
    basis: PlaneWaveBasis,
    potential: PeriodicPotential,
    vector_potential: CellVectorPotential | None = None,
    n_bands: int = 1,
    *,
    layout: str | Sequence[int] = "auto",
    tol_degeneracy: float | None = None,
    executor=None,
) -> BandTable:
    """Solve every grid point and fix a group layout common to the whole grid.

    ``layout`` is ``"auto"`` (degeneracy clusters must agree at every q),
    ``"scalar"`` (each state is its own 1x1 group) or explicit group sizes,
    which must be degenerate within tolerance at every q.
    """
    A = vector_potential if vector_potential is not None else CellVectorPotential.zero(grid.lattice.dim)

    def one(q):
        return solve_at(q, basis, potential, A, n_bands, tol_degeneracy)

    if executor is not None:
        sols = tuple(executor.map(one, list(grid.points)))
    else:
        sols = tuple(one(q) for q in grid.points)

    if layout == "scalar":
        lay = (1,) * n_bands
    elif layout == "auto":
        first = sols[0].multiplicities
        for sol in sols:
            if sol.multiplicities != first:
                raise BandError(
                    "degeneracy pattern changes across the grid "
                    f"({first} at q={sols[0].q} vs {sol.multiplicities} at q={sol.q}); "
                    "use layout='scalar' or explicit group sizes"
                )
        lay = first
    else:
        lay = tuple(int(v) for v in layout)
        o = np.concatenate([[0], np.cumsum(lay)])
        for sol in sols:
            if o[-1] > sol.n_states:
                raise BandError(f"layout {lay} needs {o[-1]} states, solved {sol.n_states}")
            for a, b in zip(o[:-1], o[1:]):
                if sol.energies[b - 1] - sol.energies[a] > sol.tol_degeneracy:
                    raise BandError(f"states {a}..{b - 1} are not degenerate at q={sol.q}")
    if sum(lay) > min(s.n_states for s in sols):
        raise BandError("layout exceeds the number of solved states")
    return BandTable(grid, basis, potential, A, sols, lay)
