"""Direct 1D Schroedinger reference for the golden-rule scattering rates.

The oracle evolves

    d psi/dt = (i eps/2) psi'' + U(x/eps) psi/(i eps) + V(x/eps) psi/(i sqrt(eps))

with a Strang split-step Fourier scheme on a periodic box of whole lattice
cells, projects onto Bloch states of the periodic problem, and fits the
decay of the initial-state population. No vector potential is included.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bloch import PeriodicPotential, PlaneWaveBasis, solve_at
from .disorder import CorrelationModel, sample_realization
from .lattice import LatticeSpec, build_lattice, bz_grid

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass
class WaveState:
    """Wavefunction samples on a periodic box of ``n_cells`` lattice cells."""

    psi: np.ndarray
    n_cells: int
    cell_length: float = 1.0
    t: float = 0.0

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    @property
    def length(self) -> float:
        return self.n_cells * self.cell_length

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.dx)

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Wavenumbers and psi~(k) = int dx exp(-i k x) psi(x)."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        return k, np.fft.fft(self.psi) * self.dx


def _check_1d(lat: LatticeSpec) -> None:
    if lat.dim != 1:
        raise OracleError("the Schroedinger oracle is one-dimensional")


def bloch_state(
    lat: LatticeSpec,
    basis: PlaneWaveBasis,
    potential: PeriodicPotential,
    band: int,
    q: float,
    n_cells: int,
    points_per_cell: int,
) -> WaveState:
    """Box-normalized Bloch state of band ``band`` at an allowed q."""
    _check_1d(lat)
    a = lat.direct[0, 0]
    sol = solve_at([q], basis, potential, None, band + 1)
    n = n_cells * points_per_cell
    x = np.arange(n) * (n_cells * a / n)
    phase = np.exp(1j * np.outer(x, basis.vectors[:, 0]))
    psi = np.exp(1j * q * x) * (phase @ sol.coeffs[:, band])
    psi /= np.sqrt(n_cells * a)
    return WaveState(psi, n_cells, a)


def allowed_q(lat: LatticeSpec, n_cells: int) -> np.ndarray:
    """Quasimomenta compatible with a periodic box of n_cells (folded grid order)."""
    return bz_grid(lat, n_cells).points[:, 0]


def evolve_schrodinger(
    psi0: WaveState,
    potential: PeriodicPotential,
    lat: LatticeSpec,
    disorder: np.ndarray | None,
    eps: float,
    dt: float,
    n_steps: int,
    *,
    record_every: int = 1,
    observer=None,
) -> list[WaveState]:
    """Strang split-step evolution; returns states every ``record_every`` steps.

    ``disorder`` holds V(x/eps) on the state's grid. ``observer(state)`` is
    called on every recorded state if given.
    """
    _check_1d(lat)
    if eps <= 0 or dt <= 0:
        raise OracleError("eps and dt must be positive")
    n = psi0.n
    k = 2 * np.pi * np.fft.fftfreq(n, d=psi0.dx)
    kmax = np.pi / psi0.dx
    if 0.5 * eps * kmax**2 * dt > np.pi:
        raise OracleError(
            f"dt={dt} too large: kinetic phase advance {0.5 * eps * kmax**2 * dt:.3f} rad at the "
            f"grid cutoff exceeds pi (need dt <= {2 * np.pi / (eps * kmax**2):.3e})"
        )
    x = psi0.x
    pot = potential.evaluate(lat, (x / eps)[:, None]) / eps
    if disorder is not None:
        if disorder.shape != (n,):
            raise OracleError("disorder samples must match the wavefunction grid")
        pot = pot + np.asarray(disorder, dtype=float) / np.sqrt(eps)
    half_v = np.exp(-0.5j * dt * pot)
    kin = np.exp(-0.5j * eps * dt * k**2)
    psi = psi0.psi.astype(complex).copy()
    out = [WaveState(psi.copy(), psi0.n_cells, psi0.cell_length, psi0.t)]
    if observer is not None:
        observer(out[0])
    for step in range(1, n_steps + 1):
        psi = half_v * np.fft.ifft(kin * np.fft.fft(half_v * psi))
        if step % record_every == 0:
            st = WaveState(psi.copy(), psi0.n_cells, psi0.cell_length, psi0.t + step * dt)
            out.append(st)
            if observer is not None:
                observer(st)
    return out


def project_bands(
    state: WaveState,
    lat: LatticeSpec,
    basis: PlaneWaveBasis,
    potential: PeriodicPotential,
    n_bands: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Populations p_m(q) = |<Phi_{m,q}, psi>|^2 over the box-allowed q.

    Returns (q values, populations of shape (n_bands, n_q)). The overlap is
    evaluated through psi~ at q + mu, which is exact for grids that resolve
    the basis.
    """
    _check_1d(lat)
    a = lat.direct[0, 0]
    if not np.isclose(state.cell_length, a):
        raise OracleError("state grid and lattice constant disagree")
    if state.n % state.n_cells:
        raise OracleError("box is incommensurate with the lattice (points per cell not integer)")
    ppc = state.n // state.n_cells
    if ppc <= 2 * basis.max_abs_coord():
        raise OracleError("grid too coarse to resolve the plane-wave basis")
    _, psik = state.spectrum()
    qs = allowed_q(lat, state.n_cells)
    n = state.n
    pops = np.zeros((n_bands, qs.size))
    for iq, q in enumerate(qs):
        sol = solve_at([q], basis, potential, None, n_bands)
        kk = q + basis.vectors[:, 0]
        idx = np.rint(kk * state.length / (2 * np.pi)).astype(int) % n
        amp = sol.coeffs[:, :n_bands].conj().T @ psik[idx]
        pops[:, iq] = np.abs(amp) ** 2 / state.length
    return qs, pops


def overlap(state: WaveState, target: WaveState) -> complex:
    return complex(np.sum(np.conj(target.psi) * state.psi) * state.dx)


@dataclass
class DecayFit:
    rate: float
    error: float
    n_points: int
    window: tuple[float, float]


def measure_decay_rate(
    times: np.ndarray,
    populations: np.ndarray,
    window: tuple[float, float] = (0.9, 0.5),
    noise: float = 0.05,
) -> DecayFit:
    """Least-squares fit of log p(t) = c - rate t on the population window.

    The window is taken relative to p(0). If the series never drops below the
    upper bound the whole series is fitted (rate near zero). A series that
    rises more than ``noise`` above its running minimum inside the window is
    rejected as non-monotone.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(populations, dtype=float) / float(populations[0])
    hi, lo = window
    if np.all(p > hi):
        sel = np.ones_like(p, dtype=bool)
    else:
        first = int(np.argmax(p <= hi))
        below = np.nonzero(p < lo)[0]
        last = int(below[0]) if below.size else p.size
        sel = np.zeros_like(p, dtype=bool)
        sel[first:last] = True
        seg = p[first:last]
        if seg.size and np.max(seg - np.minimum.accumulate(seg)) > noise:
            raise OracleError("population series is not monotone within the fit window")
    if sel.sum() < 3:
        raise OracleError("fewer than three samples inside the fit window")
    coef, cov = np.polyfit(t[sel], np.log(np.maximum(p[sel], 1e-300)), 1, cov=True)
    return DecayFit(float(-coef[0]), float(np.sqrt(cov[0, 0])), int(sel.sum()), window)


# --- Wigner transform -------------------------------------------------------------------------


@dataclass
class WignerGrid:
    x: np.ndarray
    k: np.ndarray
    values: np.ndarray  # real part, shape (n_x, n_k)
    eps: float
    imag_residual: float = 0.0


def wigner_transform(state: WaveState, eps: float = 1.0, x_stride: int = 1) -> WignerGrid:
    """W(x, k) = int dy/(2 pi) exp(i k y) psi(x - eps y) conj(psi(x)) on the periodic grid.

    y runs over the lattice y_j = j dx / eps so that x - eps y_j is a grid
    point; k takes the matching discrete values (ordered ascending).
    """
    n = state.n
    dx = state.dx
    psi = state.psi
    rows = np.arange(0, n, x_stride)
    j = np.arange(n)
    G = psi[(rows[:, None] - j[None, :]) % n]
    # sum_j exp(2 pi i m j / n) g_j = n * ifft
    S = np.fft.ifft(G, axis=1) * n
    W = (dx / eps) / (2 * np.pi) * S * np.conj(psi[rows])[:, None]
    k = 2 * np.pi * eps * np.fft.fftfreq(n, d=dx)
    order = np.argsort(k)
    W = W[:, order]
    imag = float(np.max(np.abs(W.imag))) if W.size else 0.0
    log.debug("Wigner imaginary part (non-symmetrized definition): %.3e", imag)
    return WignerGrid(rows * dx, k[order], W.real.copy(), eps, imag)


def gaussian_wigner(x, k, x0: float, k0: float, width: float) -> np.ndarray:
    """Closed form of the (non-symmetrized) transform for a normalized Gaussian packet."""
    X, K = np.meshgrid(np.asarray(x) - x0, np.asarray(k) - k0, indexing="ij")
    return np.sqrt(2) / (2 * np.pi) * np.exp(-(X**2) / (4 * width**2) - width**2 * K**2) * np.exp(1j * K * X)


# --- golden-rule experiment ---------------------------------------------------------------------


@dataclass
class GoldenRuleSetup:
    """Parameters of one ensemble decay-rate measurement (eps = 1 units)."""

    lattice_constant: float = 1.0
    n_cells: int = 2048
    points_per_cell: int = 8
    band: int = 0
    q_index: int = 640
    model: CorrelationModel = field(default_factory=lambda: CorrelationModel("gaussian", 0.05, 0.5))
    potential: PeriodicPotential = field(default_factory=PeriodicPotential.zero)
    basis_count: int = 7
    dt: float = 0.008
    t_max: float = 40.0
    record_every: int = 25
    seeds: tuple[int, ...] = tuple(range(32))
    window: tuple[float, float] = (0.9, 0.5)


def run_decay(setup: GoldenRuleSetup, seed: int, strength: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Population of the initial Bloch state versus time for one realization."""
    from .bloch import basis_with_count

    lat = build_lattice(1, [[setup.lattice_constant]])
    basis = basis_with_count(lat, setup.basis_count)
    q = allowed_q(lat, setup.n_cells)[setup.q_index]
    init = bloch_state(lat, basis, setup.potential, setup.band, q, setup.n_cells, setup.points_per_cell)
    model = setup.model if strength is None else CorrelationModel(
        setup.model.kind, strength, setup.model.length, setup.model.cutoff, 1
    )
    V = sample_realization(model, init.n, init.length, seed)
    times, pops = [], []

    def watch(st):
        times.append(st.t)
        pops.append(abs(overlap(st, init)) ** 2)

    n_steps = int(round(setup.t_max / setup.dt))
    # stop early once the population left the fit window
    chunk = setup.record_every * 20
    state = init
    done = 0
    while done < n_steps:
        steps = min(chunk, n_steps - done)
        traj = evolve_schrodinger(
            state, setup.potential, lat, V, 1.0, setup.dt, steps, record_every=setup.record_every
        )
        for st in traj[1:] if done else traj:
            watch(st)
        state = traj[-1]
        done += steps
        if pops[-1] < 0.8 * setup.window[1]:
            break
    return np.array(times), np.array(pops)


def kernel_prediction(setup: GoldenRuleSetup, strength: float | None = None, eta: float | None = None) -> float:
    """Gamma of the initial state from the assembled kernel on the box-matched grid."""
    from .bloch import basis_with_count, solve_grid
    from .kernel import assemble_kernel

    lat = build_lattice(1, [[setup.lattice_constant]])
    basis = basis_with_count(lat, setup.basis_count)
    grid = bz_grid(lat, setup.n_cells)
    n_bands = max(setup.band + 2, 2)
    table = solve_grid(grid, basis, setup.potential, None, n_bands, layout="scalar")
    model = setup.model if strength is None else CorrelationModel(
        setup.model.kind, strength, setup.model.length, setup.model.cutoff, 1
    )
    kern = assemble_kernel(table, model, eta, None, "transfer", shift=False)
    return float(kern.gamma[setup.band][setup.q_index, 0, 0].real)


def golden_rule_report(setup: GoldenRuleSetup, strength: float | None = None, executor=None) -> dict:
    """Per-seed fitted rates, ensemble mean and standard error, kernel Gamma, ratio."""

    def one(seed):
        t, p = run_decay(setup, seed, strength)
        return measure_decay_rate(t, p, setup.window)

    fits = list(executor.map(one, setup.seeds)) if executor is not None else [one(s) for s in setup.seeds]
    rates = np.array([f.rate for f in fits])
    mean = float(rates.mean())
    se = float(rates.std(ddof=1) / np.sqrt(rates.size)) if rates.size > 1 else float("nan")
    gamma = kernel_prediction(setup, strength)
    s2 = setup.model.strength if strength is None else strength
    return {
        "strength": s2,
        "seeds": list(setup.seeds),
        "rates": rates.tolist(),
        "fit_errors": [f.error for f in fits],
        "mean_rate": mean,
        "standard_error": se,
        "kernel_gamma": gamma,
        "ratio": mean / gamma if gamma else float("nan"),
    }
