"""Time integration of the matrix-valued transport equation

    d/dt u_j + v_j . grad_x u_j + [M_j, u_j] + loss_j(u) = gain_j(u)

on a periodic 1D spatial box (or without x dependence) times a BZ grid.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .bloch import (
    BandTable,
    CellVectorPotential,
    PeriodicPotential,
    PlaneWaveBasis,
    solve_grid,
)
from .coupling import lorentz_table
from .disorder import CorrelationModel
from .kernel import ScatteringKernel, apply_gain, apply_loss, assemble_kernel
from .lattice import BZGrid

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    pass


class StabilityWarning(UserWarning):
    pass


@dataclass
class DistributionField:
    """Hermitian blocks u_j(x, q); ``blocks[j]`` has shape (Nx, Nq, r_j, r_j).

    ``x`` is None in homogeneous mode (a single spatial node of unit measure).
    """

    t: float
    grid: BZGrid
    blocks: list[np.ndarray]
    x: np.ndarray | None = None
    box_length: float = 1.0

    @property
    def homogeneous(self) -> bool:
        return self.x is None

    @property
    def n_x(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def dx(self) -> float:
        return 1.0 if self.x is None else self.box_length / self.n_x

    @property
    def layout(self) -> tuple[int, ...]:
        return tuple(b.shape[-1] for b in self.blocks)

    def copy(self) -> "DistributionField":
        return replace(self, blocks=[b.copy() for b in self.blocks])

    def with_blocks(self, blocks, t=None) -> "DistributionField":
        return replace(self, blocks=blocks, t=self.t if t is None else t)

    def hermiticity_residual(self) -> float:
        return max(float(np.max(np.abs(b - np.conj(np.swapaxes(b, -1, -2))))) for b in self.blocks)

    def symmetrized(self) -> "DistributionField":
        return self.with_blocks([0.5 * (b + np.conj(np.swapaxes(b, -1, -2))) for b in self.blocks])

    def psd_violation(self) -> float:
        """Magnitude of the most negative eigenvalue over all blocks (0 if PSD)."""
        worst = 0.0
        for b in self.blocks:
            if b.shape[-1] == 1:
                ev = b[..., 0, 0].real
            else:
                ev = np.linalg.eigvalsh(0.5 * (b + np.conj(np.swapaxes(b, -1, -2))))
            worst = max(worst, float(-np.min(ev)))
        return max(worst, 0.0)


def zeros_like_layout(grid: BZGrid, layout: Sequence[int], n_x: int = 1) -> list[np.ndarray]:
    return [np.zeros((n_x, grid.size, r, r), dtype=complex) for r in layout]


def make_field(
    grid: BZGrid,
    layout: Sequence[int],
    values: Callable | None = None,
    *,
    n_x: int | None = None,
    box_length: float = 1.0,
    t: float = 0.0,
) -> DistributionField:
    """Field with u_j(x, q) = values(j, x, q) * identity (scalar profiles)."""
    x = None if n_x is None else np.arange(n_x) * box_length / n_x
    nx = 1 if n_x is None else n_x
    blocks = zeros_like_layout(grid, layout, nx)
    if values is not None:
        xs = np.zeros(1) if x is None else x
        for j, r in enumerate(layout):
            prof = np.asarray(values(j, xs[:, None], grid.points[None, :, :]), dtype=complex)
            prof = np.broadcast_to(prof, (nx, grid.size))
            blocks[j][...] = prof[..., None, None] * np.eye(r)
    return DistributionField(t, grid, blocks, x, box_length)


# --- fields ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldConfig:
    """Electromagnetic protocol through the vector potential (scalar potential 0).

    A(t, x) = A0 - E t + (0, B_z x, -B_y x) restricted to the lattice
    dimension, plus a static cell-periodic part. x is the spatial axis.
    """

    electric: np.ndarray = field(default_factory=lambda: np.zeros(3))
    magnetic: np.ndarray = field(default_factory=lambda: np.zeros(3))
    uniform: np.ndarray = field(default_factory=lambda: np.zeros(3))
    periodic: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("electric", "magnetic", "uniform"):
            v = np.zeros(3)
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            v[: arr.size] = arr
            object.__setattr__(self, name, v)
        if self.magnetic[0] != 0:
            raise TransportError("B_x cannot be represented with a single spatial axis x")

    @property
    def is_static(self) -> bool:
        return not np.any(self.electric)

    @property
    def is_x_dependent(self) -> bool:
        return bool(np.any(self.magnetic))

    def vector(self, t: float, x: float) -> np.ndarray:
        b = self.magnetic
        return self.uniform - self.electric * t + np.array([0.0, b[2] * x, -b[1] * x])

    def at(self, t: float, x: float, dim: int) -> CellVectorPotential:
        return CellVectorPotential(self.vector(t, x)[:dim], self.periodic)

    def check_consistency(self, t: float = 0.3, x: float = 0.7, h: float = 1e-5) -> tuple[float, float]:
        """Max deviation of -dA/dt from E and of curl A from B (finite differences)."""
        e_num = -(self.vector(t + h, x) - self.vector(t - h, x)) / (2 * h)
        dAdx = (self.vector(t, x + h) - self.vector(t, x - h)) / (2 * h)
        # only x-derivatives are non-zero: curl A = (0, -dAz/dx, dAy/dx)
        b_num = np.array([0.0, -dAdx[2], dAdx[1]])
        return float(np.max(np.abs(e_num - self.electric))), float(np.max(np.abs(b_num - self.magnetic)))


# --- coefficients ---------------------------------------------------------------------------


@dataclass
class Coefficients:
    """Everything the right-hand side needs at one sampled A."""

    table: BandTable
    velocities: np.ndarray  # (G, Nq, d)
    lorentz: list[np.ndarray] | None  # per group (Nq, r, r)
    kernel: ScatteringKernel | None
    A: CellVectorPotential


@dataclass
class RTESystem:
    """Builds and caches band/kernel data as A(t, x) changes."""

    grid: BZGrid
    basis: PlaneWaveBasis
    potential: PeriodicPotential
    n_bands: int
    fields: FieldConfig = field(default_factory=FieldConfig)
    model: CorrelationModel | None = None
    layout: str | Sequence[int] = "scalar"
    eta: float | None = None
    xi: float | None = None
    convention: str = "transfer"
    shift: bool = True
    lorentz: bool = True
    rebuild_threshold: float = 1e-3
    x: np.ndarray | None = None
    executor: object = None
    _cache: list = field(default_factory=list, repr=False)
    builds: int = 0

    def coefficients_for(self, A: CellVectorPotential) -> Coefficients:
        for c in self._cache:
            if np.max(np.abs(c.A.uniform - A.uniform)) <= self.rebuild_threshold:
                return c
        table = solve_grid(self.grid, self.basis, self.potential, A, self.n_bands, layout=self.layout, executor=self.executor)
        vel = table.velocities()
        lor = lorentz_table(table, vel) if self.lorentz else None
        kern = None
        if self.model is not None:
            kern = assemble_kernel(table, self.model, self.eta, self.xi, self.convention, shift=self.shift)
        c = Coefficients(table, vel, lor, kern, A)
        self.builds += 1
        if not self.fields.is_static:
            # keep only recent builds for time-dependent protocols
            self._cache = [cc for cc in self._cache[-8:]]
        self._cache.append(c)
        return c

    def node_coefficients(self, t: float, n_x: int) -> list[Coefficients]:
        d = self.grid.lattice.dim
        xs = np.zeros(n_x) if self.x is None else self.x
        return [self.coefficients_for(self.fields.at(t, float(x), d)) for x in xs]

    @property
    def layout_sizes(self) -> tuple[int, ...]:
        return self.coefficients_for(self.fields.at(0.0, 0.0, self.grid.lattice.dim)).table.layout


# --- right-hand side ------------------------------------------------------------------------


def _advection(u: np.ndarray, v: np.ndarray, dx: float, stencil: str) -> np.ndarray:
    """-v d/dx u on a periodic axis 0; v broadcasts against (Nx, Nq)."""
    fwd = np.roll(u, -1, axis=0)
    bwd = np.roll(u, 1, axis=0)
    vv = v[..., None, None]
    if stencil == "centered":
        return -vv * (fwd - bwd) / (2 * dx)
    if stencil == "upwind":
        return -np.where(vv > 0, vv * (u - bwd), vv * (fwd - u)) / dx
    raise ValueError(f"unknown stencil {stencil!r}")


def lorentz_term(M: list[np.ndarray], u: list[np.ndarray]) -> list[np.ndarray]:
    """[M_j, u_j] per group; M_j broadcasts over the spatial axis."""
    return [Mj @ b - b @ Mj for Mj, b in zip(M, u)]


def rte_rhs(
    u: DistributionField,
    coeffs: Coefficients | Sequence[Coefficients],
    *,
    stencil: str = "upwind",
    collisions: bool = True,
    lorentz: bool = True,
    advection: bool = True,
) -> list[np.ndarray]:
    """Time derivative of every block.

    ``coeffs`` is one coefficient set for all x nodes or one per node.
    """
    per_node = isinstance(coeffs, Coefficients)
    nx = u.n_x
    nodes = [coeffs] * nx if per_node else list(coeffs)
    if len(nodes) != nx:
        raise TransportError("need one coefficient set per spatial node")
    out = [np.zeros_like(b) for b in u.blocks]

    if advection and not u.homogeneous:
        for j, b in enumerate(u.blocks):
            if per_node:
                v = np.broadcast_to(coeffs.velocities[j][:, 0], (nx, u.grid.size))
            else:
                v = np.stack([c.velocities[j][:, 0] for c in nodes])
            out[j] += _advection(b, v, u.dx, stencil)

    # group x nodes sharing one coefficient object
    groups: dict[int, list[int]] = {}
    ref: dict[int, Coefficients] = {}
    for ix, c in enumerate(nodes):
        groups.setdefault(id(c), []).append(ix)
        ref[id(c)] = c
    for key, idx in groups.items():
        c = ref[key]
        sl = [b[idx] for b in u.blocks]
        if lorentz and c.lorentz is not None:
            for j, term in enumerate(lorentz_term([M[None] for M in c.lorentz], sl)):
                out[j][idx] -= term
        if collisions and c.kernel is not None:
            g = apply_gain(c.kernel, sl)
            l = apply_loss(c.kernel, sl)
            for j in range(len(out)):
                out[j][idx] += g[j] - l[j]
    return out


def lorentz_trace(u: DistributionField, coeffs: Coefficients) -> float:
    """Contribution of the commutator term to dN/dt (zero up to rounding)."""
    if coeffs.lorentz is None:
        return 0.0
    terms = lorentz_term([M[None] for M in coeffs.lorentz], u.blocks)
    w = u.grid.weights
    return float(sum(np.real(np.einsum("xqaa,q->", t, w)) for t in terms) * u.dx)


# --- observables ----------------------------------------------------------------------------


def observables(u: DistributionField, velocities: np.ndarray | None = None) -> dict:
    """Total number N, density n(x), band populations p_j and current density."""
    w = u.grid.weights
    traces = [np.real(np.einsum("xqaa->xq", b)) for b in u.blocks]
    density = sum(tr @ w for tr in traces)
    pops = np.array([float(np.sum(tr @ w) * u.dx) for tr in traces])
    d = u.grid.lattice.dim
    current = np.zeros(d)
    if velocities is not None:
        for j, tr in enumerate(traces):
            current += np.einsum("xq,q,qd->d", tr, w, velocities[j]) * u.dx
    return {
        "t": u.t,
        "N": float(np.sum(pops)),
        "density": np.asarray(density, dtype=float),
        "populations": pops,
        "current": current,
    }


# --- time stepping --------------------------------------------------------------------------


@dataclass
class Trajectory:
    snapshots: list[DistributionField]
    observables: list[dict]
    hermiticity: list[float]
    psd_violation: list[float]
    lorentz_trace: list[float]
    steps: int
    rebuilds: int = 0


def _axpy(a: float, x: list[np.ndarray], y: list[np.ndarray]) -> list[np.ndarray]:
    return [yy + a * xx for xx, yy in zip(x, y)]


def check_stability(dt: float, u: DistributionField, coeffs: Coefficients) -> list[str]:
    """Advisory CFL and collision-stiffness messages (empty when fine)."""
    msgs = []
    if not u.homogeneous:
        vmax = float(np.max(np.abs(coeffs.velocities[..., 0]))) if coeffs.velocities.size else 0.0
        cfl = dt * vmax / u.dx
        if cfl > 1.0:
            msgs.append(f"CFL number {cfl:.3f} exceeds 1 (dt={dt}, dx={u.dx}, max|v|={vmax:.3e})")
    if coeffs.kernel is not None:
        gmax = max(float(np.max(np.abs(g))) for g in coeffs.kernel.gamma)
        if dt * gmax > 2.5:
            msgs.append(f"dt * max Gamma = {dt * gmax:.3f} is outside the explicit stability region")
    return msgs


def evolve(
    u0: DistributionField,
    system: RTESystem | Coefficients,
    t_final: float,
    dt: float,
    method: str = "rk4",
    *,
    snapshot_every: int = 1,
    stencil: str = "upwind",
    collisions: bool = True,
    lorentz: bool = True,
    allow_unstable: bool = False,
) -> Trajectory:
    """Fixed-step integration from u0.t to t_final.

    After every step each block is re-symmetrized; the Hermitian residual
    before symmetrization is recorded, as are semidefiniteness violations.
    """
    if dt <= 0:
        raise TransportError("dt must be positive")
    if method not in ("rk4", "euler"):
        raise TransportError(f"unknown method {method!r}")
    n_steps = int(round((t_final - u0.t) / dt))
    if n_steps < 0 or not np.isclose(u0.t + n_steps * dt, t_final, rtol=1e-9, atol=1e-12):
        raise TransportError("t_final - t0 must be a non-negative multiple of dt")

    def coeffs_at(t):
        if isinstance(system, Coefficients):
            return system
        nodes = system.node_coefficients(t, u0.n_x)
        return nodes[0] if len(set(map(id, nodes))) == 1 else nodes

    def rhs(t, blocks):
        return rte_rhs(
            u0.with_blocks(blocks, t), coeffs_at(t), stencil=stencil, collisions=collisions, lorentz=lorentz
        )

    c0 = coeffs_at(u0.t)
    c0_single = c0 if isinstance(c0, Coefficients) else c0[0]
    msgs = check_stability(dt, u0, c0_single)
    for m in msgs:
        warnings.warn(m, StabilityWarning, stacklevel=2)
    if msgs and not allow_unstable:
        log.warning("stability advisory: %s", "; ".join(msgs))

    def vel():
        return c0_single.velocities

    u = u0.copy()
    snaps = [u.copy()]
    obs = [observables(u, vel())]
    herm, psd, ltr = [], [], []
    for step in range(1, n_steps + 1):
        t = u.t
        y = u.blocks
        if method == "euler":
            k1 = rhs(t, y)
            new = _axpy(dt, k1, y)
        else:
            k1 = rhs(t, y)
            k2 = rhs(t + dt / 2, _axpy(dt / 2, k1, y))
            k3 = rhs(t + dt / 2, _axpy(dt / 2, k2, y))
            k4 = rhs(t + dt, _axpy(dt, k3, y))
            new = [yy + dt / 6 * (a + 2 * b + 2 * c + d) for yy, a, b, c, d in zip(y, k1, k2, k3, k4)]
        for b in new:
            if not np.all(np.isfinite(b)):
                raise TransportError(f"non-finite values at step {step} (t={t + dt:.6g})")
        nu = u.with_blocks(new, u0.t + step * dt)
        herm.append(nu.hermiticity_residual())
        u = nu.symmetrized()
        psd.append(u.psd_violation())
        cc = coeffs_at(u.t)
        ltr.append(lorentz_trace(u, cc if isinstance(cc, Coefficients) else cc[0]) if u.homogeneous or isinstance(cc, Coefficients) else 0.0)
        if step % snapshot_every == 0 or step == n_steps:
            snaps.append(u.copy())
            obs.append(observables(u, vel()))
    if herm:
        log.info("max Hermitian residual before symmetrization: %.3e", max(herm))
    rebuilds = 0 if isinstance(system, Coefficients) else system.builds
    return Trajectory(snaps, obs, herm, psd, ltr, n_steps, rebuilds)
