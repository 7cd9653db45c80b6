"""Build model objects from a RunConfig and run the CLI workloads."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .bloch import BandTable, CellVectorPotential, PeriodicPotential, basis_with_count, bloch_orthogonality_check, solve_grid
from .config import RunConfig
from .disorder import CorrelationModel
from .kernel import assemble_kernel
from .lattice import LatticeSpec, build_lattice, bz_grid
from .transport import FieldConfig, RTESystem, evolve, make_field

log = logging.getLogger(__name__)


@dataclass
class Case:
    cfg: RunConfig
    lattice: LatticeSpec
    potential: PeriodicPotential
    vector_potential: CellVectorPotential
    model: CorrelationModel | None

    @property
    def dim(self) -> int:
        return self.lattice.dim


def build_potential(cfg: RunConfig) -> PeriodicPotential:
    p = cfg.potential
    d = cfg.lattice.dim
    if p.kind == "zero":
        return PeriodicPotential.zero()
    if p.kind == "cosine":
        if p.axis >= d:
            raise ValueError(f"potential.axis={p.axis} exceeds lattice dimension {d}")
        return PeriodicPotential.cosine(d, p.amplitude, p.axis)
    coeffs = {}
    for entry in p.coefficients:
        idx = tuple(int(v) for v in entry["index"])
        if len(idx) != d:
            raise ValueError(f"potential coefficient index {idx} has wrong dimension")
        val = complex(entry.get("re", 0.0), entry.get("im", 0.0))
        coeffs[idx] = val
        coeffs[tuple(-v for v in idx)] = np.conj(val) if any(idx) else val.real
    return PeriodicPotential(coeffs)


def build_case(cfg: RunConfig) -> Case:
    lat = build_lattice(cfg.lattice.dim, cfg.lattice.basis)
    U = build_potential(cfg)
    d = lat.dim
    A = CellVectorPotential(np.asarray(cfg.vector_potential.uniform, dtype=float)[:d])
    model = None
    if cfg.disorder.enabled:
        dz = cfg.disorder
        model = CorrelationModel(dz.model, dz.strength, dz.length, dz.cutoff, d)
    return Case(cfg, lat, U, A, model)


def field_config(cfg: RunConfig) -> FieldConfig:
    v = cfg.vector_potential
    return FieldConfig(electric=v.electric, magnetic=v.magnetic, uniform=v.uniform)


def executor_for(threads: int | None):
    return ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None


def band_table(case: Case, executor=None) -> BandTable:
    g = case.cfg.grid
    basis = basis_with_count(case.lattice, g.n_pw)
    grid = bz_grid(case.lattice, g.n_q)
    return solve_grid(grid, basis, case.potential, case.vector_potential, g.n_bands, layout=g.layout, executor=executor)


# --- commands -------------------------------------------------------------------------------


def run_bands(cfg: RunConfig, out: Path, executor=None) -> dict:
    case = build_case(cfg)
    table = band_table(case, executor)
    h = cfg.content_hash()
    E = table.state_energies()  # (ns, Nq)
    V = table.velocities()
    d = case.dim
    rows = []
    for i, q in enumerate(table.grid.points):
        for s in range(E.shape[0]):
            rows.append([i, *[float(x) for x in q], s, float(E[s, i])])
    io.write_tsv(out / "bands.tsv", ["q_index", *[f"q{a}" for a in range(d)], "state", "energy"], rows, h)
    vrows = []
    for j in range(table.n_groups):
        for i in range(table.grid.size):
            vrows.append([j, i, *[float(x) for x in V[j, i]]])
    io.write_tsv(out / "velocities.tsv", ["group", "q_index", *[f"v{a}" for a in range(d)]], vrows, h)
    ortho = []
    for i, sol in enumerate(table.solutions):
        if sol.n_states >= 2:
            chk = bloch_orthogonality_check(sol)
            ortho.append({"q_index": i, "orthonormality": chk["orthonormality"], "completeness": chk["completeness"]})
    report = {
        "layout": list(table.layout),
        "n_q": table.grid.size,
        "n_pw": table.basis.size,
        "max_orthonormality_residual": max((o["orthonormality"] for o in ortho), default=0.0),
        "per_q": ortho,
        "units": cfg.units.system,
    }
    io.write_json(out / "orthogonality.json", report, h)
    return report


def run_kernel(cfg: RunConfig, out: Path, executor=None) -> dict:
    case = build_case(cfg)
    if case.model is None:
        raise ValueError("kernel command needs disorder.enabled = true")
    table = band_table(case, executor)
    k = cfg.kernel
    kern = assemble_kernel(table, case.model, k.eta, k.xi, k.convention, shift=k.shift)
    h = cfg.content_hash()
    d = case.dim
    rows = []
    E = table.energies()
    for j, g in enumerate(kern.gamma):
        for i, q in enumerate(table.grid.points):
            ev = np.linalg.eigvalsh(g[i])
            rows.append([j, i, *[float(x) for x in q], float(E[j, i]), *[float(x) for x in ev]])
    r0 = max(table.layout)
    header = ["group", "q_index", *[f"q{a}" for a in range(d)], "energy", *[f"gamma{a}" for a in range(r0)]]
    rows = [r + [float("nan")] * (len(header) - len(r)) for r in rows]
    io.write_tsv(out / "gamma.tsv", header, rows, h)
    summ = kern.summary()
    if kern.is_scalar:
        W = kern.scalar_matrix
        gam = np.concatenate([g[:, 0, 0].real for g in kern.gamma])
        summ["loss_gain_mismatch"] = float(np.max(np.abs(np.asarray(W.sum(axis=0)).ravel() - gam)) / max(gam.max(), 1e-300))
    io.write_json(out / "kernel_summary.json", summ, h)
    return summ


def initial_field(cfg: RunConfig, table: BandTable, n_x: int | None):
    ev = cfg.evolution
    E = table.energies()
    pts = table.grid.points

    def shell(j, x, q):
        if j != ev.initial_band:
            return np.zeros(np.broadcast_shapes(x.shape, q.shape[:-1]))
        e = E[j][None, :] if q.ndim == 3 else E[j]
        prof = np.exp(-((e - ev.initial_center) ** 2) / (2 * ev.initial_width**2))
        r = np.linalg.norm(pts, axis=-1)
        aniso = 1 + 0.9 * np.where(r > 0, pts[:, 0] / np.where(r > 0, r, 1), 0.0)
        val = prof * aniso
        if n_x is not None:
            L = cfg.grid.box_length
            val = val * np.exp(-((x - 0.5 * L) ** 2) / (2 * (0.1 * L) ** 2))
        return val

    def band(j, x, q):
        val = np.full(q.shape[:-1], 1.0 if j == ev.initial_band else 0.0)
        return val * (np.exp(-((x - 0.5 * cfg.grid.box_length) ** 2) / (2 * (0.1 * cfg.grid.box_length) ** 2)) if n_x else 1.0)

    def uniform(j, x, q):
        return np.ones(np.broadcast_shapes(x.shape, q.shape[:-1]))

    fn = {"shell": shell, "band": band, "uniform": uniform}[ev.initial]
    return make_field(table.grid, table.layout, fn, n_x=n_x, box_length=cfg.grid.box_length)


def run_evolve(cfg: RunConfig, out: Path, executor=None) -> dict:
    case = build_case(cfg)
    g, k, ev = cfg.grid, cfg.kernel, cfg.evolution
    basis = basis_with_count(case.lattice, g.n_pw)
    grid = bz_grid(case.lattice, g.n_q)
    n_x = g.n_x if g.n_x > 1 else None
    x = None if n_x is None else np.arange(n_x) * g.box_length / n_x
    system = RTESystem(
        grid, basis, case.potential, g.n_bands, field_config(cfg),
        case.model if k.enabled else None, g.layout, k.eta, k.xi, k.convention, k.shift,
        ev.lorentz, x=x, executor=executor,
    )
    c0 = system.node_coefficients(0.0, 1)[0]
    u0 = initial_field(cfg, c0.table, n_x)
    traj = evolve(
        u0, system, ev.t_final, ev.dt, ev.method, snapshot_every=ev.snapshot_every,
        stencil=ev.stencil, collisions=k.enabled, lorentz=ev.lorentz,
    )
    h = cfg.content_hash()
    d = case.dim
    G = len(u0.layout)
    header = ["t", "N", *[f"pop{j}" for j in range(G)], *[f"current{a}" for a in range(d)]]
    rows = [[o["t"], o["N"], *o["populations"], *o["current"]] for o in traj.observables]
    io.write_tsv(out / "observables.tsv", header, rows, h)
    if n_x is not None:
        drows = []
        for o in traj.observables:
            for ix, val in enumerate(o["density"]):
                drows.append([o["t"], float(x[ix]), float(val)])
        io.write_tsv(out / "density.tsv", ["t", "x", "density"], drows, h)
    layout_doc = {
        "file": "fields.bin",
        "encoding": io.FIELD_LAYOUT,
        "layout": list(u0.layout),
        "n_x": u0.n_x,
        "n_q": grid.size,
        "snapshot_times": [s.t for s in traj.snapshots],
    }
    if ev.write_fields:
        with open(out / "fields.bin", "wb") as fh:
            for s in traj.snapshots:
                fh.write(io.field_bytes(s.blocks))
    first, last = traj.observables[0], traj.observables[-1]
    report = {
        "steps": traj.steps,
        "rebuilds": traj.rebuilds,
        "initial": {"N": first["N"], "populations": first["populations"], "current": first["current"]},
        "final": {"N": last["N"], "populations": last["populations"], "current": last["current"]},
        "relative_N_drift": abs(last["N"] - first["N"]) / first["N"] if first["N"] else 0.0,
        "max_hermiticity_residual": max(traj.hermiticity, default=0.0),
        "max_psd_violation": max(traj.psd_violation, default=0.0),
        "max_abs_lorentz_trace": max((abs(v) for v in traj.lorentz_trace), default=0.0),
        "fields": layout_doc if ev.write_fields else None,
        "units": cfg.units.system,
    }
    io.write_json(out / "evolve_report.json", report, h)
    return report


def oracle_setup(cfg: RunConfig):
    from .oracle import GoldenRuleSetup

    o = cfg.oracle
    case = build_case(cfg)
    if case.dim != 1:
        raise ValueError("the oracle is one-dimensional; set lattice.dim = 1")
    if case.model is None:
        raise ValueError("the oracle needs disorder.enabled = true")
    if np.any(cfg.vector_potential.uniform) or np.any(cfg.vector_potential.electric) or np.any(cfg.vector_potential.magnetic):
        log.warning("oracle ignores the vector potential")
    return GoldenRuleSetup(
        lattice_constant=float(cfg.lattice.basis[0][0]),
        n_cells=o.n_cells,
        points_per_cell=o.points_per_cell,
        band=o.band,
        q_index=o.q_index,
        model=case.model,
        potential=case.potential,
        # the split-step grid must resolve the basis
        basis_count=min(cfg.grid.n_pw, o.points_per_cell - 1),
        dt=o.dt,
        t_max=o.t_max,
        record_every=o.record_every,
        seeds=tuple(cfg.seed * 100003 + s for s in range(o.seeds)),
    )


def run_oracle(cfg: RunConfig, out: Path, executor=None) -> dict:
    from .oracle import golden_rule_report

    setup = oracle_setup(cfg)
    runs = [golden_rule_report(setup, s2, executor) for s2 in cfg.oracle.strengths]
    report = {"runs": runs, "window": list(setup.window), "n_cells": setup.n_cells, "q_index": setup.q_index}
    if len(runs) >= 2:
        report["born_ratio"] = runs[1]["mean_rate"] / runs[0]["mean_rate"]
        report["strength_ratio"] = runs[1]["strength"] / runs[0]["strength"]
    io.write_json(out / "oracle_report.json", report, cfg.content_hash())
    return report
