"""Gain and loss/shift superoperators of the disorder collision term.

With internal units hbar = 1, for band groups j, m on the BZ grid:

    gain_j(q)  = sum_m sum_k w_k sum_mu' R~(arg) delta_eta(E_j(q) - E_m(q_k))
                 T_jm(q, q_k - mu') u_m(q_k) T_jm(q, q_k - mu')^H
    loss_j(q)  = 1/2 {Gamma_j(q), u_j(q)} + i [S_j(q), u_j(q)]

    Gamma_j(q) = sum_m sum_k w_k sum_mu' R~ delta_eta(dE) T T^H
    S_j(q)     = (1/2pi) sum_m sum_k w_k sum_mu' R~ dE/(dE^2 + xi^2) T T^H

Gamma and the gain share the same normalized Gaussian delta_eta, so in the
scalar case the loss rate is exactly the integrated gain weight.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bloch import BandTable
from .coupling import CouplingTensor, Truncation, _shifted_coeffs, offset_window, t_prefactor
from .disorder import CorrelationModel, evaluate_spectrum

CONVENTIONS = ("transfer", "literal")
PRUNE_WIDTHS = 12.0


class KernelWarning(UserWarning):
    """Broadening too narrow for the grid (energy shells may be empty)."""


def gaussian_delta(x, width: float) -> np.ndarray:
    return np.exp(-0.5 * (np.asarray(x) / width) ** 2) / (np.sqrt(2 * np.pi) * width)


def pv_kernel(x, xi: float) -> np.ndarray:
    """Lorentzian-regularized principal value of 1/x."""
    x = np.asarray(x)
    return x / (x**2 + xi**2)


def spectrum_argument(convention: str, q_i: np.ndarray, q_k: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Wavevector fed to R~ for every (i, k) pair, shape (Nq, Nq, d).

    ``transfer``: q_i - q_k + mu', the momentum carried away by the
    scattering (k_j - k_m for plane waves). ``literal``: -q_k - mu', the argument taken at face value.
    """
    if convention == "transfer":
        return q_i[:, None, :] - q_k[None, :, :] + mu[None, None, :]
    if convention == "literal":
        return np.broadcast_to(-q_k[None, :, :] - mu[None, None, :], (q_i.shape[0],) + q_k.shape)
    raise ValueError(f"unknown spectrum convention {convention!r}; choose from {CONVENTIONS}")


def default_broadening(table: BandTable, factor: float = 4.0) -> float:
    """factor x median |E(q) - E(q_neighbour)| over all groups and grid axes."""
    E = table.energies()
    grid = table.grid
    diffs = []
    for i in range(grid.size):
        for nb in grid.neighbours(i):
            diffs.append(np.abs(E[:, i] - E[:, nb]))
    diffs = np.concatenate(diffs) if diffs else np.zeros(1)
    med = float(np.median(diffs))
    if med <= 0:
        raise ValueError("cannot derive a default broadening: adjacent grid energies coincide; set eta explicitly")
    return factor * med


@dataclass
class GainTerms:
    rows: np.ndarray
    cols: np.ndarray
    weight: np.ndarray
    blocks: np.ndarray  # (n_terms, r_j, r_m)


@dataclass
class ScatteringKernel:
    """Discretized collision operator on a fixed BZ grid and band layout."""

    layout: tuple[int, ...]
    n_q: int
    eta: float
    xi: float
    convention: str
    gamma: list[np.ndarray]
    shift: list[np.ndarray]
    terms: dict[tuple[int, int], GainTerms]
    shift_enabled: bool = True
    truncation: Truncation = field(default_factory=Truncation)
    scalar_matrix: sp.csr_matrix | None = None

    @property
    def n_groups(self) -> int:
        return len(self.layout)

    @property
    def is_scalar(self) -> bool:
        return all(r == 1 for r in self.layout)

    def gain_weight_matrix(self) -> np.ndarray:
        """Dense scalar gain weights W[(j,i),(m,k)] (requires all r = 1)."""
        if not self.is_scalar:
            raise ValueError("scalar weight matrix needs a 1x1 layout")
        return self.scalar_matrix.toarray()

    def summary(self) -> dict:
        gam = {}
        for j, g in enumerate(self.gamma):
            ev = np.linalg.eigvalsh(g) if g.shape[-1] > 1 else g[..., 0, 0].real[:, None]
            gam[str(j)] = {"min": float(ev.min()), "max": float(ev.max()), "mean": float(ev.mean())}
        shell = {}
        for (j, m), t in self.terms.items():
            counts = np.bincount(t.rows, minlength=self.n_q)
            shell[f"{j},{m}"] = {
                "entries": int(t.rows.size),
                "min_per_q": int(counts.min()) if counts.size else 0,
                "mean_per_q": float(counts.mean()) if counts.size else 0.0,
            }
        return {
            "eta": self.eta,
            "xi": self.xi,
            "convention": self.convention,
            "shift_enabled": self.shift_enabled,
            "layout": list(self.layout),
            "gamma": gam,
            "shells": shell,
            "truncation": self.truncation.as_dict(),
        }


def assemble_kernel(
    table: BandTable,
    model: CorrelationModel,
    eta: float | None = None,
    xi: float | None = None,
    convention: str = "transfer",
    *,
    coupling: CouplingTensor | None = None,
    window: np.ndarray | None = None,
    shift: bool = True,
) -> ScatteringKernel:
    """Build gain weights, Gamma_j and S_j from bands, T and the disorder spectrum."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown spectrum convention {convention!r}; choose from {CONVENTIONS}")
    grid = table.grid
    lat = grid.lattice
    eta = default_broadening(table) if eta is None else float(eta)
    xi = eta if xi is None else float(xi)
    if eta <= 0 or xi <= 0:
        raise ValueError("eta and xi must be positive")
    _warn_if_narrow(table, eta)

    if coupling is not None:
        offsets = coupling.offsets
    else:
        offsets = offset_window(table.basis) if window is None else np.asarray(window, dtype=int)
    E = table.energies()
    layout = table.layout
    o = table.offsets
    nq = grid.size
    wk = grid.weights
    C = table.coeff_array() if coupling is None else None
    pref = t_prefactor(lat.dim)
    trunc = Truncation() if coupling is None else coupling.truncation

    gamma = [np.zeros((nq, r, r), dtype=complex) for r in layout]
    shiftm = [np.zeros((nq, r, r), dtype=complex) for r in layout]
    pieces: dict[tuple[int, int], list] = {}
    ii, kk = np.meshgrid(np.arange(nq), np.arange(nq), indexing="ij")

    for w, off in enumerate(offsets):
        if coupling is not None:
            T = coupling.blocks[:, :, w]
        else:
            smap = table.basis.shift_map(-np.asarray(off))
            lost = smap < 0
            if np.any(lost):
                trunc.add(int(lost.sum()) * nq * nq, float(np.max(np.sum(np.abs(C[:, lost, :]) ** 2, axis=1))))
            T = pref * np.einsum("ipa,kpb->ikab", C.conj(), _shifted_coeffs(C, smap))
        mu = np.asarray(off) @ lat.dual
        arg = spectrum_argument(convention, grid.points, grid.points, mu)
        Rt = evaluate_spectrum(model, arg.reshape(-1, lat.dim)).reshape(nq, nq)
        base = Rt * wk[None, :]
        if not np.any(base):
            continue
        for j in range(len(layout)):
            sj = slice(o[j], o[j + 1])
            for m in range(len(layout)):
                sm = slice(o[m], o[m + 1])
                Tb = T[:, :, sj, sm]
                TT = np.einsum("ikab,ikcb->ikac", Tb, Tb.conj())
                dE = E[j][:, None] - E[m][None, :]
                dlt = base * gaussian_delta(dE, eta)
                gamma[j] += np.einsum("ik,ikac->iac", dlt, TT)
                if shift:
                    shiftm[j] += np.einsum("ik,ikac->iac", base * pv_kernel(dE, xi), TT) / (2 * np.pi)
                keep = (np.abs(dE) <= PRUNE_WIDTHS * eta) & (dlt > 0)
                keep &= np.any(np.abs(Tb) > 0, axis=(-1, -2))
                if np.any(keep):
                    pieces.setdefault((j, m), []).append((ii[keep], kk[keep], dlt[keep], Tb[keep]))

    terms = {}
    for key, plist in pieces.items():
        terms[key] = GainTerms(
            rows=np.concatenate([p[0] for p in plist]),
            cols=np.concatenate([p[1] for p in plist]),
            weight=np.concatenate([p[2] for p in plist]),
            blocks=np.concatenate([p[3] for p in plist]),
        )
    # the sums above are Hermitian up to rounding; make it exact
    gamma = [0.5 * (g + np.conj(np.swapaxes(g, -1, -2))) for g in gamma]
    shiftm = [0.5 * (s + np.conj(np.swapaxes(s, -1, -2))) for s in shiftm]
    kern = ScatteringKernel(layout, nq, eta, xi, convention, gamma, shiftm, terms, shift, trunc)
    if kern.is_scalar:
        kern.scalar_matrix = _scalar_matrix(kern)
    return kern


def _scalar_matrix(kern: ScatteringKernel) -> sp.csr_matrix:
    n = kern.n_q
    N = kern.n_groups * n
    rows, cols, vals = [], [], []
    for (j, m), t in kern.terms.items():
        rows.append(j * n + t.rows)
        cols.append(m * n + t.cols)
        vals.append(t.weight * np.abs(t.blocks[:, 0, 0]) ** 2)
    if not rows:
        return sp.csr_matrix((N, N))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()


def _warn_if_narrow(table: BandTable, eta: float) -> None:
    E = table.energies()
    grid = table.grid
    worst = 0.0
    for i in range(grid.size):
        for nb in grid.neighbours(i):
            worst = max(worst, float(np.max(np.abs(E[:, i] - E[:, nb]))))
    if eta < worst:
        warnings.warn(
            f"broadening eta={eta:.3e} is below the largest adjacent-grid energy step {worst:.3e}; "
            "some energy shells may be empty",
            KernelWarning,
            stacklevel=3,
        )


def apply_gain(kern: ScatteringKernel, u: list[np.ndarray]) -> list[np.ndarray]:
    """Gain term for a field slice; u[j] has shape (..., Nq, r_j, r_j)."""
    lead = u[0].shape[:-3]
    if kern.is_scalar and kern.scalar_matrix is not None:
        flat = np.concatenate([b[..., 0, 0] for b in u], axis=-1)  # (..., G*Nq)
        res = (kern.scalar_matrix @ flat.reshape(-1, flat.shape[-1]).T).T.reshape(flat.shape)
        n = kern.n_q
        return [res[..., j * n : (j + 1) * n, None, None] for j in range(kern.n_groups)]
    out = [np.zeros(lead + (kern.n_q, r, r), dtype=complex) for r in kern.layout]
    for (j, m), t in kern.terms.items():
        X = u[m][..., t.cols, :, :]
        Y = np.einsum("nab,...nbc,ndc->...nad", t.blocks, X, t.blocks.conj())
        Y = Y * t.weight[:, None, None]
        tgt = np.moveaxis(out[j], -3, 0)
        np.add.at(tgt, t.rows, np.moveaxis(Y, -3, 0))
    return out


def apply_loss(kern: ScatteringKernel, u: list[np.ndarray], shift: bool | None = None) -> list[np.ndarray]:
    """1/2 {Gamma_j, u_j} + i [S_j, u_j] for every group."""
    use_shift = kern.shift_enabled if shift is None else shift
    out = []
    for j, b in enumerate(u):
        G = kern.gamma[j]
        if b.shape[-1] == 1:
            res = G * b
        else:
            res = 0.5 * (G @ b + b @ G)
            if use_shift:
                S = kern.shift[j]
                res = res + 1j * (S @ b - b @ S)
        out.append(res)
    return out


def collision(kern: ScatteringKernel, u: list[np.ndarray]) -> list[np.ndarray]:
    """gain(u) - loss(u)."""
    g = apply_gain(kern, u)
    l = apply_loss(kern, u)
    return [a - b for a, b in zip(g, l)]
