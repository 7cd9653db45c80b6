"""Direct/dual lattice geometry and Brillouin-zone grids.

The fundamental BZ cell is the half-open parallelepiped of wavevectors whose
dual-basis coordinates lie in [-1/2, 1/2). Every k in R^d splits uniquely as
k = q + mu with q in that cell and mu in the dual lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class LatticeError(ValueError):
    """Raised for singular or malformed lattice input."""


@dataclass(frozen=True)
class LatticeSpec:
    """Bravais lattice in d = 1, 2 or 3 dimensions.

    ``direct`` holds the basis vectors e_j as rows, ``dual`` the vectors e^k
    (also rows) with e_j . e^k = 2 pi delta_jk.
    """

    direct: np.ndarray
    dual: np.ndarray
    cell_volume: float
    bz_volume: float

    @property
    def dim(self) -> int:
        return self.direct.shape[0]

    def to_cartesian(self, coords: np.ndarray) -> np.ndarray:
        """Dual-lattice coordinates (rows) -> Cartesian wavevectors."""
        return np.asarray(coords, dtype=float) @ self.dual

    def to_fractional(self, k: np.ndarray) -> np.ndarray:
        """Cartesian wavevectors (rows) -> coordinates along the dual basis."""
        return np.asarray(k, dtype=float) @ self.direct.T / TWO_PI

    def as_dict(self) -> dict:
        return {"dimension": self.dim, "direct_basis": self.direct.tolist()}


def build_lattice(dim: int, direct_basis) -> LatticeSpec:
    """Construct a lattice from ``dim`` direct basis vectors of length ``dim``."""
    if dim not in (1, 2, 3):
        raise LatticeError(f"dimension must be 1, 2 or 3, got {dim}")
    direct = np.atleast_2d(np.asarray(direct_basis, dtype=float))
    if direct.shape != (dim, dim):
        raise LatticeError(
            f"expected {dim} basis vectors of length {dim}, got array of shape {direct.shape}"
        )
    if not np.all(np.isfinite(direct)):
        raise LatticeError("direct basis contains non-finite entries")
    det = float(np.linalg.det(direct))
    scale = float(np.prod(np.linalg.norm(direct, axis=1)))
    if scale == 0.0 or abs(det) <= 1e-12 * scale:
        cond = np.linalg.cond(direct) if scale > 0 else np.inf
        raise LatticeError(
            f"direct basis is singular (det={det:.3e}, condition number={cond:.3e})"
        )
    # rows of dual satisfy direct @ dual.T = 2 pi I
    dual = TWO_PI * np.linalg.inv(direct).T
    cell_volume = abs(det)
    bz_volume = TWO_PI**dim / cell_volume
    direct.setflags(write=False)
    dual.setflags(write=False)
    return LatticeSpec(direct=direct, dual=dual, cell_volume=cell_volume, bz_volume=bz_volume)


def fold_k(k, lat: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Split ``k`` into (q, mu), q in the fundamental cell and mu in L*.

    Works on a single vector or on rows of a 2D array. ``q`` is computed as
    ``k - mu`` so that ``q + mu`` reproduces ``k`` up to one rounding.
    """
    k = np.asarray(k, dtype=float)
    single = k.ndim == 1
    kk = np.atleast_2d(k).reshape(-1, lat.dim)
    frac = lat.to_fractional(kk)
    n = np.floor(frac + 0.5)
    mu = n @ lat.dual
    q = kk - mu
    # the rounding in frac can leave q a hair outside [-1/2, 1/2)
    fq = lat.to_fractional(q)
    bump = np.where(fq >= 0.5, 1.0, 0.0) - np.where(fq < -0.5, 1.0, 0.0)
    if np.any(bump):
        n = n + bump
        mu = n @ lat.dual
        q = kk - mu
    if single:
        return q[0], mu[0]
    return q, mu


def fold_index(k, lat: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`fold_k` but also returns the integer dual coordinates of mu."""
    q, mu = fold_k(k, lat)
    n = np.rint(lat.to_fractional(mu)).astype(int)
    return q, n


@dataclass(frozen=True)
class BZGrid:
    """Uniform Gamma-centred grid over the fundamental BZ cell.

    Point ``i`` has integer label ``labels[i]`` (0 <= label < n per axis) and
    fractional coordinates ``label / n`` folded into [-1/2, 1/2).
    """

    lattice: LatticeSpec
    n_per_axis: int
    labels: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    _lookup: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def spacing(self) -> float:
        """Smallest distance between neighbouring grid points."""
        return float(np.min(np.linalg.norm(self.lattice.dual, axis=1))) / self.n_per_axis

    def index_of(self, label) -> int:
        """Grid index of an integer label, taken modulo n on each axis."""
        key = tuple(int(v) % self.n_per_axis for v in np.atleast_1d(label))
        return self._lookup[key]

    def neighbours(self, i: int) -> list[int]:
        """Indices of the +1 neighbours along each dual axis (periodic)."""
        out = []
        for ax in range(self.lattice.dim):
            lab = self.labels[i].copy()
            lab[ax] += 1
            out.append(self.index_of(lab))
        return out

    def difference(self, i: int, k: int) -> tuple[int, np.ndarray]:
        """Return (index, mu) with q_i - q_k = q_index + mu exactly on the grid."""
        lab = self.labels[i] - self.labels[k]
        idx = self.index_of(lab)
        mu = self.points[i] - self.points[k] - self.points[idx]
        n = np.rint(self.lattice.to_fractional(mu)).astype(int)
        return idx, n


def bz_grid(lat: LatticeSpec, n_per_axis: int) -> BZGrid:
    """Monkhorst-Pack style unshifted grid with ``n_per_axis`` points per axis."""
    if n_per_axis < 1:
        raise LatticeError(f"n_per_axis must be >= 1, got {n_per_axis}")
    d = lat.dim
    axes = [np.arange(n_per_axis)] * d
    labels = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    frac = labels / n_per_axis
    frac = frac - np.floor(frac + 0.5)
    points = frac @ lat.dual
    weights = np.full(labels.shape[0], lat.bz_volume / labels.shape[0])
    lookup = {tuple(int(v) for v in lab): i for i, lab in enumerate(labels)}
    for arr in (labels, points, weights):
        arr.setflags(write=False)
    return BZGrid(lat, n_per_axis, labels, points, weights, lookup)
