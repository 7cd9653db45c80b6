"""Correlation models of the random potential and 1D realizations.

Conventions: R(x) = <V(y) V(y + x)> and R~(k) = int dx exp(-i k.x) R(x), so
R(x) = (2 pi)^{-d} int dk exp(i k.x) R~(k) and R(0) = sigma^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

MODELS = ("gaussian", "exponential", "white-cutoff")


class DisorderError(ValueError):
    pass


def _ball_volume(d: int, radius: float) -> float:
    return np.pi ** (d / 2) * radius**d / special.gamma(d / 2 + 1)


@dataclass(frozen=True)
class CorrelationModel:
    """Stationary, isotropic disorder statistics.

    ``strength`` is sigma^2, ``length`` the correlation length and ``cutoff``
    the wavenumber bound of the white model.
    """

    kind: str
    strength: float
    length: float = 1.0
    cutoff: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.kind not in MODELS:
            raise DisorderError(f"unknown correlation model {self.kind!r}; choose from {MODELS}")
        if self.strength < 0:
            raise DisorderError("strength sigma^2 must be non-negative")
        if self.length <= 0 or self.cutoff <= 0:
            raise DisorderError("correlation length and cutoff must be positive")
        if self.dim not in (1, 2, 3):
            raise DisorderError("dimension must be 1, 2 or 3")

    def spectrum(self, k) -> np.ndarray:
        return evaluate_spectrum(self, k)

    def correlation(self, x) -> np.ndarray:
        """Closed-form R at separation vectors (rows) or scalar distances."""
        r = _radius(x, self.dim)
        s2, ell, d = self.strength, self.length, self.dim
        if self.kind == "gaussian":
            return s2 * np.exp(-(r**2) / (2 * ell**2))
        if self.kind == "exponential":
            return s2 * np.exp(-r / ell)
        kr = self.cutoff * r
        with np.errstate(invalid="ignore", divide="ignore"):
            if d == 1:
                val = np.sinc(kr / np.pi)
            elif d == 2:
                val = np.where(kr == 0, 1.0, 2 * special.j1(kr) / kr)
            else:
                val = np.where(kr == 0, 1.0, 3 * (np.sin(kr) - kr * np.cos(kr)) / kr**3)
        return s2 * val


def _radius(k, dim: int) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return np.abs(k)
    if dim == 1 and (k.ndim == 1):
        return np.abs(k)
    return np.linalg.norm(k, axis=-1)


def evaluate_spectrum(model: CorrelationModel, k) -> np.ndarray:
    """Power spectrum R~(k) for wavevectors k (rows in d > 1, or scalars in 1D)."""
    r = _radius(k, model.dim)
    s2, ell, d = model.strength, model.length, model.dim
    if model.kind == "gaussian":
        return s2 * (2 * np.pi * ell**2) ** (d / 2) * np.exp(-(r**2) * ell**2 / 2)
    if model.kind == "exponential":
        c = 2**d * np.pi ** ((d - 1) / 2) * special.gamma((d + 1) / 2)
        return s2 * c * ell**d / (1 + (r * ell) ** 2) ** ((d + 1) / 2)
    height = s2 * (2 * np.pi) ** d / _ball_volume(d, model.cutoff)
    return np.where(r <= model.cutoff, height, 0.0)


def sample_realization(model: CorrelationModel, n_points: int, length: float, seed: int) -> np.ndarray:
    """Periodic 1D Gaussian field with spectrum R~ by spectral synthesis.

    White noise is filtered by sqrt(R~(k)/dx) in Fourier space, so the
    covariance is the periodized R sampled on the grid. The generator is a
    counter-based Philox stream keyed by ``seed``.
    """
    if model.dim != 1:
        raise DisorderError("realizations are only provided in 1D")
    if length < 8 * model.length:
        raise DisorderError(
            f"domain length {length} shorter than 8 correlation lengths ({8 * model.length})"
        )
    if n_points < 2:
        raise DisorderError("need at least two grid points")
    dx = length / n_points
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    noise = rng.standard_normal(n_points)
    k = 2 * np.pi * np.fft.fftfreq(n_points, d=dx)
    filt = np.sqrt(evaluate_spectrum(model, k) / dx)
    return np.fft.ifft(np.fft.fft(noise) * filt).real
