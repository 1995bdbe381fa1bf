"""Uniform time grids and the L1 discretization of the Caputo derivative.

The order-α Caputo derivative of f with f(0)=0 is approximated on a uniform
grid t_n = n·dt by

    D_t^α f(t_n) ≈ dt^{-α}/Γ(2-α) · Σ_{k=0}^{n-1} b_k (f^{n-k} - f^{n-k-1}),
    b_k = (k+1)^{1-α} - k^{1-α},

which is exact for linear f and O(dt^{2-α}) accurate for smooth f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma


@dataclass(frozen=True)
class TemporalGrid:
    """Uniform grid on [0, T] with nt steps and fractional order alpha."""

    T: float
    nt: int
    alpha: float

    def __post_init__(self):
        if self.nt < 1:
            raise ValueError(f"nt must be >= 1, got {self.nt}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.T <= 0.0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    def trapezoid_weights(self) -> np.ndarray:
        """Composite trapezoid weights over the nt+1 grid points."""
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = self.dt / 2.0
        return w


@dataclass(frozen=True)
class CaputoWeights:
    """L1 convolution weights b_k and the leading factor dt^{-α}/Γ(2-α)."""

    b: np.ndarray
    factor: float
    alpha: float
    dt: float

    @property
    def history_coeffs(self) -> np.ndarray:
        """Coefficients c_k = factor·(b_k - b_{k-1}) of u^{n-k}, k = 1..nt-1."""
        return self.factor * np.diff(self.b)

    @property
    def initial_coeffs(self) -> np.ndarray:
        """Coefficient of -u^0 in the step-n update: factor·b_{n-1}."""
        return self.factor * self.b


def caputo_weights(grid: TemporalGrid) -> CaputoWeights:
    """L1 weights for the grid; b_0 = 1, strictly decreasing, positive."""
    k = np.arange(grid.nt, dtype=float)
    b = (k + 1.0) ** (1.0 - grid.alpha) - k ** (1.0 - grid.alpha)
    factor = grid.dt ** (-grid.alpha) / gamma(2.0 - grid.alpha)
    return CaputoWeights(b=b, factor=factor, alpha=grid.alpha, dt=grid.dt)


def caputo_apply(samples: np.ndarray, grid: TemporalGrid) -> np.ndarray:
    """Apply the discrete order-α Caputo derivative to a sampled series.

    Parameters
    ----------
    samples : ndarray, shape (nt+1,) or (nt+1, m)
        Values on the grid points; samples[0] must vanish.
    grid : TemporalGrid

    Returns
    -------
    ndarray of the same shape; entry n approximates D_t^α f(t_n) (exactly 0
    at n = 0).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != grid.nt + 1:
        raise ValueError(f"expected {grid.nt + 1} samples, got {samples.shape[0]}")
    if not np.all(samples[0] == 0.0):
        raise ValueError("caputo_apply requires samples[0] = 0")

    w = caputo_weights(grid)
    diffs = np.diff(samples, axis=0)  # Δf^m = f^m - f^{m-1}, m = 1..nt
    out = np.zeros_like(samples)
    if samples.ndim == 1:
        conv = np.convolve(w.b, diffs)[: grid.nt]
    else:
        conv = np.zeros_like(diffs)
        for j in range(diffs.shape[1]):
            conv[:, j] = np.convolve(w.b, diffs[:, j])[: grid.nt]
    out[1:] = w.factor * conv
    return out
