"""Karhunen-Loeve expansion of an exponential-covariance Gaussian field.

The covariance between grid points l, l' is
``sigma2 * exp(-sqrt(((lx-lx')/lam_x)^2 + ((ly-ly')/lam_y)^2))`` with
coordinates and correlation lengths in domain-fraction units. Eigenpairs
come from a dense symmetric eigendecomposition of the covariance matrix
weighted by the uniform quadrature cell area, so the discrete
eigenfunctions are orthonormal under grid quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

MAX_DENSE_GRID = 4096  # H*W above this makes the dense eig impractical


@dataclass
class KleBasis:
    mean: float
    variance: float
    lam_x: float
    lam_y: float
    eigenvalues: np.ndarray   # (n_kl,) descending, >= 0
    eigenfunctions: np.ndarray  # (n_kl, H, W), orthonormal under quadrature
    n_kl: int
    energy_ratio: float
    shape: tuple


def _cell_centers(n):
    return (np.arange(n) + 0.5) / n


def kle_build(h, w, mean, variance, lam_x, lam_y, energy_target=0.97):
    if not (0.0 < energy_target <= 1.0):
        raise ValueError(f"energy_target must be in (0, 1], got {energy_target}")
    if lam_x <= 0 or lam_y <= 0:
        raise ValueError("correlation lengths must be positive")
    n = h * w
    if n > MAX_DENSE_GRID:
        raise ValueError(
            f"grid {h}x{w} has {n} points; dense eigendecomposition supports at most "
            f"{MAX_DENSE_GRID} (use a smaller grid)")
    ys, xs = np.meshgrid(_cell_centers(h), _cell_centers(w), indexing="ij")
    px = xs.ravel()
    py = ys.ravel()
    dist = np.sqrt(((px[:, None] - px[None, :]) / lam_x) ** 2
                   + ((py[:, None] - py[None, :]) / lam_y) ** 2)
    cov = variance * np.exp(-dist)
    # quadrature weight is the uniform cell area 1/n
    vals, vecs = eigh(cov / n)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    total = vals.sum()
    cum = np.cumsum(vals) / total
    n_kl = int(np.searchsorted(cum, energy_target) + 1)
    # quadrature-orthonormal eigenfunctions: (1/n) sum_i s_a(i) s_b(i) = delta_ab
    funcs = (vecs[:, :n_kl].T * np.sqrt(n)).reshape(n_kl, h, w)
    return KleBasis(
        mean=float(mean), variance=float(variance), lam_x=lam_x, lam_y=lam_y,
        eigenvalues=vals[:n_kl], eigenfunctions=funcs, n_kl=n_kl,
        energy_ratio=float(cum[n_kl - 1]), shape=(h, w))


def kle_sample(basis, xi):
    """Field realization mean + sum_i xi_i sqrt(tau_i) s_i."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (basis.n_kl,):
        raise ValueError(f"expected {basis.n_kl} coefficients, got shape {xi.shape}")
    coef = xi * np.sqrt(basis.eigenvalues)
    return basis.mean + np.tensordot(coef, basis.eigenfunctions, axes=1)
