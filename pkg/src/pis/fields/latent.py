"""Two-phase fields from a coarse latent grid, upsampled by cubic splines."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RectBivariateSpline


def latent_bicubic_field(rng, h, w, v_low=10.0, v_high=50.0, latent=4):
    """Random binary latent-by-latent grid, cubic-spline upsampled to (h, w).

    Each latent cell is v_low or v_high with probability 1/2, giving smooth
    high-contrast inclusions after interpolation. Cubic overshoot can leave
    the [v_low, v_high] interval by a bounded margin.
    """
    coarse = np.where(rng.random((latent, latent)) < 0.5, v_high, v_low)
    return upsample_bicubic(coarse, h, w)


def upsample_bicubic(coarse, h, w):
    n = coarse.shape[0]
    m = coarse.shape[1]
    spline = RectBivariateSpline(np.linspace(0.0, 1.0, n), np.linspace(0.0, 1.0, m),
                                 coarse, kx=3, ky=3)
    return spline(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w))
