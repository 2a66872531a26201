"""Sparse observation sets: sampling, normalization, rasterizing, IDW grids.

An ObservationSet is an unordered collection of (coordinate, value-vector)
elements with coordinates in the unit square. Element order carries no
meaning; to make every downstream consumer bit-exactly permutation
invariant, construction canonicalizes the storage order (lexicographic by
coordinate, then values), which fixes the floating-point accumulation
order once and for all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NormStats:
    """Per-channel location/scale mapping raw values into ~[-1, 1]."""

    loc: np.ndarray    # (V,)
    scale: np.ndarray  # (V,) strictly positive

    def __post_init__(self):
        self.loc = np.atleast_1d(np.asarray(self.loc, dtype=np.float64))
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if np.any(self.scale <= 0):
            raise ValueError("NormStats: scale must be positive")

    @classmethod
    def from_samples(cls, values, axis=None):
        """Min/max stats: loc = midrange, scale = half-range (floored)."""
        vmin = values.min(axis=axis)
        vmax = values.max(axis=axis)
        loc = 0.5 * (vmin + vmax)
        scale = np.maximum(0.5 * (vmax - vmin), 1e-12)
        return cls(loc=loc, scale=scale)

    def normalize(self, v):
        return (np.asarray(v, dtype=np.float64) - self.loc) / self.scale

    def denormalize(self, v):
        return np.asarray(v, dtype=np.float64) * self.scale + self.loc


class ObservationSet:
    """Canonically ordered set of (s in [0,1]^2, v in R^V) elements."""

    def __init__(self, coords, values):
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must be (K, 2), got {coords.shape}")
        if values.shape[0] != coords.shape[0]:
            raise ValueError(
                f"coords/values disagree: {coords.shape[0]} vs {values.shape[0]}")
        if coords.shape[0] == 0:
            raise ValueError("observation set must contain at least one element")
        if coords.min() < 0.0 or coords.max() > 1.0:
            raise ValueError("coordinates must lie in the unit square")
        order = np.lexsort(np.hstack([coords, values]).T[::-1])
        self.coords = np.ascontiguousarray(coords[order])
        self.values = np.ascontiguousarray(values[order])

    def __len__(self):
        return self.coords.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]

    def as_elements(self):
        """(K, 2+V) feature matrix: coordinates then values."""
        return np.hstack([self.coords, self.values])


def grid_coords(h, w):
    """Normalized coordinates of every pixel: index i -> i/(extent-1)."""
    ys = np.arange(h) / max(h - 1, 1)
    xs = np.arange(w) / max(w - 1, 1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)   # (H*W, 2) as (x, y)


def sample_observation_set(grids, k_obs, rng, noise_sigma=0.0, stats=None):
    """Draw k_obs unique pixel sites uniformly; values normalized then noised.

    grids is (V, H, W) raw observation data. Noise is i.i.d. Gaussian in
    normalized units.
    """
    grids = np.asarray(grids, dtype=np.float64)
    v, h, w = grids.shape
    n_sites = h * w
    if not 1 <= k_obs <= n_sites:
        raise ValueError(f"k_obs={k_obs} outside [1, {n_sites}]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    sites = rng.choice(n_sites, size=k_obs, replace=False)
    coords = grid_coords(h, w)[sites]
    flat = grids.reshape(v, n_sites)
    values = flat[:, sites].T                     # (K, V)
    if stats is not None:
        values = stats.normalize(values)
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return ObservationSet(coords, values)


def observation_set_from_grid_sites(grids, site_rows, site_cols, stats=None):
    """Observation set at explicit pixel sites (no noise)."""
    grids = np.asarray(grids, dtype=np.float64)
    v, h, w = grids.shape
    coords = np.stack([np.asarray(site_cols) / max(w - 1, 1),
                       np.asarray(site_rows) / max(h - 1, 1)], axis=1)
    values = grids[:, site_rows, site_cols].T
    if stats is not None:
        values = stats.normalize(values)
    return ObservationSet(coords, values)


def rasterize(obs, h, w):
    """(V+1, H, W): V value channels (zero off-support) plus binary mask.

    Each element maps to its nearest pixel round(s * (extent-1)); elements
    colliding on a pixel are averaged per channel.
    """
    v = obs.n_channels
    cols = np.rint(obs.coords[:, 0] * (w - 1)).astype(int)
    rows = np.rint(obs.coords[:, 1] * (h - 1)).astype(int)
    acc = np.zeros((v, h, w))
    count = np.zeros((h, w))
    # canonical element order makes the accumulation order reproducible
    np.add.at(count, (rows, cols), 1.0)
    for c in range(v):
        np.add.at(acc[c], (rows, cols), obs.values[:, c])
    mask = (count > 0).astype(np.float64)
    nz = count > 0
    acc[:, nz] /= count[nz]
    return np.concatenate([acc, mask[None]], axis=0)


def interpolate_dense(obs, h, w, power=2.0, eps=1e-12):
    """Inverse-distance-weighted dense grids (V, H, W), exact at sensor cells."""
    pts = grid_coords(h, w)                               # (HW, 2)
    d2 = ((pts[:, None, :] - obs.coords[None, :, :]) ** 2).sum(axis=2)
    weights = 1.0 / np.maximum(d2, eps) ** (power / 2.0)
    exact = d2 <= eps
    has_exact = exact.any(axis=1)
    wsum = weights.sum(axis=1, keepdims=True)
    dense = (weights @ obs.values) / wsum                 # (HW, V)
    if has_exact.any():
        first = np.argmax(exact[has_exact], axis=1)
        dense[has_exact] = obs.values[first]
    return dense.T.reshape(obs.n_channels, h, w)


def sensors_to_json(obs, stats=None):
    """Raw-unit sensors payload; inverse of load_sensors."""
    values = obs.values if stats is None else stats.denormalize(obs.values)
    return {"sensors": [
        {"x": float(x), "y": float(y), "values": [float(u) for u in val]}
        for (x, y), val in zip(obs.coords, values)]}


def load_sensors(payload, stats=None, n_channels=None):
    """Parse {"sensors": [{x, y, values}]} with raw values; applies stats."""
    try:
        sensors = payload["sensors"]
    except (TypeError, KeyError):
        raise ValueError('sensors payload must be {"sensors": [...]}')
    if not sensors:
        raise ValueError("sensors list must not be empty")
    coords = []
    values = []
    for i, s in enumerate(sensors):
        try:
            x, y = float(s["x"]), float(s["y"])
            vals = [float(u) for u in s["values"]]
        except (TypeError, KeyError, ValueError):
            raise ValueError(f"sensor {i}: expected x, y and values fields")
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"sensor {i}: coordinates ({x}, {y}) outside [0, 1]^2")
        if n_channels is not None and len(vals) != n_channels:
            raise ValueError(f"sensor {i}: expected {n_channels} values, got {len(vals)}")
        coords.append((x, y))
        values.append(vals)
    values = np.asarray(values, dtype=np.float64)
    if stats is not None:
        values = stats.normalize(values)
    return ObservationSet(np.asarray(coords), values)
