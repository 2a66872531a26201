"""Paired (field, dense observation grids) dataset generation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field

import numpy as np

from ..sensing import NormStats
from . import SolverError
from .darcy import darcy_face_velocities, darcy_solve
from .elasticity import elasticity_solve
from .helmholtz import helmholtz_solve, point_source
from .kle import kle_build, kle_sample
from .latent import latent_bicubic_field
from .transport import SourceSpec, transport_solve

SUBSURFACE_DEFAULTS = {
    "mean_ln_k": 2.0,
    "var_ln_k": 0.5,
    "corr_frac": 0.2,          # correlation length / domain size
    "energy_target": 0.97,
    "domain": 192.0,           # meters
    "h_west": 11.0,
    "h_east": 10.0,
    "porosity": 0.3,
    "dt_macro": 50.0,          # days
    "n_snapshots": 20,
    "source_rate": 10.0,       # mass/day into one cell
    "source_steps": 10,        # leading macro steps with injection
    "source_frac": [0.25, 0.5],  # (x, y) fraction of domain
    "d_m": 1e-3,
}

HELMHOLTZ_DEFAULTS = {
    "k_min": 5.0,
    "k_max": 15.0,
    "latent": 4,
    "source_frac": [0.35, 0.35],
    "amplitude": 1.0,
    "floor": 0.5,      # bicubic overshoot guard: wavenumber stays positive
}

SHM_DEFAULTS = {
    "e_matrix": 10.0,
    "e_inclusion": 50.0,
    "latent": 4,
    "nu": 0.40,
    "top_uy": -0.01,
    "floor": 1.0,      # bicubic overshoot guard: stiffness stays positive
}


@dataclass
class ScenarioSpec:
    name: str
    channels: list
    params: dict


def _subsurface_channels(params):
    return ["head"] + [f"conc_t{i + 1}" for i in range(params["n_snapshots"])]


def scenario_spec(name, params=None):
    if name == "subsurface":
        p = {**SUBSURFACE_DEFAULTS, **(params or {})}
        return ScenarioSpec(name, _subsurface_channels(p), p)
    if name == "helmholtz":
        p = {**HELMHOLTZ_DEFAULTS, **(params or {})}
        return ScenarioSpec(name, ["u_re"], p)
    if name == "shm":
        p = {**SHM_DEFAULTS, **(params or {})}
        return ScenarioSpec(name, ["u_x", "u_y"], p)
    raise ValueError(f"unknown scenario '{name}' (expected subsurface, helmholtz or shm)")


SCENARIOS = ("subsurface", "helmholtz", "shm")


class ScenarioSampler:
    """Prepared field sampler + forward model for one scenario and grid."""

    def __init__(self, name, h, w, params=None):
        self.spec = scenario_spec(name, params)
        self.h = h
        self.w = w
        self._basis = None
        if name == "subsurface":
            p = self.spec.params
            self._basis = kle_build(h, w, p["mean_ln_k"], p["var_ln_k"],
                                    p["corr_frac"], p["corr_frac"],
                                    p["energy_target"])

    @property
    def name(self):
        return self.spec.name

    @property
    def channels(self):
        return self.spec.channels

    @property
    def kle_basis(self):
        return self._basis

    def sample_field(self, rng):
        p = self.spec.params
        if self.name == "subsurface":
            xi = rng.standard_normal(self._basis.n_kl)
            return kle_sample(self._basis, xi)
        if self.name == "helmholtz":
            f = latent_bicubic_field(rng, self.h, self.w, p["k_min"], p["k_max"],
                                     p["latent"])
        else:
            f = latent_bicubic_field(rng, self.h, self.w, p["e_matrix"],
                                     p["e_inclusion"], p["latent"])
        # deep cubic overshoots would break the solvers' positivity precondition
        return np.maximum(f, p["floor"])

    def forward(self, field_values):
        """Dense observation grids (V, H, W) for one parameter field."""
        p = self.spec.params
        if self.name == "subsurface":
            k = np.exp(field_values)
            l = p["domain"]
            head = darcy_solve(k, p["h_west"], p["h_east"], lx=l, ly=l)
            vx, vy = darcy_face_velocities(k, head, p["porosity"], p["h_west"],
                                           p["h_east"], lx=l, ly=l)
            src = SourceSpec(row=int(p["source_frac"][1] * self.h),
                             col=int(p["source_frac"][0] * self.w),
                             rate=p["source_rate"], active_steps=p["source_steps"])
            result = transport_solve(vx, vy, src, n_snapshots=p["n_snapshots"],
                                     dt_macro=p["dt_macro"], d_m=p["d_m"],
                                     porosity=p["porosity"], lx=l, ly=l)
            return np.stack([head] + result.snapshots, axis=0)
        if self.name == "helmholtz":
            rhs = point_source(self.h, self.w,
                               int(p["source_frac"][1] * (self.h - 1)),
                               int(p["source_frac"][0] * (self.w - 1)),
                               p["amplitude"])
            u = helmholtz_solve(field_values, rhs)
            return u[None]
        ux, uy = elasticity_solve(field_values, nu=p["nu"], top_uy=p["top_uy"])
        return np.stack([ux, uy], axis=0)


@dataclass
class Dataset:
    scenario: str
    fields: np.ndarray        # (N, H, W) float64, physical units
    obs: np.ndarray           # (N, V, H, W) float64, physical units
    channels: list
    field_stats: NormStats    # single-channel stats for the inversion target
    obs_stats: NormStats      # V-channel stats for the observation values
    meta: dict = dc_field(default_factory=dict)

    @property
    def n(self):
        return self.fields.shape[0]

    @property
    def grid(self):
        return self.fields.shape[1:]

    @property
    def n_channels(self):
        return self.obs.shape[1]

    def normalized_fields(self):
        return (self.fields - self.field_stats.loc[0]) / self.field_stats.scale[0]

    def split(self, val_fraction=0.1):
        """Deterministic tail split into (train, validation) index arrays."""
        n_val = max(1, int(round(self.n * val_fraction))) if self.n > 1 else 0
        idx = np.arange(self.n)
        return idx[:self.n - n_val], idx[self.n - n_val:]


def compute_stats(fields, obs):
    field_stats = NormStats.from_samples(fields.reshape(-1))
    v = obs.shape[1]
    flat = obs.transpose(1, 0, 2, 3).reshape(v, -1)
    obs_stats = NormStats.from_samples(flat, axis=1)
    return field_stats, obs_stats


def generate_dataset(scenario, n, grid=(32, 32), seed=0, params=None, max_retries=3):
    """n independent (field, observation-grids) pairs with stored NormStats.

    Per-sample RNG streams derive from (seed, index) so generation order or
    worker layout cannot change the result.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    h, w = grid
    sampler = ScenarioSampler(scenario, h, w, params)
    fields = np.empty((n, h, w))
    v = len(sampler.channels)
    obs = np.empty((n, v, h, w))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        last_err = None
        for _ in range(max_retries):
            f = sampler.sample_field(rng)
            try:
                obs[i] = sampler.forward(f)
                fields[i] = f
                last_err = None
                break
            except SolverError as exc:   # e.g. near-resonant Helmholtz sample
                last_err = exc
        if last_err is not None:
            raise SolverError(f"sample {i}: forward model failed after "
                              f"{max_retries} attempts: {last_err}")
    field_stats, obs_stats = compute_stats(fields, obs)
    meta = {"seed": int(seed), "params": copy.deepcopy(sampler.spec.params)}
    return Dataset(scenario=scenario, fields=fields, obs=obs,
                   channels=list(sampler.channels), field_stats=field_stats,
                   obs_stats=obs_stats, meta=meta)


def sample_prior_field(sampler, rng):
    """Draw from the data-generating prior (used for entropy baselines)."""
    return sampler.sample_field(rng)
