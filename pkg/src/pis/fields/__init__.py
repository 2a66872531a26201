"""Ground-truth field generators and forward PDE solvers."""

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """A linear or time-stepping solve failed to meet its tolerance."""


@dataclass
class Field:
    """Dense scalar parameter grid in physical units."""

    scenario: str
    values: np.ndarray  # (H, W) float64

    @property
    def shape(self):
        return self.values.shape


from .kle import KleBasis, kle_build, kle_sample                      # noqa: E402
from .latent import latent_bicubic_field                              # noqa: E402
from .darcy import darcy_solve, darcy_velocity, darcy_face_velocities  # noqa: E402
from .transport import transport_solve                                # noqa: E402
from .helmholtz import helmholtz_solve                                # noqa: E402
from .elasticity import elasticity_solve                              # noqa: E402
from .dataset import (                                                # noqa: E402
    Dataset, ScenarioSpec, SCENARIOS, generate_dataset, sample_prior_field,
)

__all__ = [
    "SolverError", "Field", "KleBasis", "kle_build", "kle_sample",
    "latent_bicubic_field", "darcy_solve", "darcy_velocity",
    "darcy_face_velocities", "transport_solve", "helmholtz_solve",
    "elasticity_solve", "Dataset", "ScenarioSpec", "SCENARIOS",
    "generate_dataset", "sample_prior_field",
]
