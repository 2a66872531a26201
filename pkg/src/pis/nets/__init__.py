"""Set-conditioned velocity networks built on the tape engine."""

from .blocks import ParamStore, sinusoidal_positions_2d
from .model import BaselineConditioner, SetConditionedUNet, build_model

__all__ = ["ParamStore", "sinusoidal_positions_2d", "SetConditionedUNet",
           "BaselineConditioner", "build_model"]
