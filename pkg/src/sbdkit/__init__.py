"""Spatial birth-death models with establishment and fecundity regulation."""

__version__ = "0.1.0"

from .kernels import Exponential, Gaussian, KernelSpec, PowerLaw, TopHat, zero_kernel
from .model import Dispersal, Mechanism, ModelParams, ParameterError

__all__ = [
    "__version__", "KernelSpec", "TopHat", "Gaussian", "Exponential", "PowerLaw", "zero_kernel",
    "ModelParams", "Mechanism", "Dispersal", "ParameterError",
]
