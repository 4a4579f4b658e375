"""Simulation laboratory for a heat equation with non-Lipschitz noise coefficient |u|^p.

Modules: noise (seeded white noise), holder_lemma (power-integral lower
bound), heat_spde (finite difference SPDE), coupling (excursion coupling on
shared noise), sde1d (sticky diffusion, scale function, survival), stats and
cli.
"""
__version__ = "0.1.0"

from .errors import ConfigurationError, ContractError, DomainError, ParameterError, StickySPDEError
from .noise import SeedSpec

__all__ = ["SeedSpec", "StickySPDEError", "ParameterError", "ConfigurationError", "ContractError",
           "DomainError", "__version__"]
