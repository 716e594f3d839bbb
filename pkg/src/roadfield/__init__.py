"""Road-field reaction-diffusion with a moving niche.

Discretization, principal eigenvalues on exhausting domains, semilinear
dynamics and parameter studies (critical speeds, diffusion thresholds).
"""
from .model import (ConfigurationError, NicheProfile, OutOfDomainError, Parameters,
                    ReactionTerm, validate_hypotheses)
from .discretization import COUPLED, NEUMANN, ROBIN, assemble, build_grid
from .eigensolver import exhaust_lambda, principal_eigenpair

__version__ = "0.1.0"

__all__ = [
    "COUPLED", "NEUMANN", "ROBIN", "ConfigurationError", "NicheProfile", "OutOfDomainError",
    "Parameters", "ReactionTerm", "assemble", "build_grid", "exhaust_lambda",
    "principal_eigenpair", "validate_hypotheses", "__version__",
]
