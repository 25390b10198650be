"""Custom exceptions for the enclosure laboratory."""

from typing import Optional


class EnclabError(Exception):
    """Base exception for enclab errors."""
    pass


class ConfigurationError(EnclabError):
    """Configuration error, optionally pointing at a config file line."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(EnclabError, ValueError):
    """Input outside the domain of a geometric or spectral formula."""
    pass


class QuadratureError(EnclabError):
    """Adaptive quadrature did not reach its tolerance."""

    def __init__(self, message: str, achieved: float, nodes: int):
        self.achieved = achieved
        self.nodes = nodes
        super().__init__(f"{message} (achieved {achieved:.3e}, {nodes} nodes)")


class CFLError(EnclabError):
    """Time step violates the CFL bound."""
    pass


class PlacementError(EnclabError):
    """Inclusion or source does not fit in the computational box."""
    pass


class ConfigMismatchError(EnclabError):
    """Perturbed and background runs are not comparable."""
    pass


class InsufficientDataError(EnclabError):
    """Not enough uncensored indicator rows for a fit."""
    pass


class ArtifactError(EnclabError):
    """Malformed or mismatching artifact on disk."""
    pass
