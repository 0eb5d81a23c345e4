"""Moist primitive equations on the sphere with attractor diagnostics."""

__version__ = "0.1.0"
__description__ = (
    "Spectral solver for the viscous moist primitive equations and attractor diagnostics"
)
