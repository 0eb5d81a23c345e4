"""Norms, energy budget, identity checks and attractor diagnostics."""
