"""Horizontal spectral transform and vertical finite differences."""
