"""Numerical value types."""
