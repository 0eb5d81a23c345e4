"""Test package for the moistpe solver."""
