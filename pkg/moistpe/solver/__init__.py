"""Right-hand sides and time stepping."""
