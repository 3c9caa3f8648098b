"""Numerical laboratory for spin distributions of spherical spin glasses."""
