"""Density-patch simulator package."""
