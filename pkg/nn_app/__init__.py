"""Minimal numpy layer engine: functional ops with adjoints, Adam, gradient checks."""
