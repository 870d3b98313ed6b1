"""Localization networks: specs, layer graph, builders, training and model files."""
