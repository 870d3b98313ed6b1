"""Experiment harness: datasets, evaluation, experiments, verification and the CLI."""
