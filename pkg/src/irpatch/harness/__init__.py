"""Experiment protocols, metrics, run configuration and the CLI."""
