"""Experiment configs, metrics, sweeps and the command-line entry point."""
