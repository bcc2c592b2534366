"""Experiment runner: configuration, datasets, sweeps, snapshots and theory checks."""
