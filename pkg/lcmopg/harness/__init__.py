"""Experiment harness: spec files, presets, seeded runs and the CLI."""
