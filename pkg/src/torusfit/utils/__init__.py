"""Utility modules for torusfit runs: config, file formats and run metrics."""
