"""Seeded speech corpus synthesis, oracle enhancement and scoring toolkit."""
__version__ = "0.1.0"
