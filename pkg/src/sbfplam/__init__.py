"""Partially linear additive models fitted by smooth backfitting."""

__version__ = "0.1.0"
