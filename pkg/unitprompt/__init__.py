"""Prompt tuning of a frozen unit-sequence encoder-decoder."""

__version__ = "0.1.0"
