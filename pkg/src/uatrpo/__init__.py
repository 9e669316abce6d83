"""Trust-region policy optimization with uncertainty-aware updates."""

__version__ = "0.1.0"
