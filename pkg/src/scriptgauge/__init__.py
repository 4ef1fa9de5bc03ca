"""Script-based MPAA rating prediction."""

__version__ = "0.1.0"
