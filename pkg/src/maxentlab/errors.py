"""Shared exception types."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but statistically degenerate (e.g. constant series)."""
