"""Numerical laboratory for disagreement-scaled temperature schedules in
maximum-entropy reinforcement learning."""

__version__ = "0.1.0"
