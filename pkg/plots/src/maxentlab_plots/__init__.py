"""Figure rendering for maxentlab CSV artifacts.

Reads the documented CSV schemas and draws the paper-style figures; all
statistics are computed upstream and only read here.
"""

__version__ = "0.1.0"
