"""Score matching versus maximum likelihood: a numerical laboratory."""

__version__ = "0.1.0"
