"""Goal-oriented Bayesian optimal experimental design."""

__version__ = "0.1.0"
