"""Low-rank context conditioning for multi-environment neural PDE solvers."""

__version__ = "0.1.0"
