"""Magnetic Weyl calculus on discretized phase space."""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND"]
