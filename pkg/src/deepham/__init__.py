"""Operator learning of Hamiltonian densities for the periodic 1-D wave equation."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
