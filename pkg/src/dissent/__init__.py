"""Diversity-regularised MLP ensembles that detect adversarial inputs by rank-vote disagreement."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
