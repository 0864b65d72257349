"""Interaction-detection toolkit: H2O taxonomy, dense-map decoding, AP evaluation."""
from .kernels import BACKEND

__version__ = "0.1.0"
