"""Deep linear networks trained by gradient flow and gradient descent on
linearly separable data, with layer-alignment and max-margin diagnostics."""

from .kernels import BACKEND

__version__ = "0.1.0"
