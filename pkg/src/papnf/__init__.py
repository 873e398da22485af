"""Probabilistic long-term forecasting with a prefix-prompted frozen
transformer and a conditional planar-flow decoder."""

from papnf.tensor import Tensor, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "grad_check", "__version__"]
