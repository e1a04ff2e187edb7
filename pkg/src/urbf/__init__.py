"""Univariate radial basis function layers, a small autodiff engine, and
the regression and maze experiments built on them."""

from .autodiff import Tensor, backward
from .layers import LayerSpec, Network, NetworkSpec, UrbfLayer, MrbfLayer
from .optim import Adam

__all__ = ["Tensor", "backward", "LayerSpec", "Network", "NetworkSpec", "UrbfLayer", "MrbfLayer", "Adam"]
__version__ = "0.1.0"
