"""Minimal numpy autograd engine and the layers used by both networks."""

from .archive import load_weights, read_weights, save_weights
from .layers import LAYER_KINDS, LayerSpec, Network, build_layer
from .optim import AdamW
from .tensor import Tensor, concat, parameter

__all__ = [
    "AdamW",
    "LAYER_KINDS",
    "LayerSpec",
    "Network",
    "Tensor",
    "build_layer",
    "concat",
    "load_weights",
    "parameter",
    "read_weights",
    "save_weights",
]
