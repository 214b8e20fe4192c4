"""Minimal reverse-mode network engine with residualization layers."""

from .layers import RMDN, Context, Conv2d, Flatten, Linear, MaxPool2d, ReLU, SoftmaxCrossEntropy
from .model import LayerSpec, ModelSpec, Network, Placement, build_synth_cnn
from .optim import Adam, adam_step, step_decay
from .tensor import Tensor

__all__ = [
    "Adam",
    "Context",
    "Conv2d",
    "Flatten",
    "LayerSpec",
    "Linear",
    "MaxPool2d",
    "ModelSpec",
    "Network",
    "Placement",
    "RMDN",
    "ReLU",
    "SoftmaxCrossEntropy",
    "Tensor",
    "adam_step",
    "build_synth_cnn",
    "step_decay",
]
