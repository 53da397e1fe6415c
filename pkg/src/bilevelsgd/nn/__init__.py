from .layers import Conv2d, Dense, Dropout, DropoutSpec, Flatten, MaxPool2x2, Relu
from .network import (
    Network,
    ParamVector,
    Segment,
    batch_gradient,
    batch_loss,
    build_network,
    forward,
    segment_dot,
    softmax_cross_entropy,
)

__all__ = [
    "Conv2d",
    "Dense",
    "Dropout",
    "DropoutSpec",
    "Flatten",
    "MaxPool2x2",
    "Relu",
    "Network",
    "ParamVector",
    "Segment",
    "batch_gradient",
    "batch_loss",
    "build_network",
    "forward",
    "segment_dot",
    "softmax_cross_entropy",
]
