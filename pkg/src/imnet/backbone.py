"""Convolutional feature extractor feeding the self-correlation stage."""

from __future__ import annotations

import numpy as np

from .config import BackboneConfig
from .errors import ShapeError
from .params import Params, apply_conv, he_conv
from .tensor import Tensor, max_pool2d, relu


def init_backbone(params: Params, rng: np.random.Generator, config: BackboneConfig, prefix: str = "backbone") -> None:
    cin = 3
    for b, cout in enumerate(config.channels):
        he_conv(params, rng, f"{prefix}.b{b}.c0", 3, cin, cout)
        he_conv(params, rng, f"{prefix}.b{b}.c1", 3, cout, cout)
        cin = cout


def extract_features(image: Tensor, config: BackboneConfig, params: Params, prefix: str = "backbone") -> Tensor:
    """B x S x S x 3 image in [0, 1] -> B x S/2^blocks x S/2^blocks x C features.

    Each block is two 3x3 conv + ReLU layers followed by a 2x2 max pool.
    """
    S = config.input_size
    if image.ndim != 4 or image.shape[1:] != (S, S, 3):
        raise ShapeError("extract_features", image.shape, (None, S, S, 3),
                         detail=f"backbone expects {S}x{S} RGB input")
    x = image
    for b in range(config.blocks):
        x = relu(apply_conv(params, f"{prefix}.b{b}.c0", x, padding=1))
        x = relu(apply_conv(params, f"{prefix}.b{b}.c1", x, padding=1))
        x = max_pool2d(x, 2)
    return x
