"""Inconsistency mining: local correspondence correlation (LCCD) between two
position-aligned feature maps, a learned channel projection, and the reverse
gate x * (1 - sigmoid(x))."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .params import Params, apply_conv, he_conv
from .tensor import Tensor, mul, one_minus, record_op, sigmoid, slice_channels

PLANES = ("channel", "spatial")


def _channel_sum(prod: np.ndarray) -> np.ndarray:
    # fixed left-to-right order so the result is reproducible cell by cell
    acc = prod[..., 0].copy()
    for k in range(1, prod.shape[-1]):
        acc += prod[..., k]
    return acc


def lccd(fx: Tensor, fy: Tensor) -> Tensor:
    """B x H x W x C pair -> B x H x W x (C + 1).

    Planes 0..C-1 hold fx[..., k] * fy[..., k]; plane C holds the inner
    product of the two channel vectors at each cell.
    """
    if fx.shape != fy.shape or fx.ndim != 4:
        raise ShapeError("lccd", fx.shape, fy.shape)
    x, y = fx.data, fy.data
    prod = x * y
    dot = _channel_sum(prod)
    out = np.concatenate([prod, dot[..., None]], axis=-1)

    def backward(g):
        gp, gd = g[..., :-1], g[..., -1:]
        return (gp * y + gd * y, gp * x + gd * x)

    return record_op("lccd", out, (fx, fy), backward)


def select_planes(raw: Tensor, planes: str) -> Tensor:
    """``spatial`` keeps only the whole-vector plane; ``channel`` keeps all."""
    if planes == "channel":
        return raw
    if planes == "spatial":
        C1 = raw.shape[-1]
        return slice_channels(raw, C1 - 1, C1)
    raise ValueError(f"planes must be one of {PLANES}, got {planes!r}")


def init_mine(params: Params, rng: np.random.Generator, C: int, prefix: str, planes: str = "channel") -> None:
    # the inner-product plane sums C products; start its weights 1/C smaller
    if planes == "channel":
        scale = np.ones(C + 1)
        scale[-1] = 1.0 / C
        he_conv(params, rng, f"{prefix}.proj", 1, C + 1, C, gain=np.sqrt(0.5), row_scale=scale)
    else:
        he_conv(params, rng, f"{prefix}.proj", 1, 1, C, gain=np.sqrt(0.5) / C)


def lccd_project(raw: Tensor, params: Params, prefix: str) -> Tensor:
    """Per-cell linear map from the LCCD planes back to C channels."""
    return apply_conv(params, f"{prefix}.proj", raw)


def rgm(fz: Tensor) -> Tensor:
    return mul(fz, one_minus(sigmoid(fz)))


def mine(fa: Tensor, fb: Tensor, params: Params, prefix: str, planes: str = "channel") -> Tensor:
    """Inconsistency representation rgm(lccd_project(lccd(fa, fb)))."""
    return rgm(lccd_project(select_planes(lccd(fa, fb), planes), params, prefix))
