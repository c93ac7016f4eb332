"""Named parameter storage and initialisers."""

from __future__ import annotations

from typing import Dict

import numpy as np

from .tensor import Tensor, conv2d, default_dtype

Params = Dict[str, Tensor]


def he_conv(params: Params, rng: np.random.Generator, name: str, k: int, cin: int, cout: int,
            gain: float = 1.0, row_scale: np.ndarray | None = None) -> None:
    """He fan-in normal weights and zero bias under ``name.w`` / ``name.b``.

    ``row_scale`` rescales individual input channels of the kernel.
    """
    std = gain * np.sqrt(2.0 / (k * k * cin))
    w = rng.standard_normal((k, k, cin, cout)) * std
    if row_scale is not None:
        w *= np.asarray(row_scale).reshape(1, 1, cin, 1)
    params[f"{name}.w"] = Tensor(w.astype(default_dtype()), requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=default_dtype()), requires_grad=True, name=f"{name}.b")


def apply_conv(params: Params, name: str, x: Tensor, padding: int = 0) -> Tensor:
    return conv2d(x, params[f"{name}.w"], padding=padding, bias=params[f"{name}.b"])


def count(params: Params) -> int:
    return sum(p.data.size for p in params.values())


def cast(params: Params, dtype) -> Params:
    return {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k) for k, v in params.items()}
