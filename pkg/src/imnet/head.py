"""Refinement head: doubtful-pixel mining, adaptive fusion with the coarse
map, the upsampling decoder and the weighted cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .mining import init_mine, mine
from .params import Params, apply_conv, he_conv
from .tensor import (Tensor, add, concat_channels, mul, note_branch, one_minus, record_op, relu, sigmoid,
                     softmax_channels, upsample_nearest)

LOG_FLOOR = -30.0
# initial gate bias: sigmoid(2) ~ 0.88, so training starts close to the coarse map
GATE_BIAS = 2.0
NUM_CLASSES = 3
# label -> gray level in mask images
GRAY_LEVELS = np.array([0, 128, 255], dtype=np.uint8)


@dataclass
class DetectionMask:
    probabilities: Tensor

    @property
    def classes(self) -> np.ndarray:
        # argmax picks the first maximum, i.e. ties go to the lower class index
        return self.probabilities.data.argmax(axis=-1).astype(np.uint8)


def init_doubtful(params: Params, rng: np.random.Generator, C: int, planes: str = "channel") -> None:
    init_mine(params, rng, C, "head.doubt", planes)


def init_gate(params: Params, rng: np.random.Generator, C: int) -> None:
    he_conv(params, rng, "head.gate", 1, 2 * C, C)
    params["head.gate.b"].data[:] = GATE_BIAS


def init_decoder(params: Params, rng: np.random.Generator, C: int, decoder: tuple) -> None:
    cin = C
    for i, cout in enumerate(decoder):
        he_conv(params, rng, f"decoder.u{i}", 3, cin, cout)
        cin = cout
    he_conv(params, rng, "decoder.logits", 1, cin, NUM_CLASSES)


def doubtful_regions(coarse: Tensor, fused: Tensor, params: Params, planes: str = "channel") -> Tensor:
    if coarse.shape != fused.shape:
        raise ShapeError("doubtful_regions", coarse.shape, fused.shape)
    return mine(coarse, fused, params, "head.doubt", planes)


def adaptive_fuse(coarse: Tensor, doubtful: Tensor, params: Params) -> Tensor:
    """Per-channel sigmoid gate g; returns g * coarse + (1 - g) * doubtful."""
    if coarse.shape != doubtful.shape:
        raise ShapeError("adaptive_fuse", coarse.shape, doubtful.shape)
    g = sigmoid(apply_conv(params, "head.gate", concat_channels(coarse, doubtful)))
    return add(mul(g, coarse), mul(one_minus(g), doubtful))


def decode_mask(refined: Tensor, params: Params, blocks: int) -> DetectionMask:
    x = refined
    for i in range(blocks):
        x = relu(apply_conv(params, f"decoder.u{i}", upsample_nearest(x, 2), padding=1))
    return DetectionMask(softmax_channels(apply_conv(params, "decoder.logits", x)))


def check_labels(truth: np.ndarray) -> np.ndarray:
    truth = np.asarray(truth)
    if truth.size and (truth.min() < 0 or truth.max() >= NUM_CLASSES
                       or not np.issubdtype(truth.dtype, np.integer)):
        raise ValidationError("labels must be integers in {0, 1, 2}")
    return truth.astype(np.int64)


def loss(mask: DetectionMask, truth: np.ndarray, class_weights=(0.5, 1.0, 1.0)) -> Tensor:
    """Pixel-mean weighted cross-entropy, -mean(w_y * log p_y), log floored at -30."""
    p = mask.probabilities
    y = check_labels(truth)
    if y.shape != p.shape[:-1]:
        raise ShapeError("loss", p.shape, y.shape)
    w = np.asarray(class_weights, dtype=p.dtype)
    if w.shape != (NUM_CLASSES,) or (w <= 0).any():
        raise ValidationError("class weights must be three positive numbers")
    py = np.take_along_axis(p.data, y[..., None], axis=-1)[..., 0]
    floor = np.exp(LOG_FLOOR)
    live = py > floor
    note_branch("loss", live)
    logp = np.where(live, np.log(np.where(live, py, 1.0)), LOG_FLOOR)
    wy = w[y]
    n = y.size
    value = np.asarray(-(wy * logp).sum() / n, dtype=p.dtype).reshape(())

    def backward(g):
        gp = np.zeros_like(p.data)
        gy = np.where(live, -g * wy / (n * np.where(live, py, 1.0)), 0).astype(p.dtype)
        np.put_along_axis(gp, y[..., None], gy[..., None], axis=-1)
        return (gp,)

    return record_op("loss", value, (p,), backward)


def labels_to_gray(labels: np.ndarray) -> np.ndarray:
    return GRAY_LEVELS[check_labels(labels)]


def gray_to_labels(gray: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray)
    out = np.full(gray.shape, 255, dtype=np.uint8)
    for label, level in enumerate(GRAY_LEVELS):
        out[gray == level] = label
    if (out == 255).any():
        bad = sorted(set(np.unique(gray[out == 255]).tolist()))[:5]
        raise ValidationError(f"mask gray levels must be 0/128/255, found {bad}")
    return out


def overlay(image: np.ndarray, labels: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Tint source pixels green and tampered pixels red over an RGB image."""
    out = image.astype(np.float64)
    tints = {1: np.array([0, 255, 0.0]), 2: np.array([255, 0, 0.0])}
    for label, color in tints.items():
        sel = labels == label
        out[sel] = (1 - alpha) * out[sel] + alpha * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
