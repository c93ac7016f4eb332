"""Full detector: backbone -> coarse similarity -> prototypes -> refinement
-> decoder, wired according to the configured ablation mode."""

from __future__ import annotations

import numpy as np

from .backbone import extract_features, init_backbone
from .config import RunConfig
from .head import (DetectionMask, adaptive_fuse, decode_mask, doubtful_regions, init_decoder,
                   init_doubtful, init_gate)
from .params import Params
from .prototypes import fuse_pair, init_prototype_params, iterate
from .selfcorr import coarse_similarity, init_coarse
from .tensor import Tensor, add, default_dtype


def init_params(config: RunConfig, seed: int | None = None) -> Params:
    """Deterministic parameter set; creation order fixes the checkpoint order."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    C = config.backbone.out_channels
    params: Params = {}
    init_backbone(params, rng, config.backbone)
    init_coarse(params, rng, config.percentiles, C)
    if config.prototype.enabled:
        init_prototype_params(params, rng, C, config.lccd_planes)
    if config.refine in ("add", "adaptive"):
        init_doubtful(params, rng, C, config.lccd_planes)
    if config.refine == "adaptive":
        init_gate(params, rng, C)
    init_decoder(params, rng, C, config.decoder)
    return params


def forward(image: Tensor, config: RunConfig, params: Params, trace: dict | None = None) -> DetectionMask:
    """Run the detector on a B x S x S x 3 batch in [0, 1].

    If ``trace`` is a dict it receives the intermediate tensors.
    """
    feats = extract_features(image, config.backbone, params)
    coarse = coarse_similarity(feats, config.percentiles, params)
    refined = coarse
    if config.prototype.enabled:
        srp, trp = iterate(coarse, params, config.prototype.rounds, config.lccd_planes)
        fused = fuse_pair(srp, trp, params)
        if config.refine == "prototype":
            refined = add(coarse, fused)
        else:
            doubtful = doubtful_regions(coarse, fused, params, config.lccd_planes)
            if config.refine == "adaptive":
                refined = adaptive_fuse(coarse, doubtful, params)
            else:
                refined = add(coarse, doubtful)
            if trace is not None:
                trace["doubtful"] = doubtful
        if trace is not None:
            trace.update(srp=srp, trp=trp, fused=fused)
    if trace is not None:
        trace.update(features=feats, coarse=coarse, refined=refined)
    return decode_mask(refined, params, config.backbone.blocks)


def to_input(images: np.ndarray) -> Tensor:
    """uint8 B x S x S x 3 (or a single S x S x 3) -> float tensor in [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr.astype(default_dtype()) / 255)


def predict(images: np.ndarray, config: RunConfig, params: Params) -> np.ndarray:
    return forward(to_input(images), config, params).classes
