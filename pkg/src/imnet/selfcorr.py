"""Coarse similarity features: all-pairs cosine self-correlation followed
by percentile pooling of each sorted correlation row."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .params import Params, apply_conv, he_conv
from .tensor import Tensor, note_branch, record_op, relu

EPS = 1e-8


def self_correlation(features: Tensor) -> Tensor:
    """Cosine similarity between every pair of the L = H*W feature cells.

    Returns a B x L x L tensor with the diagonal forced to -1.  Norms come
    from the diagonal of the same Gram matrix, so two bit-identical cells
    correlate to exactly 1.0.
    """
    if features.ndim != 4:
        raise ShapeError("self_correlation", features.shape, detail="expected B x H x W x C")
    B, H, W, C = features.shape
    L = H * W
    if L < 2:
        raise ShapeError("self_correlation", features.shape, detail="need at least 2 cells")
    X = features.data.reshape(B, L, C)
    G = X @ X.transpose(0, 2, 1)
    d = np.diagonal(G, axis1=1, axis2=2)
    P = d[:, :, None] * d[:, None, :]
    floor = EPS * EPS
    live = P > floor
    s = np.sqrt(np.where(live, P, floor))
    R = G / s
    inside = np.abs(R) <= 1
    note_branch("self_correlation", live & inside)
    out = np.clip(R, -1, 1)
    eye = np.eye(L, dtype=bool)
    out[:, eye] = -1

    def backward(g):
        gR = np.where(inside & ~eye, g, 0)
        gG = gR / s
        # dR/dP = -G / (2 s^3) = -R / (2 s^2)
        gP = np.where(live, -gR * R / (2 * s * s), 0)
        gd = (gP * d[:, None, :]).sum(axis=2) + (gP * d[:, :, None]).sum(axis=1)
        idx = np.arange(L)
        gG[:, idx, idx] += gd
        gX = (gG + gG.transpose(0, 2, 1)) @ X
        return (gX.reshape(features.shape),)

    return record_op("self_correlation", out, (features,), backward)


def percentile_indices(L: int, K: int) -> np.ndarray:
    """Rank positions sampled from a descending row of L - 1 off-diagonal values."""
    if K < 1 or K > L - 1:
        raise ValueError(f"percentile_pool: K={K} must be in 1..{L - 1}")
    if K == 1:
        return np.zeros(1, dtype=np.int64)
    k = np.arange(K)
    # round half up
    return np.floor(k * (L - 2) / (K - 1) + 0.5).astype(np.int64)


def percentile_pool(corr: Tensor, K: int, height: int, width: int) -> Tensor:
    """Sort each row (diagonal excluded) descending and keep K rank samples.

    Output is B x height x width x K; channel 0 is the best match.
    """
    B, L, L2 = corr.shape
    if L != L2 or L != height * width:
        raise ShapeError("percentile_pool", corr.shape, (height, width))
    if K > L - 1:
        raise ShapeError("percentile_pool", corr.shape, detail=f"K={K} exceeds L-1={L - 1}")
    ranks = percentile_indices(L, K)
    off = ~np.eye(L, dtype=bool)
    # column index of every off-diagonal entry, per row
    cols = np.broadcast_to(np.arange(L), (L, L))[off].reshape(L, L - 1)
    rows = corr.data[:, off].reshape(B, L, L - 1)
    order = np.argsort(-rows, axis=-1, kind="stable")
    picked = order[..., ranks]  # B x L x K, positions in the off-diagonal row
    src_cols = cols[np.arange(L)[None, :, None], picked]  # B x L x K, column in corr
    note_branch("percentile_pool", src_cols)
    out = np.take_along_axis(rows, picked, axis=-1)

    def backward(g):
        gc = np.zeros_like(corr.data)
        bi = np.arange(B)[:, None, None]
        ri = np.arange(L)[None, :, None]
        np.add.at(gc, (bi, ri, src_cols), g.reshape(B, L, K))
        return (gc,)

    return record_op("percentile_pool", out.reshape(B, height, width, K), (corr,), backward)


def init_coarse(params: Params, rng: np.random.Generator, K: int, C: int, prefix: str = "selfcorr.proj") -> None:
    he_conv(params, rng, prefix, 1, K, C)


def to_coarse_feature(pooled: Tensor, params: Params, prefix: str = "selfcorr.proj") -> Tensor:
    """1x1 conv K -> C plus ReLU so the coarse map matches backbone channels."""
    return relu(apply_conv(params, prefix, pooled))


def coarse_similarity(features: Tensor, K: int, params: Params, prefix: str = "selfcorr.proj") -> Tensor:
    B, H, W, C = features.shape
    return to_coarse_feature(percentile_pool(self_correlation(features), K, H, W), params, prefix)
