"""Source and tampered region prototypes and their alternating updates."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .mining import init_mine, mine
from .params import Params, apply_conv, he_conv
from .tensor import Tensor, add, concat_channels, relu


# residual updates start close to the identity
UPDATE_GAIN = 0.1


class Kind(str, Enum):
    SOURCE = "source"
    TAMPERED = "tampered"


@dataclass(frozen=True)
class Prototype:
    kind: Kind
    map: Tensor
    round: int = 0


def init_prototype_params(params: Params, rng: np.random.Generator, C: int, planes: str = "channel",
                          prefix: str = "proto") -> None:
    he_conv(params, rng, f"{prefix}.init_s", 1, C, C)
    he_conv(params, rng, f"{prefix}.init_t", 1, C, C)
    init_mine(params, rng, C, f"{prefix}.mine_s", planes)
    he_conv(params, rng, f"{prefix}.update_s", 1, C, C, gain=UPDATE_GAIN)
    init_mine(params, rng, C, f"{prefix}.mine_t", planes)
    he_conv(params, rng, f"{prefix}.update_t", 1, C, C, gain=UPDATE_GAIN)
    he_conv(params, rng, f"{prefix}.fuse", 1, 2 * C, C)


def init_prototypes(coarse: Tensor, params: Params, prefix: str = "proto") -> tuple[Prototype, Prototype]:
    """SRP(0) and TRP(0) from independent 1x1 projections of the coarse map."""
    srp = relu(apply_conv(params, f"{prefix}.init_s", coarse))
    trp = relu(apply_conv(params, f"{prefix}.init_t", coarse))
    return Prototype(Kind.SOURCE, srp, 0), Prototype(Kind.TAMPERED, trp, 0)


def update_round(srp: Prototype, trp: Prototype, coarse: Tensor, params: Params,
                 planes: str = "channel", prefix: str = "proto") -> tuple[Prototype, Prototype]:
    """One alternating round: the SRP is refreshed from mine(TRP, coarse),
    then the TRP from mine(new SRP, coarse).  Both update as residuals."""
    if srp.round != trp.round:
        raise ValidationError(f"prototype rounds differ: source={srp.round} tampered={trp.round}")
    delta_s = apply_conv(params, f"{prefix}.update_s", mine(trp.map, coarse, params, f"{prefix}.mine_s", planes))
    new_s = add(srp.map, delta_s)
    delta_t = apply_conv(params, f"{prefix}.update_t", mine(new_s, coarse, params, f"{prefix}.mine_t", planes))
    new_t = add(trp.map, delta_t)
    return Prototype(Kind.SOURCE, new_s, srp.round + 1), Prototype(Kind.TAMPERED, new_t, trp.round + 1)


def iterate(coarse: Tensor, params: Params, rounds: int, planes: str = "channel",
            prefix: str = "proto") -> tuple[Prototype, Prototype]:
    srp, trp = init_prototypes(coarse, params, prefix)
    for _ in range(rounds):
        srp, trp = update_round(srp, trp, coarse, params, planes, prefix)
    return srp, trp


def fuse_pair(srp: Prototype, trp: Prototype, params: Params, prefix: str = "proto") -> Tensor:
    """ReLU(1x1 conv over the concatenated prototypes), 2C -> C."""
    if srp.round != trp.round:
        raise ValidationError(f"prototype rounds differ: source={srp.round} tampered={trp.round}")
    return relu(apply_conv(params, f"{prefix}.fuse", concat_channels(srp.map, trp.map)))
