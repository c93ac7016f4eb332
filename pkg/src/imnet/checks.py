"""Gradient-check suite covering every learnable stage of the detector."""

from __future__ import annotations

import numpy as np

from . import head, mining, prototypes, selfcorr
from .backbone import extract_features
from .config import RunConfig
from .errors import ConfigError
from .gradcheck import MAX_PARAMS, GradCheckReport, grad_check
from .model import forward, init_params
from .params import count
from .tensor import Tensor, precision

# check points tried per operation before reporting a coordinate stuck on a kink
MAX_DRAWS = 5
BIAS_JITTER = 0.1


def _merge(params: dict, tensors: dict) -> dict:
    merged = dict(params)
    merged.update({k: v for k, v in tensors.items() if k in params})
    return merged


def run_suite(config: RunConfig, tolerance: float = 1e-4, seed: int | None = None) -> list[GradCheckReport]:
    """One report per learnable operation plus the end-to-end composite.

    Each check is evaluated at a random point: weights as initialised,
    biases jittered so no ReLU sits exactly on its hinge, and random inputs.
    Coordinates near a kink get a smaller step inside ``grad_check``; if one
    sits exactly on a kink (e.g. a tie) the point is redrawn, up to
    MAX_DRAWS times.  The pass threshold itself is never relaxed.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    with precision(np.float64):
        init = {k: v.data for k, v in init_params(config, seed).items()}
    total = count({k: Tensor(v) for k, v in init.items()})
    if total > MAX_PARAMS:
        raise ConfigError(f"gradcheck needs a tiny config: {total} parameters > {MAX_PARAMS}")

    S = config.backbone.input_size
    H = config.backbone.feature_size
    C = config.backbone.out_channels
    K = config.percentiles
    planes = config.lccd_planes
    reports = []

    def check(name, fn, make_inputs):
        for draw in range(MAX_DRAWS):
            rng = np.random.default_rng([seed, 99, len(reports), draw])
            params = {k: (v + rng.uniform(-BIAS_JITTER, BIAS_JITTER, v.shape) if k.endswith(".b") else v)
                      for k, v in init.items()}
            inputs = make_inputs(rng, params)
            last = draw == MAX_DRAWS - 1
            rep = grad_check(lambda t: fn(t, _merge(params, t)), inputs, tolerance, name=name, seed=seed,
                             stop_on_kink=not last)
            if not rep.kinks or last:
                break
        if draw:
            rep.message = (rep.message + "; " if rep.message else "") + f"check point draw {draw}"
        reports.append(rep)

    def own(params, *prefixes):
        return {k: v for k, v in params.items() if k.startswith(prefixes)}

    def fmap(rng, lo=0.1, hi=1.0):
        return rng.uniform(lo, hi, (1, H, H, C))

    check("backbone", lambda t, p: extract_features(t["image"], config.backbone, p),
          lambda rng, p: {"image": rng.uniform(0, 1, (1, S, S, 3)), **own(p, "backbone.")})
    # cosine is scale-free; a unit-scale input keeps the fixed-step truncation small
    check("selfcorr.self_correlation", lambda t, p: selfcorr.self_correlation(t["features"]),
          lambda rng, p: {"features": fmap(rng, 0.5, 2.0)})
    check("selfcorr.percentile_pool",
          lambda t, p: selfcorr.percentile_pool(selfcorr.self_correlation(t["features"]), K, H, H),
          lambda rng, p: {"features": rng.standard_normal((1, H, H, C)) * 2})
    check("selfcorr.projection", lambda t, p: selfcorr.to_coarse_feature(t["pooled"], p),
          lambda rng, p: {"pooled": rng.uniform(-1, 1, (1, H, H, K)), **own(p, "selfcorr.")})

    if config.prototype.enabled:
        pre = "proto.mine_s"
        n_raw = C + 1 if planes == "channel" else 1
        check("mining.lccd_project", lambda t, p: mining.lccd_project(t["raw"], p, pre),
              lambda rng, p: {"raw": rng.uniform(-1, 1, (1, H, H, n_raw)), **own(p, pre + ".")})
        check("mining.mine", lambda t, p: mining.mine(t["fa"], t["fb"], p, pre, planes),
              lambda rng, p: {"fa": fmap(rng), "fb": fmap(rng), **own(p, pre + ".")})
        check("prototypes.init",
              lambda t, p: prototypes.concat_channels(*(q.map for q in prototypes.init_prototypes(t["coarse"], p))),
              lambda rng, p: {"coarse": fmap(rng), **own(p, "proto.init_")})

        def rounds(t, p):
            srp, trp = prototypes.iterate(t["coarse"], p, config.prototype.rounds, planes)
            return prototypes.fuse_pair(srp, trp, p)

        check("prototypes.update", rounds, lambda rng, p: {"coarse": fmap(rng), **own(p, "proto.")})
        check("prototypes.fuse_pair",
              lambda t, p: prototypes.fuse_pair(prototypes.Prototype(prototypes.Kind.SOURCE, t["srp"]),
                                                prototypes.Prototype(prototypes.Kind.TAMPERED, t["trp"]), p),
              lambda rng, p: {"srp": fmap(rng), "trp": fmap(rng), **own(p, "proto.fuse.")})
    if config.refine in ("add", "adaptive"):
        check("head.doubtful_regions", lambda t, p: head.doubtful_regions(t["coarse"], t["fused"], p, planes),
              lambda rng, p: {"coarse": fmap(rng), "fused": fmap(rng), **own(p, "head.doubt.")})
    if config.refine == "adaptive":
        check("head.adaptive_fuse", lambda t, p: head.adaptive_fuse(t["coarse"], t["doubtful"], p),
              lambda rng, p: {"coarse": fmap(rng), "doubtful": rng.uniform(-1, 1, (1, H, H, C)),
                              **own(p, "head.gate.")})
    check("head.decode_mask", lambda t, p: head.decode_mask(t["refined"], p, config.backbone.blocks).probabilities,
          lambda rng, p: {"refined": fmap(rng), **own(p, "decoder.")})

    truth = np.random.default_rng([seed, 98]).integers(0, 3, (1, S, S))
    # probabilities away from 0 so the curvature of log p stays small
    check("head.loss", lambda t, p: head.loss(head.DetectionMask(t["probs"]), truth, config.loss_weights),
          lambda rng, p: {"probs": rng.dirichlet(np.full(3, 20.0), size=(1, S, S))})

    def end_to_end(rng, p):
        inputs = dict(p)
        if total + S * S * 3 <= MAX_PARAMS:
            inputs["image"] = rng.uniform(0, 1, (1, S, S, 3))
        return inputs

    image_fallback = np.random.default_rng([seed, 97]).uniform(0, 1, (1, S, S, 3))
    check("end-to-end",
          lambda t, p: head.loss(forward(t.get("image", Tensor(image_fallback)), config, p), truth,
                                 config.loss_weights),
          end_to_end)
    return reports
