import dataclasses

import numpy as np
import pytest

from imnet.errors import ValidationError
from imnet.gradcheck import grad_check
from imnet.mining import mine
from imnet.params import apply_conv
from imnet.prototypes import Kind, Prototype, fuse_pair, init_prototype_params, init_prototypes, iterate, update_round
from imnet.tensor import Tensor, add, precision

C = 4


@pytest.fixture
def params(rng):
    p = {}
    with precision(np.float64):
        init_prototype_params(p, rng, C)
    return p


@pytest.fixture
def coarse(rng):
    return Tensor(rng.uniform(0, 1, (2, 4, 4, C)))


def zeroed(params, *names):
    out = dict(params)
    for n in names:
        out[n] = Tensor(np.zeros_like(params[n].data))
    return out


class TestInit:
    def test_zero_coarse_gives_zero_prototypes(self, params):
        srp, trp = init_prototypes(Tensor(np.zeros((1, 4, 4, C))), params)
        assert not srp.map.data.any() and not trp.map.data.any()
        assert (srp.kind, trp.kind, srp.round, trp.round) == (Kind.SOURCE, Kind.TAMPERED, 0, 0)

    def test_independent_projections(self, params, coarse):
        srp, trp = init_prototypes(coarse, params)
        assert srp.map.shape == trp.map.shape == coarse.shape
        assert not np.array_equal(srp.map.data, trp.map.data)


class TestUpdate:
    def test_zero_update_weights_keep_maps(self, params, coarse):
        p = zeroed(params, "proto.update_s.w", "proto.update_t.w")
        srp, trp = init_prototypes(coarse, p)
        s1, t1 = update_round(srp, trp, coarse, p)
        np.testing.assert_array_equal(s1.map.data, srp.map.data)
        np.testing.assert_array_equal(t1.map.data, trp.map.data)
        assert s1.round == t1.round == 1

    def test_rounds_count(self, params, coarse):
        for n in range(4):
            srp, trp = iterate(coarse, params, n)
            assert srp.round == trp.round == n

    def test_one_round_matches_manual_chain(self, params, coarse):
        srp, trp = init_prototypes(coarse, params)
        s1, t1 = update_round(srp, trp, coarse, params)
        s_ref = add(srp.map, apply_conv(params, "proto.update_s", mine(trp.map, coarse, params, "proto.mine_s")))
        t_ref = add(trp.map, apply_conv(params, "proto.update_t", mine(s_ref, coarse, params, "proto.mine_t")))
        np.testing.assert_array_equal(s1.map.data, s_ref.data)
        np.testing.assert_array_equal(t1.map.data, t_ref.data)

    def test_tampered_update_sees_fresh_source(self, params, coarse):
        # the TRP update must use SRP(s+1), not SRP(s)
        srp, trp = init_prototypes(coarse, params)
        _, t1 = update_round(srp, trp, coarse, params)
        stale = add(trp.map, apply_conv(params, "proto.update_t", mine(srp.map, coarse, params, "proto.mine_t")))
        assert not np.array_equal(t1.map.data, stale.data)

    def test_round_mismatch(self, params, coarse):
        srp, trp = init_prototypes(coarse, params)
        with pytest.raises(ValidationError, match="rounds differ"):
            update_round(dataclasses.replace(srp, round=1), trp, coarse, params)

    def test_deterministic(self, coarse):
        maps = []
        for _ in range(2):
            p = {}
            with precision(np.float64):
                init_prototype_params(p, np.random.default_rng(42), C)
            srp, trp = iterate(coarse, p, 3)
            maps.append(srp.map.data.tobytes() + trp.map.data.tobytes())
        assert maps[0] == maps[1]

    def test_spatial_planes(self, rng, coarse):
        p = {}
        with precision(np.float64):
            init_prototype_params(p, rng, C, planes="spatial")
        assert p["proto.mine_s.proj.w"].shape == (1, 1, 1, C)
        srp, trp = iterate(coarse, p, 2, planes="spatial")
        assert srp.map.shape == coarse.shape


class TestFuse:
    def test_zero_prototypes(self, params):
        z = Tensor(np.zeros((1, 4, 4, C)))
        out = fuse_pair(Prototype(Kind.SOURCE, z), Prototype(Kind.TAMPERED, z), params)
        assert not out.data.any()

    def test_identity_weights_return_relu_source(self, rng):
        w = np.zeros((1, 1, 2 * C, C))
        w[0, 0, :C] = np.eye(C)
        p = {"proto.fuse.w": Tensor(w), "proto.fuse.b": Tensor(np.zeros(C))}
        s, t = rng.standard_normal((2, 1, 4, 4, C))
        with precision(np.float64):
            out = fuse_pair(Prototype(Kind.SOURCE, Tensor(s)), Prototype(Kind.TAMPERED, Tensor(t)), p)
        np.testing.assert_array_equal(out.data, np.maximum(s, 0))

    def test_grad_check(self, params, rng):
        inputs = {"s": rng.uniform(0.1, 1, (1, 3, 3, C)), "t": rng.uniform(0.1, 1, (1, 3, 3, C)),
                  "proto.fuse.w": params["proto.fuse.w"].data, "proto.fuse.b": rng.uniform(0.05, 0.1, C)}
        rep = grad_check(lambda d: fuse_pair(Prototype(Kind.SOURCE, d["s"]), Prototype(Kind.TAMPERED, d["t"]), d),
                         inputs, 1e-5)
        assert rep.passed, rep.line()

    def test_unequal_rounds(self, params, coarse):
        srp, trp = init_prototypes(coarse, params)
        with pytest.raises(ValidationError):
            fuse_pair(dataclasses.replace(srp, round=2), trp, params)


def test_update_loop_grad_check(rng):
    p = {}
    with precision(np.float64):
        init_prototype_params(p, rng, C)
    inputs = {"coarse": rng.uniform(0.1, 1, (1, 4, 4, C)),
              **{k: (v.data if k.endswith(".w") else rng.uniform(-0.1, 0.1, v.shape)) for k, v in p.items()}}

    def fn(t):
        srp, trp = iterate(t["coarse"], t, 2)
        return fuse_pair(srp, trp, t)

    rep = grad_check(fn, inputs, 1e-4)
    assert rep.passed, rep.line()
