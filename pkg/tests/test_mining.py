import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imnet.errors import ShapeError
from imnet.gradcheck import grad_check
from imnet.mining import init_mine, lccd, lccd_project, mine, rgm, select_planes
from imnet.tensor import Tensor, precision


def naive_lccd(fx, fy):
    """Per-cell, per-channel loop; the inner product accumulates left to right."""
    B, H, W, C = fx.shape
    out = np.zeros((B, H, W, C + 1), dtype=fx.dtype)
    for b in range(B):
        for i in range(H):
            for j in range(W):
                acc = fx.dtype.type(0)
                for k in range(C):
                    p = fx[b, i, j, k] * fy[b, i, j, k]
                    out[b, i, j, k] = p
                    acc = p if k == 0 else acc + p
                out[b, i, j, C] = acc
    return out


def mp_rgm(x):
    x = mpmath.mpf(float(x))
    return float(x * (1 - 1 / (1 + mpmath.exp(-x))))


def params_for(C, rng, planes="channel"):
    params = {}
    with precision(np.float64):
        init_mine(params, rng, C, "m", planes)
    return params


class TestLccd:
    def test_all_ones(self):
        out = lccd(Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones((1, 2, 2, 2)))).data
        np.testing.assert_array_equal(out, np.broadcast_to([1.0, 1.0, 2.0], (1, 2, 2, 3)))

    def test_zero_input(self, rng):
        out = lccd(Tensor(np.zeros((1, 3, 3, 4))), Tensor(rng.standard_normal((1, 3, 3, 4)))).data
        assert not out.any()

    def test_matches_loop_oracle_exactly(self, rng):
        fx, fy = rng.standard_normal((2, 1, 3, 3, 4))
        np.testing.assert_array_equal(lccd(Tensor(fx), Tensor(fy)).data, naive_lccd(fx, fy))

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2, 2, 3\).*\(1, 2, 2, 4\)"):
            lccd(Tensor(np.ones((1, 2, 2, 3))), Tensor(np.ones((1, 2, 2, 4))))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 8), st.floats(-10, 10), st.integers(0, 2**31))
    def test_bilinear_and_symmetric(self, hw, C, alpha, seed):
        r = np.random.default_rng(seed)
        fx, fy = r.standard_normal((2, 1, hw, hw, C))
        base = lccd(Tensor(fx), Tensor(fy)).data
        np.testing.assert_array_equal(lccd(Tensor(fy), Tensor(fx)).data, base)
        scaled = lccd(Tensor(alpha * fx), Tensor(fy)).data
        np.testing.assert_allclose(scaled, alpha * base, rtol=1e-12, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**31))
    def test_dot_plane_is_sum_of_product_planes(self, hw, C, seed):
        r = np.random.default_rng(seed)
        fx, fy = r.standard_normal((2, 1, hw, hw, C))
        out = lccd(Tensor(fx), Tensor(fy)).data
        acc = out[..., 0].copy()
        for k in range(1, C):
            acc += out[..., k]
        np.testing.assert_array_equal(out[..., C], acc)


class TestProjection:
    def test_identity_drops_dot_plane(self, rng):
        C = 3
        w = np.zeros((1, 1, C + 1, C))
        w[0, 0, :C, :C] = np.eye(C)
        params = {"m.proj.w": Tensor(w), "m.proj.b": Tensor(np.zeros(C))}
        fx, fy = rng.standard_normal((2, 1, 3, 3, C))
        raw = lccd(Tensor(fx), Tensor(fy))
        np.testing.assert_array_equal(lccd_project(raw, params, "m").data, fx * fy)

    def test_zero_weights(self, rng):
        params = {"m.proj.w": Tensor(np.zeros((1, 1, 5, 4))), "m.proj.b": Tensor(np.zeros(4))}
        raw = Tensor(rng.standard_normal((1, 3, 3, 5)))
        assert not lccd_project(raw, params, "m").data.any()

    def test_grad_check(self, rng):
        params = params_for(4, rng)
        inputs = {"raw": rng.standard_normal((1, 3, 3, 5)), **{k: v.data for k, v in params.items()}}
        rep = grad_check(lambda t: lccd_project(t["raw"], t, "m"), inputs, 1e-5)
        assert rep.passed, rep.line()

    def test_spatial_keeps_only_dot_plane(self, rng):
        raw = Tensor(rng.standard_normal((1, 2, 2, 5)))
        np.testing.assert_array_equal(select_planes(raw, "spatial").data, raw.data[..., 4:])
        assert select_planes(raw, "channel") is raw


class TestRgm:
    def test_zero_exact(self):
        assert rgm(Tensor(np.zeros((1, 1, 1, 1)))).data.item() == 0.0

    def test_one(self):
        with precision(np.float64):
            out = rgm(Tensor(np.ones((1, 1, 1, 1)))).data.item()
        assert out == pytest.approx(0.2689414213699951, abs=1e-12)

    def test_saturation(self):
        with precision(np.float64):
            assert abs(rgm(Tensor(np.full((1, 1, 1, 1), 20.0))).data.item()) < 1e-7

    def test_matches_high_precision(self, rng):
        x = rng.uniform(-50, 50, 2000)
        with precision(np.float64):
            out = rgm(Tensor(x.reshape(1, 1, -1, 1))).data.ravel()
        ref = np.array([mp_rgm(v) for v in x])
        np.testing.assert_allclose(out, ref, atol=1e-7, rtol=0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-60, 60, allow_nan=False))
    def test_tail_behaviour(self, x):
        with precision(np.float64):
            out = rgm(Tensor(np.full((1, 1, 1, 1), x))).data.item()
        if x >= 10:
            assert abs(out) < abs(x) * 5e-5
        if x <= -10:
            assert 0.9999 < out / x <= 1
        # below about -37 the gate underflows against 1 in float64
        if x != 0 and abs(x) <= 30:
            assert out != x


class TestMine:
    def test_zero_input(self, rng):
        params = params_for(4, rng)
        with precision(np.float64):
            out = mine(Tensor(np.zeros((1, 3, 3, 4))), Tensor(rng.standard_normal((1, 3, 3, 4))), params, "m")
        assert not out.data.any()

    @pytest.mark.parametrize("planes", ["channel", "spatial"])
    def test_composite_equals_chain(self, rng, planes):
        params = params_for(4, rng, planes)
        fa, fb = (Tensor(a) for a in rng.standard_normal((2, 1, 3, 3, 4)))
        with precision(np.float64):
            chained = rgm(lccd_project(select_planes(lccd(fa, fb), planes), params, "m"))
            np.testing.assert_array_equal(mine(fa, fb, params, "m", planes).data, chained.data)

    def test_grad_check(self, rng):
        params = params_for(3, rng)
        inputs = {"fa": rng.standard_normal((1, 3, 3, 3)), "fb": rng.standard_normal((1, 3, 3, 3)),
                  **{k: v.data for k, v in params.items()}}
        rep = grad_check(lambda t: mine(t["fa"], t["fb"], t, "m"), inputs, 1e-4)
        assert rep.passed, rep.line()
