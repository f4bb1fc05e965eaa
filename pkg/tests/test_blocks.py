import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from himamba import blocks as B
from himamba.errors import ContractError, DimensionError
from himamba.network import _branch_params
from himamba.scan import Direction
from reference import ref_hmb, ref_ssm_branch

DIRS = list(Direction)


def random_weights(shapes, rng, scale=0.5):
    w = {k: rng.uniform(-scale, scale, s) for k, s in shapes.items()}
    for k in w:
        if k.endswith("delta.bias"):
            w[k] = rng.uniform(-2.0, 0.0, shapes[k])
        if k.endswith(("s_f",)):
            w[k] = rng.uniform(0.1, 0.9, shapes[k])
    return w


def branch_weights(c_in, c_out, rng, expand=2, state=3):
    return random_weights(B.ssm_branch_shapes(c_in, c_out, expand, state), rng)


def block_weights(c, cr, rng, carries=True, ffn=None):
    return random_weights(B.hmb_shapes(c, cr, 2, 3, ffn or c, carries), rng)


# ------------------------------------------------------------------ ssm_branch

def test_branch_zero_weights_zero_output():
    rng = np.random.default_rng(0)
    shapes = B.ssm_branch_shapes(3, 3, 2, 4)
    w = {k: np.zeros(s) for k, s in shapes.items()}
    w["delta.bias"] = np.ones(shapes["delta.bias"])  # keep delta > 0 regardless
    y = B.ssm_branch(rng.normal(size=(3, 5, 4)), w, Direction.H)
    assert np.array_equal(y, np.zeros((3, 5, 4)))


@pytest.mark.parametrize("direction", DIRS)
def test_branch_matches_reference_small(direction):
    rng = np.random.default_rng(1)
    w = branch_weights(2, 2, rng)
    x = rng.normal(size=(2, 3, 3))
    got = B.ssm_branch(x, w, direction)
    want = ref_ssm_branch(x, w, direction.value)
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_branch_channel_change():
    rng = np.random.default_rng(2)
    w = branch_weights(2, 5, rng)
    x = rng.normal(size=(2, 4, 3))
    got = B.ssm_branch(x, w, Direction.RV)
    assert got.shape == (5, 4, 3)
    assert np.allclose(got, ref_ssm_branch(x, w, "RV"), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.sampled_from(DIRS), st.integers(0, 2**31 - 1))
def test_branch_preserves_shape(c, h, w, direction, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c, h, w))
    assert B.ssm_branch(x, branch_weights(c, c, rng), direction).shape == x.shape


def test_branch_batched_equals_single():
    rng = np.random.default_rng(3)
    w = branch_weights(3, 3, rng)
    x = rng.normal(size=(2, 3, 4, 4))
    y = B.ssm_branch(x, w, Direction.V)
    for i in range(2):
        assert np.allclose(y[i], B.ssm_branch(x[i], w, Direction.V), rtol=0, atol=1e-14)


# ------------------------------------------------------------------ region projection

def test_region_identity_at_n1():
    x = np.random.default_rng(4).normal(size=(3, 5, 5))
    assert np.array_equal(B.region_project(x, 1, np.eye(3).reshape(3, 3, 1, 1)), x)


def test_region_shape_and_means():
    x = np.random.default_rng(5).normal(size=(1, 8, 8))
    y = B.region_project(x, 4, np.full((1, 1, 4, 4), 1 / 16))
    assert y.shape == (1, 2, 2)
    want = x[0].reshape(2, 4, 2, 4).mean(axis=(1, 3))
    assert np.allclose(y[0], want, rtol=0, atol=1e-15)


def test_region_indivisible():
    with pytest.raises(ContractError):
        B.region_project(np.zeros((1, 6, 8)), 4, np.zeros((1, 1, 4, 4)))


# ------------------------------------------------------------------ fusion

def test_fuse_endpoints_and_mean():
    rng = np.random.default_rng(6)
    xl = rng.normal(size=(3, 4, 6))
    xr = rng.normal(size=(3, 2, 3))
    rep = np.repeat(np.repeat(xr, 2, axis=1), 2, axis=2)
    assert np.array_equal(B.fuse(xl, xr, np.ones(3), 2), xl)
    assert np.array_equal(B.fuse(xl, xr, np.zeros(3), 2), rep)
    assert np.allclose(B.fuse(xl, xr, np.full(3, 0.5), 2), (xl + rep) / 2, rtol=0, atol=1e-15)


def test_fuse_clamps_scale():
    rng = np.random.default_rng(7)
    xl, xr = rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 1, 1))
    assert np.array_equal(B.fuse(xl, xr, np.array([3.0, 1.5]), 2), xl)
    assert np.array_equal(B.fuse(xl, xr, np.array([-1.0, -0.2]), 2), np.broadcast_to(xr, xl.shape))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_fuse_is_convex(c, hr, wr, n, seed):
    rng = np.random.default_rng(seed)
    xl = rng.normal(size=(c, hr * n, wr * n))
    xr = rng.normal(size=(c, hr, wr))
    s = rng.uniform(0.0, 1.0, c)
    f = B.fuse(xl, xr, s, n)
    rep = np.repeat(np.repeat(xr, n, axis=1), n, axis=2)
    lo, hi = np.minimum(xl, rep), np.maximum(xl, rep)
    slack = 1e-15 * np.maximum(1.0, np.abs(hi))
    assert np.all(f >= lo - slack) and np.all(f <= hi + slack)


def test_fuse_shape_errors():
    with pytest.raises(DimensionError):
        B.fuse(np.zeros((2, 4, 4)), np.zeros((3, 2, 2)), np.ones(2), 2)
    with pytest.raises(DimensionError):
        B.fuse(np.zeros((2, 4, 4)), np.zeros((2, 3, 2)), np.ones(2), 2)


# ------------------------------------------------------------------ gated FFN

def gffn_weights(c, ch, rng):
    return {
        "norm.weight": rng.normal(size=c), "norm.bias": rng.normal(size=c),
        "w1.weight": rng.normal(size=(2 * ch, c, 1, 1)), "w1.bias": rng.normal(size=2 * ch),
        "w2.weight": rng.normal(size=(c, ch, 1, 1)), "w2.bias": np.zeros(c),
    }


def test_gffn_closed_gate():
    rng = np.random.default_rng(8)
    w = gffn_weights(3, 4, rng)
    w["w1.weight"][4:] = 0.0
    w["w1.bias"][4:] = 0.0
    assert np.array_equal(B.gffn(rng.normal(size=(3, 5, 5)), w), np.zeros((3, 5, 5)))
    w = gffn_weights(3, 4, rng)
    w["w1.weight"][:4] = 0.0
    w["w1.bias"][:4] = 0.0
    assert np.array_equal(B.gffn(rng.normal(size=(3, 5, 5)), w), np.zeros((3, 5, 5)))


def test_gffn_elementwise_square():
    # two channels holding +-t: the gate multiplies the normalized value by itself
    t = np.array([[[0.5, 2.0], [1.0, 3.0]]])
    sign = np.array([[[1.0, -1.0], [-1.0, 1.0]]])
    x = np.concatenate([t * sign, -t * sign])
    w = {
        "norm.weight": np.ones(2), "norm.bias": np.zeros(2),
        "w1.weight": np.concatenate([np.eye(2), np.eye(2)]).reshape(4, 2, 1, 1),
        "w1.bias": np.zeros(4),
        "w2.weight": np.eye(2).reshape(2, 2, 1, 1), "w2.bias": np.zeros(2),
    }
    got = B.gffn(x, w)
    # per position mean 0 and variance t^2, so each channel normalizes to +-t / sqrt(t^2 + eps)
    want = np.concatenate([t * t / (t * t + 1e-5)] * 2)
    assert np.allclose(got, want, rtol=0, atol=1e-14)


def test_gffn_shape_and_odd_channels():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4, 5))
    assert B.gffn(x, gffn_weights(3, 6, rng)).shape == x.shape
    bad = gffn_weights(3, 2, rng)
    bad["w1.weight"] = rng.normal(size=(3, 3, 1, 1))
    bad["w1.bias"] = np.zeros(3)
    with pytest.raises(ContractError):
        B.gffn(x, bad)


# ------------------------------------------------------------------ HMB

def zero_branch_block(c, cr, rng):
    w = block_weights(c, cr, rng)
    for k in w:
        if k.endswith(("lssm.out.weight", "rssm.out.weight", "gffn.w2.weight", "gffn.w2.bias")):
            w[k] = np.zeros_like(w[k])
    w["s1"] = np.ones(c)
    w["s2"] = np.ones(c)
    return w


def test_hmb_skip_identity():
    rng = np.random.default_rng(10)
    w = zero_branch_block(4, 2, rng)
    il, ir = rng.normal(size=(4, 4, 4)), rng.normal(size=(2, 2, 2))
    out, _ = B.hmb_forward(il, ir, w, Direction.H, 2)
    assert np.array_equal(out, il)


def test_hmb_zero_scale_zero_output():
    rng = np.random.default_rng(11)
    w = zero_branch_block(4, 2, rng)
    w["s1"] = np.zeros(4)
    il, ir = rng.normal(size=(4, 4, 4)), rng.normal(size=(2, 2, 2))
    out, _ = B.hmb_forward(il, ir, w, Direction.V, 2)
    assert np.array_equal(out, np.zeros_like(il))


@pytest.mark.parametrize("direction", DIRS)
def test_hmb_matches_reference(direction):
    rng = np.random.default_rng(12)
    w = block_weights(4, 2, rng)
    il, ir = rng.normal(size=(4, 4, 4)), rng.normal(size=(2, 2, 2))
    out, r_next = B.hmb_forward(il, ir, w, direction, 2)
    want_out, want_r = ref_hmb(il, ir, w, direction.value, 2)
    assert np.allclose(out, want_out, rtol=0, atol=1e-12)
    assert np.allclose(r_next, want_r, rtol=0, atol=1e-12)


def test_hmb_last_block_has_no_region_output():
    rng = np.random.default_rng(13)
    w = block_weights(4, 2, rng, carries=False)
    _, r_next = B.hmb_forward(rng.normal(size=(4, 4, 4)), rng.normal(size=(2, 2, 2)), w, Direction.H, 2)
    assert r_next is None


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
       st.sampled_from(DIRS), st.integers(0, 2**31 - 1))
def test_hmb_preserves_shapes(c, cr, n, hr, wr, direction, seed):
    rng = np.random.default_rng(seed)
    il, ir = rng.normal(size=(c, hr * n, wr * n)), rng.normal(size=(cr, hr, wr))
    out, r_next = B.hmb_forward(il, ir, block_weights(c, cr, rng), direction, n)
    assert out.shape == il.shape
    assert r_next.shape == ir.shape


def test_region_branch_cheaper_at_half_channels():
    for c in (8, 16, 30, 60):
        assert _branch_params(c // 2, c, 2, 8) < _branch_params(c, c, 2, 8)
