import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from himamba.errors import DimensionError, InputError
from himamba.imaging import bicubic_resize, cubic, load_png, resize_matrix, rgb_to_y, save_png, to_uint8
from himamba.inference import DIHEDRAL, dihedral, dihedral_inverse, self_ensemble
from himamba.metrics import PSNR_CAP, psnr, ssim


# ------------------------------------------------------------------ luma

def test_luma_black_white_gray():
    assert rgb_to_y(np.zeros((3, 1, 1)))[0, 0] == pytest.approx(16 / 255, abs=1e-15)
    assert rgb_to_y(np.ones((3, 1, 1)))[0, 0] == pytest.approx(235 / 255, abs=1e-15)
    for g in (0.1, 0.5, 0.9):
        assert rgb_to_y(np.full((3, 1, 1), g))[0, 0] == pytest.approx((16 + 219 * g) / 255, abs=1e-14)


# ------------------------------------------------------------------ bicubic

def test_cubic_weights_at_half_phase():
    w = cubic(np.array([1.5, 0.5, 0.5, 1.5]))
    assert np.array_equal(w, [-0.0625, 0.5625, 0.5625, -0.0625])
    assert w.sum() == 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True))
def test_cubic_partition_of_unity(t):
    taps = cubic(np.array([1 + t, t, 1 - t, 2 - t]))
    assert abs(taps.sum() - 1.0) < 1e-12


def test_cubic_interpolates():
    assert cubic(0.0) == 1.0 and cubic(1.0) == 0.0 and cubic(2.0) == 0.0 and cubic(2.5) == 0.0


@pytest.mark.parametrize("n_in,n_out", [(10, 10), (8, 16), (16, 8), (9, 3), (5, 17), (64, 32)])
def test_resize_rows_sum_to_one(n_in, n_out):
    m = resize_matrix(n_in, n_out)
    assert np.abs(m.sum(axis=1) - 1.0).max() < 1e-12


def test_resize_identity_bit_equal():
    img = np.random.default_rng(0).uniform(0, 1, (3, 7, 9))
    assert np.array_equal(bicubic_resize(img, 9, 7), img)


@pytest.mark.parametrize("w,h", [(3, 5), (20, 14), (7, 7)])
def test_resize_constant(w, h):
    img = np.full((3, 10, 10), 0.37)
    assert np.allclose(bicubic_resize(img, w, h), 0.37, rtol=0, atol=1e-14)


def test_downsample_half_is_antialiased():
    # alternating columns average out when halving with a stretched kernel
    img = np.tile(np.array([0.0, 1.0]), (1, 16, 16))
    out = bicubic_resize(img, 16, 16)
    assert np.abs(out[:, 2:-2, 2:-2] - 0.5).max() < 0.05


def test_upsample_two_uses_quarter_phase_taps():
    x = np.random.default_rng(1).uniform(0, 1, 12)
    m = resize_matrix(12, 24)
    # output 2k+1 sits a quarter pixel right of input k
    w = cubic(np.array([1.25, 0.25, 0.75, 1.75]))
    k = 5
    assert m[2 * k + 1] @ x == pytest.approx(w @ x[k - 1:k + 3], abs=1e-14)


# ------------------------------------------------------------------ 8-bit I/O

def test_to_uint8_rounding_and_clamp():
    v = np.array([-0.2, 0.0, 0.5 / 255, 1.5 / 255, 254.5 / 255, 1.0, 1.3])
    assert list(to_uint8(v)) == [0, 0, 1, 2, 255, 255, 255]


def test_png_round_trip_lossless(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (3, 9, 11)) / 255.0
    save_png(img, tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    assert np.array_equal(to_uint8(back), to_uint8(img))
    assert np.array_equal(back, img)


def test_load_unreadable(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not an image")
    with pytest.raises(InputError):
        load_png(p)


# ------------------------------------------------------------------ metrics

def test_psnr_examples():
    a = np.random.default_rng(3).uniform(0.1, 0.9, (20, 20))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert abs(psnr(a, a + 1 / 255) - 48.1308) < 1e-3
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0


def test_psnr_symmetric_and_shave():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(0, 1, (2, 16, 16))
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, b, shave=2) == psnr(a[2:-2, 2:-2], b[2:-2, 2:-2])
    c = a.copy()
    c[:2] = b[:2]  # differences confined to the shaved border
    assert psnr(a, c, shave=2) == PSNR_CAP
    with pytest.raises(DimensionError):
        psnr(a, b[:-1])


def test_ssim_identity_and_symmetry():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(0, 1, (2, 24, 24))
    assert ssim(a, a) == 1.0
    assert ssim(a, b) == ssim(b, a)
    assert -1.0 <= ssim(a, b) < 1.0
    assert ssim(a, 1.0 - a) < 0.0


def test_ssim_against_direct_window_sums():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 1, (13, 12))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    x = np.arange(11) - 5.0
    g = np.exp(-x * x / 4.5)
    g2 = np.outer(g, g) / g.sum() ** 2
    vals = []
    for i in range(13 - 10):
        for j in range(12 - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (g2 * pa).sum(), (g2 * pb).sum()
            va = (g2 * (pa - ma) ** 2).sum()
            vb = (g2 * (pb - mb) ** 2).sum()
            cov = (g2 * (pa - ma) * (pb - mb)).sum()
            c1, c2 = 0.01 ** 2, 0.03 ** 2
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-12)


def test_ssim_window_too_large():
    with pytest.raises(DimensionError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ------------------------------------------------------------------ self-ensemble

def nearest_up(img):
    return np.repeat(np.repeat(img, 2, axis=-2), 2, axis=-1)


def test_dihedral_inverse_round_trip():
    img = np.random.default_rng(7).normal(size=(3, 4, 6))
    assert len(DIHEDRAL) == 8
    outs = {dihedral(img, i).tobytes() + bytes(dihedral(img, i).shape) for i in range(8)}
    assert len(outs) == 8
    for i in range(8):
        assert np.array_equal(dihedral_inverse(dihedral(img, i), i), img)


def test_ensemble_of_equivariant_model_is_exact():
    img = np.random.default_rng(8).uniform(0, 1, (3, 7, 10))
    assert np.array_equal(self_ensemble(img, nearest_up), nearest_up(img))


def test_ensemble_matches_explicit_eight_passes():
    rng = np.random.default_rng(9)
    kernel = rng.normal(size=(3, 3))

    def model(x):  # not equivariant: fixed asymmetric filter, then upsample
        pad = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        y = sum(kernel[i, j] * pad[:, i:i + x.shape[1], j:j + x.shape[2]] for i in range(3) for j in range(3))
        return nearest_up(y)

    img = rng.uniform(0, 1, (3, 6, 5))
    passes = []
    for rot_k in range(4):
        for flip in (False, True):
            t = np.rot90(np.flip(img, -1) if flip else img, rot_k, axes=(1, 2))
            back = np.rot90(model(np.ascontiguousarray(t)), -rot_k, axes=(1, 2))
            passes.append(np.flip(back, -1) if flip else back)
    want = np.mean(passes, axis=0)
    got = self_ensemble(img, model)
    assert np.allclose(got, want, rtol=0, atol=1e-14)
    assert np.array_equal(got, self_ensemble(img, model))


def test_ensemble_invariant_under_pre_rotation():
    rng = np.random.default_rng(10)
    kernel = rng.normal(size=(2, 2))

    def model(x):
        y = kernel[0, 0] * x + kernel[0, 1] * np.roll(x, 1, axis=-1) + kernel[1, 0] * np.roll(x, 1, axis=-2)
        return nearest_up(y)

    img = rng.uniform(0, 1, (3, 6, 6))
    base = self_ensemble(img, model)
    for i in range(8):
        moved = dihedral_inverse(self_ensemble(np.ascontiguousarray(dihedral(img, i)), model), i)
        assert np.allclose(moved, base, rtol=0, atol=1e-14)
