import math

import numpy as np
import pytest

from sscan.metrics import ImageU8, psnr, rgb_to_y, ssim


def gray(arr):
    return ImageU8(np.asarray(arr, dtype=np.uint8))


def brute_ssim(x, y):
    """Explicit 11x11 Gaussian window loop over every valid position."""
    r = np.arange(11) - 5
    g1 = np.exp(-(r**2) / (2 * 1.5**2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i : i + 11, j : j + 11], y[i : i + 11, j : j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestImage:
    def test_gray_promoted(self):
        img = gray(np.zeros((4, 5)))
        assert (img.height, img.width, img.channels) == (4, 5, 1)
        assert img.to_rgb().channels == 3

    def test_float_roundtrip(self):
        px = np.random.default_rng(0).integers(0, 256, (6, 7, 3), dtype=np.uint8)
        img = ImageU8(px)
        np.testing.assert_array_equal(ImageU8.from_float(img.to_float()).pixels, px)

    def test_from_float_clips(self):
        img = ImageU8.from_float(np.array([[[-0.5, 1.7]]]))
        assert img.pixels[0, :, 0].tolist() == [0, 255]

    @pytest.mark.parametrize("bad", [np.zeros((2, 2, 2)), np.full((2, 2), 300), np.full((2, 2), 0.5)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ImageU8(bad)


class TestY:
    def test_black_white(self):
        y = rgb_to_y(np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8))
        np.testing.assert_allclose(y[0], [16.0, 235.0], atol=1e-9)

    def test_coefficients(self):
        y = rgb_to_y(np.array([[[255, 0, 0]]], dtype=np.uint8))
        assert y[0, 0] == pytest.approx(16 + 65.481)


class TestPSNR:
    def test_identical_is_inf(self):
        a = gray(np.random.default_rng(0).integers(0, 256, (8, 8)))
        assert psnr(a, a) == math.inf

    def test_one_level_difference(self):
        a, b = gray(np.full((8, 8), 100)), gray(np.full((8, 8), 101))
        assert psnr(a, b) == pytest.approx(10 * math.log10(255**2), abs=1e-12)
        assert psnr(a, b) == pytest.approx(48.13, abs=5e-3)

    def test_direct_mse_oracle(self):
        rng = np.random.default_rng(1)
        pa, pb = rng.integers(0, 256, (10, 12, 3)), rng.integers(0, 256, (10, 12, 3))
        ya, yb = rgb_to_y(pa.astype(np.uint8)), rgb_to_y(pb.astype(np.uint8))
        mse = np.mean((ya[2:-2, 2:-2] - yb[2:-2, 2:-2]) ** 2)
        want = 10 * math.log10(255**2 / mse)
        assert psnr(ImageU8(pa), ImageU8(pb), crop_border=2) == pytest.approx(want, abs=1e-9)

    def test_rgb_mode(self):
        rng = np.random.default_rng(2)
        pa, pb = rng.integers(0, 256, (6, 6, 3)), rng.integers(0, 256, (6, 6, 3))
        mse = np.mean((pa.astype(float) - pb) ** 2)
        assert psnr(ImageU8(pa), ImageU8(pb), on_y=False) == pytest.approx(10 * math.log10(255**2 / mse))

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(3)
        base = rng.integers(60, 190, (32, 32))
        noise = rng.uniform(-1, 1, (32, 32))
        vals = [psnr(gray(base), gray(np.clip(np.round(base + a * noise), 0, 255))) for a in (2, 5, 10, 20, 40)]
        assert all(x > y for x, y in zip(vals, vals[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psnr(gray(np.zeros((4, 4))), gray(np.zeros((4, 5))))

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            psnr(gray(np.zeros((4, 4))), gray(np.zeros((4, 4))), crop_border=2)


class TestSSIM:
    def test_identical_is_one(self):
        a = gray(np.random.default_rng(4).integers(0, 256, (16, 16)))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        mx, my = 100.0, 130.0
        c1 = (0.01 * 255) ** 2
        want = (2 * mx * my + c1) / (mx**2 + my**2 + c1)
        assert ssim(gray(np.full((12, 12), 100)), gray(np.full((12, 12), 130))) == pytest.approx(want, abs=1e-12)

    def test_brute_force_window_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.integers(0, 256, (15, 17)).astype(float)
        y = np.clip(x + rng.normal(0, 20, x.shape), 0, 255).round()
        assert ssim(gray(x), gray(y)) == pytest.approx(brute_ssim(x, y), abs=1e-10)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(6)
        a, b = gray(rng.integers(0, 256, (20, 20))), gray(rng.integers(0, 256, (20, 20)))
        s = ssim(a, b)
        assert s == pytest.approx(ssim(b, a), abs=1e-15)
        assert -1 <= s < 1

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(gray(np.zeros((12, 12))), gray(np.zeros((12, 12))), crop_border=1)
