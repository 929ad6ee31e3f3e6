import csv
import math

import numpy as np
import pytest

from tilesr import GeometryError, ImageGrid, psnr, ssim
from tilesr.metrics import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW, evaluate_pair, write_metrics_csv

from conftest import rand_image


def brute_force_mse(a, b):
    total = 0.0
    flat_a = a.data.ravel()
    flat_b = b.data.ravel()
    for x, y in zip(flat_a, flat_b):  # direct summation, no vector ops
        total += (x - y) ** 2
    return total / flat_a.size


def brute_force_ssim(a, b):
    """Direct per-window enumeration with an explicit Gaussian mask."""
    offsets = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g1 = np.exp(-(offsets**2) / (2 * SSIM_SIGMA**2))
    g1 /= g1.sum()
    mask = np.outer(g1, g1)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    channel_scores = []
    for ch in range(a.channels):
        x = a.data[:, :, ch]
        y = b.data[:, :, ch]
        values = []
        for top in range(a.height - SSIM_WINDOW + 1):
            for left in range(a.width - SSIM_WINDOW + 1):
                wx = x[top : top + SSIM_WINDOW, left : left + SSIM_WINDOW]
                wy = y[top : top + SSIM_WINDOW, left : left + SSIM_WINDOW]
                mx = (mask * wx).sum()
                my = (mask * wy).sum()
                vx = (mask * wx * wx).sum() - mx**2
                vy = (mask * wy * wy).sum() - my**2
                vxy = (mask * wx * wy).sum() - mx * my
                values.append(
                    ((2 * mx * my + c1) * (2 * vxy + c2))
                    / ((mx**2 + my**2 + c1) * (vx + vy + c2))
                )
        channel_scores.append(np.mean(values))
    return float(np.mean(channel_scores))


class TestPsnr:
    def test_identical_images_sentinel(self, rng):
        img = rand_image(rng, 16, 16)
        assert psnr(img, img) == math.inf

    def test_uniform_offset_closed_form(self):
        a = ImageGrid(np.full((32, 32, 3), 0.5))
        b = ImageGrid(np.full((32, 32, 3), 0.5 + 16 / 255))
        expected = 20 * math.log10(255 / 16)
        assert abs(psnr(a, b) - expected) < 1e-6

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(10):
            a = rand_image(rng, 12, 12)
            b = rand_image(rng, 12, 12)
            expected = 10 * math.log10(1.0 / brute_force_mse(a, b))
            assert abs(psnr(a, b) - expected) < 1e-9

    def test_symmetry(self, rng):
        a, b = rand_image(rng, 8, 8), rand_image(rng, 8, 8)
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)

    def test_monotone_in_noise_amplitude(self, rng):
        base = rand_image(rng, 24, 24)
        noise = rng.standard_normal(base.data.shape)
        last = math.inf
        for amplitude in (0.01, 0.02, 0.05, 0.1, 0.2):
            perturbed = ImageGrid(np.clip(base.data + amplitude * noise, 0, 1))
            value = psnr(base, perturbed)
            assert value < last
            last = value

    def test_peak_parameter(self, rng):
        a = ImageGrid(np.full((8, 8, 1), 0.25))
        b = ImageGrid(np.full((8, 8, 1), 0.75))
        assert psnr(a, b, peak=2.0) == pytest.approx(psnr(a, b, peak=1.0) + 20 * math.log10(2), abs=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(GeometryError):
            psnr(rand_image(rng, 8, 8), rand_image(rng, 8, 9))

    def test_rejects_nonpositive_peak(self, rng):
        img = rand_image(rng, 8, 8)
        with pytest.raises(ValueError):
            psnr(img, img, peak=0.0)


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        img = rand_image(rng, 20, 20)
        assert abs(ssim(img, img) - 1.0) < 1e-9

    def test_symmetry(self, rng):
        a, b = rand_image(rng, 16, 16), rand_image(rng, 16, 16)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9

    def test_inverted_high_contrast_scores_low(self, rng):
        pattern = np.zeros((32, 32, 1))
        pattern[::2] = 1.0  # hard stripes
        a = ImageGrid(pattern)
        b = ImageGrid(1.0 - pattern)
        assert ssim(a, b) < 0.5

    def test_constant_pair_reduces_to_luminance_term(self):
        a = ImageGrid(np.full((16, 16, 1), 0.25))
        b = ImageGrid(np.full((16, 16, 1), 0.75))
        c1 = SSIM_K1**2
        expected = (2 * 0.25 * 0.75 + c1) / (0.25**2 + 0.75**2 + c1)
        assert abs(ssim(a, b) - expected) < 1e-12

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(4):
            a = rand_image(rng, 14, 15, 2)
            b = ImageGrid(np.clip(a.data + 0.15 * rng.standard_normal(a.data.shape), 0, 1))
            assert abs(ssim(a, b) - brute_force_ssim(a, b)) < 1e-9

    def test_shift_invariance_with_matched_local_means(self, rng):
        # contrast/structure are exactly shift-invariant; with a tiny
        # perturbation the luminance term's sensitivity is quadratically
        # small, so a common offset moves the score by far less than 1e-6
        base = ImageGrid(0.2 + 0.6 * rng.random((24, 24, 1)))
        perturbed = ImageGrid(base.data + 1e-4 * (rng.random(base.data.shape) - 0.5))
        reference = ssim(base, perturbed)
        for shift in (-0.1, 0.05, 0.15):
            a = ImageGrid(base.data + shift)
            b = ImageGrid(perturbed.data + shift)
            assert abs(ssim(a, b) - reference) < 1e-6

    def test_too_small_image_rejected(self, rng):
        small = rand_image(rng, 8, 8)
        with pytest.raises(GeometryError, match="smaller than"):
            ssim(small, small)


class TestEvaluatePair:
    def test_y_channel_mode(self, rng):
        a, b = rand_image(rng, 16, 16), rand_image(rng, 16, 16)
        rgb = evaluate_pair(a, b)
        luma = evaluate_pair(a, b, y_channel=True)
        assert rgb.psnr != luma.psnr  # different color conventions

    def test_shave_border(self, rng):
        a, b = rand_image(rng, 20, 20), rand_image(rng, 20, 20)
        shaved = evaluate_pair(a, b, shave_border=4)
        inner_a = ImageGrid(a.data[4:-4, 4:-4])
        inner_b = ImageGrid(b.data[4:-4, 4:-4])
        assert shaved.psnr == pytest.approx(psnr(inner_a, inner_b), abs=1e-12)

    def test_lpips_absent_without_bridge(self, rng):
        report = evaluate_pair(rand_image(rng, 16, 16), rand_image(rng, 16, 16))
        assert report.lpips is None


class TestCsvEmission:
    def test_rows_and_mean(self, tmp_path):
        rows = [
            {"image_id": "a", "method": "m", "psnr": math.inf, "ssim": 1.0},
            {"image_id": "b", "method": "m", "psnr": 30.0, "ssim": 0.9},
            {"image_id": "c", "method": "m", "psnr": 20.0, "ssim": 0.7},
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, rows)
        with open(path) as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["image_id", "method", "psnr", "ssim", "lpips"]
        assert parsed[1][2] == "inf"
        mean_row = parsed[-1]
        assert mean_row[0] == "mean"
        assert float(mean_row[2]) == pytest.approx(25.0)  # inf excluded
        assert float(mean_row[3]) == pytest.approx((1.0 + 0.9 + 0.7) / 3)
