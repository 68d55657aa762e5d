import math

import numpy as np
import pytest

from fbfrac.grid import ImageGrid
from fbfrac.metrics import PEAK, evaluate_pair, gaussian_window, psnr, ssim


def ssim_oracle(a, b, size=11, sigma=1.5, c1=(0.01 * 255) ** 2, c2=(0.03 * 255) ** 2):
    """Sliding-window double loop over every pixel with replicate padding."""
    half = size // 2
    x = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-x * x / (2 * sigma * sigma))
    win = g[:, None] * g[None, :]
    win /= win.sum()
    rows, cols = a.shape
    ap = np.pad(a, half, mode="edge")
    bp = np.pad(b, half, mode="edge")
    total = 0.0
    for i in range(rows):
        for j in range(cols):
            wa = ap[i : i + size, j : j + size]
            wb = bp[i : i + size, j : j + size]
            mu_a = (win * wa).sum()
            mu_b = (win * wb).sum()
            var_a = (win * wa * wa).sum() - mu_a * mu_a
            var_b = (win * wb * wb).sum() - mu_b * mu_b
            cov = (win * wa * wb).sum() - mu_a * mu_b
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
            )
    return total / (rows * cols)


def test_psnr_identical_is_sentinel(rng):
    u = ImageGrid(rng.uniform(0, 255, (12, 12)))
    assert psnr(u, u) == math.inf


def test_psnr_unit_difference(rng):
    f = ImageGrid(rng.uniform(1, 254, (16, 16)))
    u = ImageGrid(f.data + 1.0)
    assert psnr(u, f) == pytest.approx(20 * math.log10(PEAK), abs=1e-10)


def test_psnr_strictly_decreasing_in_mse():
    base = ImageGrid(np.full((8, 8), 100.0))
    vals = [psnr(ImageGrid(base.data + amp), base) for amp in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_psnr_permutation_invariance(rng):
    u = rng.uniform(0, 255, (10, 10))
    f = rng.uniform(0, 255, (10, 10))
    perm = rng.permutation(100)
    up = u.reshape(-1)[perm].reshape(10, 10)
    fp = f.reshape(-1)[perm].reshape(10, 10)
    assert psnr(ImageGrid(u), ImageGrid(f)) == pytest.approx(
        psnr(ImageGrid(up), ImageGrid(fp)), abs=1e-12
    )


def test_psnr_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        psnr(ImageGrid(np.zeros((4, 4))), ImageGrid(np.zeros((4, 5))))


def test_ssim_self_is_one(rng):
    u = ImageGrid(rng.uniform(0, 255, (16, 16)))
    assert ssim(u, u) == 1.0


def test_ssim_luminance_shift_penalized(rng):
    u = ImageGrid(rng.uniform(0, 200, (16, 16)))
    shifted = ImageGrid(u.data + 25.0)
    assert ssim(u, shifted) < 1.0


def test_ssim_matches_sliding_window_oracle(rng):
    a = rng.uniform(0, 255, (16, 16))
    b = np.clip(a + rng.normal(0, 12, (16, 16)), 0, 255)
    got = ssim(ImageGrid(a), ImageGrid(b))
    assert got == pytest.approx(ssim_oracle(a, b), abs=1e-10)


def test_ssim_symmetry_and_range(rng):
    for _ in range(5):
        a = ImageGrid(rng.uniform(0, 255, (16, 16)))
        b = ImageGrid(rng.uniform(0, 255, (16, 16)))
        s1, s2 = ssim(a, b), ssim(b, a)
        assert s1 == pytest.approx(s2, abs=1e-12)
        assert -1.0 <= s1 <= 1.0


def test_ssim_window_guard():
    small = ImageGrid(np.zeros((8, 8)))
    with pytest.raises(ValueError, match="window"):
        ssim(small, small)
    with pytest.raises(ValueError, match="mismatch"):
        ssim(ImageGrid(np.zeros((16, 16))), ImageGrid(np.zeros((16, 17))))


def test_gaussian_window_normalized():
    win = gaussian_window()
    assert win.shape == (11, 11)
    assert win.sum() == pytest.approx(1.0, abs=1e-12)
    assert win[5, 5] == win.max()


def test_evaluate_pair(rng):
    u = ImageGrid(rng.uniform(0, 255, (16, 16)))
    rep = evaluate_pair(u, u)
    assert rep.psnr == math.inf and rep.ssim == 1.0
