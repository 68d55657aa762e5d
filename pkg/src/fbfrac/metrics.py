"""PSNR and SSIM on the [0, 255] intensity scale.

SSIM uses the canonical published convention: an 11x11 Gaussian window
with sigma 1.5, stabilizers c1 = (0.01*255)^2 and c2 = (0.03*255)^2, local
statistics at every pixel position under replicate padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import ImageGrid

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = (0.01 * PEAK) ** 2
_C2 = (0.03 * PEAK) ** 2


@dataclass(frozen=True)
class MetricsReport:
    psnr: float  # decibels; +inf for identical images
    ssim: float


def psnr(u: ImageGrid, f: ImageGrid) -> float:
    """10*log10(sum 255^2 / sum (u-f)^2); +inf when the images coincide."""
    if u.shape != f.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {f.shape}")
    err = float(np.sum((u.data - f.data) ** 2))
    if err == 0.0:
        return math.inf
    n = u.rows * u.cols
    return 10.0 * math.log10(n * PEAK * PEAK / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized separable Gaussian weights."""
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = g[:, None] * g[None, :]
    return w / w.sum()


def ssim(u: ImageGrid, f: ImageGrid) -> float:
    """Mean local structural similarity index."""
    if u.shape != f.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {f.shape}")
    if u.rows < SSIM_WINDOW or u.cols < SSIM_WINDOW:
        raise ValueError(
            f"image {u.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = gaussian_window()
    a, b = u.data, f.data

    def local(img):
        return ndimage.correlate(img, win, mode="nearest")

    mu_u = local(a)
    mu_f = local(b)
    var_u = local(a * a) - mu_u * mu_u
    var_f = local(b * b) - mu_f * mu_f
    cov = local(a * b) - mu_u * mu_f

    num = (2.0 * mu_u * mu_f + _C1) * (2.0 * cov + _C2)
    den = (mu_u * mu_u + mu_f * mu_f + _C1) * (var_u + var_f + _C2)
    return float(np.mean(num / den))


def evaluate_pair(u: ImageGrid, f: ImageGrid) -> MetricsReport:
    return MetricsReport(psnr=psnr(u, f), ssim=ssim(u, f))
