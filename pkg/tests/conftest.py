"""Shared fixtures: deterministic RNG and synthetic test scenes."""

import numpy as np
import pytest

from fbfrac.grid import ImageGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)


def make_scene(n=256):
    """Piecewise-smooth grayscale scene in the cameraman class: a smooth
    illumination field, a dark figure with sharp silhouette, thin linear
    structures, and coarse textures whose features survive a radius-3 blur."""
    x = np.arange(n, dtype=np.float64)
    X, Y = np.meshgrid(x, x, indexing="ij")
    img = 150 + 50 * (Y / n) - 30 * (X / n)

    head = ((X - 0.27 * n) ** 2 + (Y - 0.47 * n) ** 2) < (0.11 * n) ** 2
    body = (
        (X > 0.34 * n)
        & (X < 0.74 * n)
        & (np.abs(Y - 0.47 * n - 0.15 * (X - 0.34 * n)) < 0.13 * n - 0.1 * (X - 0.34 * n))
    )
    img[head] = 40
    img[body] = 52

    img[(X > 0.37 * n) & (X < 0.47 * n) & (Y > 0.64 * n) & (Y < 0.76 * n)] = 70
    for slope, off, lvl in ((0.0, 0.695, 45), (-0.5, 0.586, 48), (0.35, 0.8, 50)):
        leg = (np.abs(Y - (off * n + slope * (X - 0.47 * n))) < 2) & (X >= 0.47 * n) & (X < 0.9 * n)
        img[leg] = lvl

    img[(X > 0.08 * n) & (X < 0.23 * n) & (Y > 0.74 * n) & (Y < 0.94 * n)] = 110
    win = (
        (X > 0.1 * n) & (X < 0.21 * n) & (Y > 0.77 * n) & (Y < 0.91 * n)
        & ((np.floor(X / 6) % 2) == 0) & ((np.floor(Y / 6) % 2) == 0)
    )
    img[win] = 150

    field = X > 0.88 * n
    img[field] = 95 + 25 * np.sign(np.sin(2 * np.pi * Y[field] / 16.0))

    return ImageGrid(np.clip(img, 0, 255))


@pytest.fixture(scope="session")
def scene256():
    return make_scene(256)


def smooth_bump(n, amplitude=80.0, base=100.0, width=None):
    """Centered Gaussian bump; symmetric, so forward differences vanish on
    the symmetry lines (exercises zero-gradient handling)."""
    width = width or n * 1.2
    x = np.arange(float(n))
    X, Y = np.meshgrid(x, x, indexing="ij")
    c = (n - 1) / 2.0
    return ImageGrid(base + amplitude * np.exp(-((X - c) ** 2 + (Y - c) ** 2) / width))
