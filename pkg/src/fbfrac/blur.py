"""Blur operator K, its exact adjoint, kernel constructors, and degradation.

K is correlation under replicate (edge-clamp) padding, mirroring the
scheme's ghost convention.  The adjoint is the true matrix transpose of
that padded operator (full convolution followed by folding the border
strips back onto the boundary), not a flipped-kernel correlation; this is
what makes <Ku, v> = <u, K'v> hold exactly at boundaries.

Disk and motion kernels use coverage weighting with a fixed subsampling
estimator (16x16 subcells per pixel for the disk; 256 sample points per
unit length for the segment), so the weight tables are bit-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .grid import ImageGrid

#: Identity of the noise generator, recorded in run manifests so another
#: implementation can substitute a noise file for bit-equality studies.
NOISE_GENERATOR = "philox4x64-10+box-muller-cos"

_SUBSAMPLES = 16  # per-axis subsamples per pixel for coverage estimation


@dataclass(frozen=True)
class BlurKernel:
    """Odd-dimensioned nonnegative stencil with unit mass."""

    weights: np.ndarray
    kind: str = "custom"
    params: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.ndim != 2:
            raise ValueError(f"kernel must be 2-D, got shape {w.shape}")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ValueError(f"kernel dims must be odd, got {w.shape}")
        if np.any(w < 0):
            raise ValueError("kernel weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"kernel weights must sum to 1, got {total!r}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


@dataclass(frozen=True)
class DegradationSpec:
    """Blur kernel plus Gaussian noise level and RNG seed."""

    kernel: BlurKernel
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def make_average_kernel(n: int) -> BlurKernel:
    """Uniform n x n kernel; n = 1 is the identity."""
    if n < 1 or n % 2 == 0:
        raise ValueError(f"average kernel size must be odd and >= 1, got {n}")
    w = np.full((n, n), 1.0 / (n * n))
    return BlurKernel(w, "average", (n,))


def make_disk_kernel(radius: float) -> BlurKernel:
    """Pillbox kernel: each weight is the pixel square's disk coverage."""
    if radius <= 0:
        raise ValueError(f"disk radius must be positive, got {radius}")
    half = int(math.ceil(radius))
    n = 2 * half + 1
    # Midpoints of the 16x16 subcells of one pixel square.
    sub = (np.arange(_SUBSAMPLES) + 0.5) / _SUBSAMPLES - 0.5
    offs = np.arange(-half, half + 1, dtype=np.float64)
    x = offs[:, None] + sub[None, :]  # (n, 16) subsample coordinates
    x2 = x * x
    cover = (x2[:, None, :, None] + x2[None, :, None, :]) <= radius * radius
    w = cover.sum(axis=(2, 3)).astype(np.float64)
    return BlurKernel(w / w.sum(), "disk", (radius,))


def make_motion_kernel(length: float, angle: float) -> BlurKernel:
    """Linear motion kernel: weight = length of segment inside each pixel.

    The centered segment of the given length and direction is sampled at
    256 points per unit length; samples are binned to their containing
    pixel and the counts normalized.
    """
    if length < 1:
        raise ValueError(f"motion length must be >= 1, got {length}")
    nsamp = max(1, int(round(256 * length)))
    t = (np.arange(nsamp) + 0.5) / nsamp * length - length / 2.0
    xs = t * math.cos(angle)
    ys = t * math.sin(angle)
    ci = np.floor(ys + 0.5).astype(np.int64)
    cj = np.floor(xs + 0.5).astype(np.int64)
    ri = int(np.max(np.abs(ci)))
    rj = int(np.max(np.abs(cj)))
    w = np.zeros((2 * ri + 1, 2 * rj + 1))
    np.add.at(w, (ci + ri, cj + rj), 1.0)
    return BlurKernel(w / w.sum(), "motion", (length, angle))


def apply_blur(k: BlurKernel, u: ImageGrid) -> ImageGrid:
    """K * u: correlation with replicate padding."""
    kh, kw = k.shape
    if kh > u.rows or kw > u.cols:
        raise ValueError(f"kernel {k.shape} larger than image {u.shape}")
    out = ndimage.correlate(u.data, k.weights, mode="nearest")
    return u.with_data(out)


def _fold_axis(arr: np.ndarray, n: int, center: int, axis: int) -> np.ndarray:
    # Adjoint of replicate padding: border strips accumulate onto the edge.
    a = np.moveaxis(arr, axis, 0)
    out = np.empty((n,) + a.shape[1:])
    out[0] = a[: center + 1].sum(axis=0)
    out[1 : n - 1] = a[center + 1 : center + n - 1]
    out[n - 1] = a[center + n - 1 :].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def apply_adjoint(k: BlurKernel, v: ImageGrid) -> ImageGrid:
    """K' * v: exact transpose of apply_blur including boundary behavior."""
    kh, kw = k.shape
    if kh > v.rows or kw > v.cols:
        raise ValueError(f"kernel {k.shape} larger than image {v.shape}")
    if kh * kw <= 100:
        full = signal.convolve2d(v.data, k.weights, mode="full")
    else:
        full = signal.fftconvolve(v.data, k.weights, mode="full")
    folded = _fold_axis(full, v.rows, kh // 2, 0)
    folded = _fold_axis(folded, v.cols, kw // 2, 1)
    return v.with_data(folded)


def gaussian_noise(rows: int, cols: int, sigma: float, seed: int) -> np.ndarray:
    """Deterministic Gaussian field from a counter-based generator.

    Uniforms come from a Philox bit generator seeded with ``seed``;
    normals via the Box-Muller cosine branch.  Identified in manifests as
    ``NOISE_GENERATOR``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    n = rows * cols
    u1 = 1.0 - rng.random(n)  # in (0, 1]: keeps the log finite
    u2 = rng.random(n)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
    return sigma * z.reshape(rows, cols)


def load_noise_file(path, rows: int, cols: int) -> np.ndarray:
    """Raw little-endian float64 noise field, row-major, length rows*cols."""
    data = np.fromfile(path, dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(
            f"noise file holds {data.size} values, expected {rows * cols}"
        )
    return data.reshape(rows, cols)


def degrade(u: ImageGrid, spec: DegradationSpec, noise: np.ndarray | None = None) -> ImageGrid:
    """f = K*u + n with deterministic seeded noise (or a supplied field)."""
    blurred = apply_blur(spec.kernel, u)
    if noise is None:
        noise = gaussian_noise(u.rows, u.cols, spec.sigma, spec.seed)
    elif noise.shape != u.shape:
        raise ValueError(f"noise field {noise.shape} does not match image {u.shape}")
    return u.with_data(blurred.data + noise)
