"""Grayscale image container and PGM file I/O.

Images are stored as real-valued 2-D arrays on the [0, 255] scale.  Values
are intentionally not clamped while a restoration evolves (backward
diffusion can overshoot the nominal range); clamping happens only when a
grid is exported to PGM.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PgmError(ValueError):
    """Raised when a PGM file cannot be parsed."""


@dataclass(frozen=True)
class ImageGrid:
    """A rows x cols grid of pixel intensities with spatial step ``h``.

    Row index i corresponds to the x lattice direction, column index j to
    the y direction.  The backing array is read-only; operations return
    fresh grids.
    """

    data: np.ndarray
    h: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ValueError(f"image must be at least 2x2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains NaN or Inf")
        if not self.h > 0:
            raise ValueError(f"spatial step h must be positive, got {self.h}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "ImageGrid":
        """New grid with the same spatial step and fresh data."""
        return ImageGrid(data, self.h)


def mean(grid: ImageGrid) -> float:
    """Arithmetic mean of all pixel values."""
    return float(np.mean(grid.data))


def l2_distance(a: ImageGrid, b: ImageGrid) -> float:
    """Discrete L2 distance sqrt(h^2 * sum((a-b)^2)).

    Raises ValueError on dimension mismatch.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a.data - b.data
    return float(a.h * np.sqrt(np.sum(d * d)))


def _read_pgm_tokens(raw: bytes, count: int, start: int) -> list[int]:
    # ASCII (P2) payload: whitespace-separated integers, '#' comments allowed.
    text = raw[start:].decode("ascii", errors="replace")
    tokens: list[int] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        for tok in line.split():
            try:
                tokens.append(int(tok))
            except ValueError:
                raise PgmError(f"non-numeric sample {tok!r} in P2 payload") from None
            if len(tokens) == count:
                return tokens
    return tokens


def _next_header_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    # Skips whitespace and '#' comment lines between header fields.
    n = len(raw)
    while pos < n:
        c = raw[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PgmError("truncated PGM header")
    return raw[start:pos], pos


def load_pgm(path) -> ImageGrid:
    """Load an 8-bit grayscale PGM file (P2 ASCII or P5 binary).

    The max value must be exactly 255.  Intensities are returned as reals
    in [0, 255]; h is set to 1.
    """
    with open(path, "rb") as fh:
        raw = fh.read()

    magic, pos = _next_header_token(raw, 0)
    if magic not in (b"P2", b"P5"):
        raise PgmError(f"not a PGM file: bad magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _next_header_token(raw, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise PgmError(f"malformed PGM header field {tok!r}") from None
    width, height, maxval = fields
    if width < 2 or height < 2:
        raise PgmError(f"image too small: {height}x{width}")
    if maxval != 255:
        raise PgmError(f"unsupported bit depth: maxval {maxval}, expected 255")

    count = width * height
    if magic == b"P5":
        # Exactly one whitespace byte separates the header from the payload.
        pos += 1
        payload = raw[pos : pos + count]
        if len(payload) < count:
            raise PgmError(
                f"truncated P5 payload: expected {count} bytes, got {len(payload)}"
            )
        data = np.frombuffer(payload, dtype=np.uint8, count=count)
    else:
        samples = _read_pgm_tokens(raw, count, pos)
        if len(samples) < count:
            raise PgmError(
                f"truncated P2 payload: expected {count} samples, got {len(samples)}"
            )
        data = np.asarray(samples)
        if data.min() < 0 or data.max() > 255:
            raise PgmError("P2 sample outside [0, 255]")

    return ImageGrid(data.reshape(height, width).astype(np.float64), 1.0)


def save_pgm(grid: ImageGrid, path, binary: bool = True) -> None:
    """Write a grid as an 8-bit PGM, clamping to [0, 255] and rounding half-up."""
    clamped = np.clip(grid.data, 0.0, 255.0)
    quantized = np.floor(clamped + 0.5).astype(np.uint8)
    header = f"{'P5' if binary else 'P2'}\n{grid.cols} {grid.rows}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(quantized.tobytes())
        else:
            lines = [" ".join(str(v) for v in row) for row in quantized]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
