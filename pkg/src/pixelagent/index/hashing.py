"""DCT perceptual hashing of cell grids.

The 64-bit hash thresholds the top-left 8x8 low-frequency DCT block of a
32x32 resample against the median of its non-DC coefficients.  Excluding
the DC term from the median makes the hash invariant to uniform brightness
shifts up to the single DC bit.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(float)
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    img = img.astype(float)
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def phash(frame: np.ndarray) -> int:
    """64-bit perceptual hash of a single frame (grid of cell codes)."""
    frame = np.asarray(frame)
    if frame.ndim != 2 or frame.shape[0] < 8 or frame.shape[1] < 8:
        raise ValueError("phash needs a 2-D frame of at least 8x8 cells")
    small = _resize_bilinear(frame, 32, 32)
    coeffs = dctn(small, type=2, norm="ortho")[:8, :8]
    flat = coeffs.ravel()
    median = np.median(flat[1:])  # DC excluded from the threshold
    bits = flat > median
    out = 0
    for i, bit in enumerate(bits):
        if bit:
            out |= 1 << i
    return out


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def clip_hashes(frames: np.ndarray, stride: int = 1) -> list[int]:
    """Per-frame hashes sampled at a frame stride (videos hash keyframes)."""
    return [phash(frames[f]) for f in range(0, len(frames), max(1, stride))]
