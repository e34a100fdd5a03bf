"""Compression artifact simulation via the 8x8 block-DCT JPEG pipeline.

Implements RGB->YCbCr, blockwise orthonormal DCT-II, quantization with the
standard luminance/chrominance tables scaled by the conventional quality
mapping, dequantization and reconstruction. Entropy coding is lossless and
therefore omitted; chroma subsampling is also omitted, so the surviving
artifacts are exactly the DCT quantization effects (blocking, ringing).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def _dct_matrix() -> np.ndarray:
    d = np.zeros((8, 8), dtype=np.float64)
    for i in range(8):
        ci = math_c(i)
        for j in range(8):
            d[i, j] = 0.5 * ci * np.cos((2 * j + 1) * i * np.pi / 16.0)
    return d


def math_c(i: int) -> float:
    return 1.0 / np.sqrt(2.0) if i == 0 else 1.0


_DCT = _dct_matrix()


def quality_scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    """Quantization table at a given quality using the common 5000/q mapping."""
    if not (1 <= quality <= 100):
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    scaled = np.floor((base * s + 50.0) / 100.0)
    return np.clip(scaled, 1.0, 255.0)


def _rgb_to_ycbcr(rgb255: np.ndarray) -> np.ndarray:
    r, g, b = rgb255[0], rgb255[1], rgb255[2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr])


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[0], ycc[1] - 128.0, ycc[2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])


def _codec_channel(chan255: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = chan255.shape
    blocks = chan255.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coef = _DCT @ blocks @ _DCT.T
    coef = np.round(coef / table) * table
    rec = _DCT.T @ coef @ _DCT + 128.0
    return rec.transpose(0, 2, 1, 3).reshape(h, w)


def jpeg_roundtrip(img: Tensor, quality: int) -> Tensor:
    """Encode-decode an image through the simulated codec at ``quality``.

    C must be 1 or 3; H and W are reflect-padded to multiples of 8 internally
    and cropped back. Output is clamped to [0, 1].
    """
    if not (1 <= quality <= 100):
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    if img.data.ndim != 4 or img.data.shape[1] not in (1, 3):
        raise ShapeError(f"jpeg_roundtrip expects Nx{{1,3}}xHxW, got shape {img.shape}")
    n, c, h, w = img.data.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    luma_q = quality_scaled_table(LUMA_TABLE, quality)
    chroma_q = quality_scaled_table(CHROMA_TABLE, quality)

    out = np.empty_like(img.data, dtype=np.float64)
    for b in range(n):
        x = img.data[b].astype(np.float64) * 255.0
        if pad_h or pad_w:
            x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
        if c == 3:
            ycc = _rgb_to_ycbcr(x)
            rec = np.stack([
                _codec_channel(ycc[0], luma_q),
                _codec_channel(ycc[1], chroma_q),
                _codec_channel(ycc[2], chroma_q),
            ])
            rec = _ycbcr_to_rgb(rec)
        else:
            rec = _codec_channel(x[0], luma_q)[None]
        out[b] = rec[:, :h, :w] / 255.0
    return Tensor(np.clip(out, 0.0, 1.0).astype(img.data.dtype))
