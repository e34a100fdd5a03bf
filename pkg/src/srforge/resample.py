"""Separable image resampling: nearest, bilinear, bicubic, area, lanczos.

Coordinates use the half-pixel convention src = (dst + 0.5) * (S/T) - 0.5.
When downscaling, filter support is stretched by the scale factor for
anti-aliasing. Each output row/column is a normalized weighted sum of
source samples (weights sum to 1), so constants are preserved exactly, and
the whole resize is two deterministic matrix multiplies.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor

METHODS = ("nearest", "bilinear", "bicubic", "area", "lanczos")


def _bilinear_weight(x):
    ax = abs(x)
    return 1.0 - ax if ax < 1.0 else 0.0


def _bicubic_weight(x):
    # Catmull-Rom convention, a = -0.5
    a = -0.5
    ax = abs(x)
    if ax < 1.0:
        return (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0
    if ax < 2.0:
        return a * ax**3 - 5.0 * a * ax**2 + 8.0 * a * ax - 4.0 * a
    return 0.0


def _lanczos_weight(x):
    a = 3.0
    ax = abs(x)
    if ax < 1e-12:
        return 1.0
    if ax >= a:
        return 0.0
    px = math.pi * x
    return a * math.sin(px) * math.sin(px / a) / (px * px)


_FILTERS = {
    "bilinear": (_bilinear_weight, 1.0),
    "bicubic": (_bicubic_weight, 2.0),
    "lanczos": (_lanczos_weight, 3.0),
}


def _axis_matrix(src: int, dst: int, method: str) -> np.ndarray:
    """(dst, src) weight matrix for one axis; every row sums to 1."""
    m = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst

    if method == "nearest":
        for t in range(dst):
            i = min(int(math.floor((t + 0.5) * scale)), src - 1)
            m[t, i] = 1.0
        return m

    if method == "area":
        # fractional coverage of source pixels by the destination cell
        for t in range(dst):
            lo = t * scale
            hi = (t + 1) * scale
            i0 = int(math.floor(lo))
            i1 = min(int(math.ceil(hi)), src)
            for i in range(i0, i1):
                cover = min(hi, i + 1) - max(lo, i)
                if cover > 0:
                    m[t, i] = cover
            m[t] /= m[t].sum()
        return m

    kernel, radius = _FILTERS[method]
    stretch = max(scale, 1.0)
    support = radius * stretch
    for t in range(dst):
        center = (t + 0.5) * scale - 0.5
        i0 = int(math.floor(center - support)) + 1
        i1 = int(math.floor(center + support))
        row = m[t]
        for i in range(i0, i1 + 1):
            w = kernel((i - center) / stretch)
            if w != 0.0:
                row[min(max(i, 0), src - 1)] += w  # edge taps clamp to border
        s = row.sum()
        if s == 0.0:
            row[min(max(int(round(center)), 0), src - 1)] = 1.0
        else:
            row /= s
    return m


def resize(img: Tensor, target_h: int, target_w: int, method: str) -> Tensor:
    """Resample an NCHW image tensor to (target_h, target_w), clamped to [0,1]."""
    if method not in METHODS:
        raise ValueError(f"unknown resize method {method!r}; choose from {METHODS}")
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    if img.data.ndim != 4:
        raise ShapeError(f"resize expects NCHW input, got shape {img.shape}")
    n, c, h, w = img.data.shape
    if (target_h, target_w) == (h, w) and method == "nearest":
        return Tensor(img.data.copy())
    mh = _axis_matrix(h, target_h, method)
    mw = _axis_matrix(w, target_w, method)
    flat = img.data.reshape(n * c, h, w).astype(np.float64)
    out = np.einsum("th,bhw,sw->bts", mh, flat, mw, optimize=True)
    out = np.clip(out, 0.0, 1.0)
    return Tensor(out.reshape(n, c, target_h, target_w).astype(img.data.dtype))
