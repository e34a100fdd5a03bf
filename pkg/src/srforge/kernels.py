"""Blur kernel synthesis: rotated (an)isotropic Gaussians and 2-D sinc filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j1


@dataclass(frozen=True)
class BlurKernel:
    """Square odd-sized kernel whose weights sum to 1."""

    size: int
    weights: np.ndarray

    def __post_init__(self):
        if self.weights.shape != (self.size, self.size):
            raise ValueError(
                f"kernel weights shape {self.weights.shape} != ({self.size}, {self.size})")


def _grid(size: int):
    half = (size - 1) / 2.0
    ax = np.arange(size, dtype=np.float64) - half
    return np.meshgrid(ax, ax, indexing="xy")


def gen_gaussian_kernel(size: int, sigma_x: float, sigma_y: float,
                        theta: float = 0.0) -> BlurKernel:
    """Sampled 2-D Gaussian, rotated by ``theta`` radians, normalized to sum 1.

    With sigma_x == sigma_y the density is rotation invariant, so theta has
    no effect and the kernel is isotropic.
    """
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be positive, got ({sigma_x}, {sigma_y})")
    xx, yy = _grid(size)
    ct, st = np.cos(theta), np.sin(theta)
    xr = ct * xx + st * yy
    yr = -st * xx + ct * yy
    w = np.exp(-0.5 * ((xr / sigma_x) ** 2 + (yr / sigma_y) ** 2))
    w /= w.sum()
    return BlurKernel(size, w)


def gen_sinc_kernel(size: int, cutoff: float) -> BlurKernel:
    """Radially symmetric ideal low-pass kernel at angular frequency ``cutoff``.

    The continuous impulse response is cutoff * J1(cutoff*r) / (2*pi*r) with
    central value cutoff^2 / (4*pi); sampling it on the grid and normalizing
    keeps constants unchanged while the negative side lobes synthesize
    ringing and overshoot on sharp edges.
    """
    if size < 7 or size % 2 == 0:
        raise ValueError(f"sinc kernel size must be odd and >= 7, got {size}")
    if not (0.0 < cutoff <= np.pi):
        raise ValueError(f"cutoff must be in (0, pi], got {cutoff}")
    xx, yy = _grid(size)
    r = np.hypot(xx, yy)
    w = np.empty_like(r)
    center = r == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = cutoff * j1(cutoff * r) / (2.0 * np.pi * r)
    w[center] = cutoff * cutoff / (4.0 * np.pi)
    w /= w.sum()
    return BlurKernel(size, w)
