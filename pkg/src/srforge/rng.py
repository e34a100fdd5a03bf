"""Portable, counter-based pseudo-random number generation.

Every random decision in this package flows through :class:`SeededRng`, a
splitmix64 generator addressed by a 64-bit counter. The i-th raw value of a
stream is ``mix64(seed + (i + 1) * GOLDEN)``, which makes bulk generation
vectorizable and makes a stream a pure function of ``(seed, counter)``: no
hidden state, no platform-native generators. Child streams are derived by
hashing the parent seed with an index, so per-image / per-iteration work can
run in any order (or in parallel) and still reproduce bit-identically.
"""

from __future__ import annotations

import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_CHILD = np.uint64(0xC2B2AE3D27D4EB4F)

_U64_INV = float(2.0**-53)


def mix64(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer: bijective avalanche mix of a 64-bit value."""
    z = np.uint64(z) if np.isscalar(z) or isinstance(z, int) else z
    with np.errstate(over="ignore"):  # 64-bit wraparound is the point
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _mix64_inplace(z: np.ndarray, scratch: np.ndarray) -> np.ndarray:
    # identical to mix64 but reuses buffers; out-of-place uint64 ops in numpy
    # pay a fresh large allocation per step
    np.right_shift(z, np.uint64(30), out=scratch)
    z ^= scratch
    z *= _MIX1
    np.right_shift(z, np.uint64(27), out=scratch)
    z ^= scratch
    z *= _MIX2
    np.right_shift(z, np.uint64(31), out=scratch)
    z ^= scratch
    return z


class SeededRng:
    """Deterministic random stream addressed by (seed, counter).

    The same seed always yields the same sequence of draws regardless of
    platform or process. ``child(i)`` derives an independent stream; the
    derivation is ``mix64(seed ^ mix64((i + 1) * CHILD_CONSTANT))`` and is
    documented here so external tools can reproduce it.
    """

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = np.uint64(0)

    def child(self, index: int) -> "SeededRng":
        """Independent stream for sub-task ``index`` (image, iteration, ...)."""
        if index < 0:
            raise ValueError(f"child index must be >= 0, got {index}")
        with np.errstate(over="ignore"):
            tag = mix64(np.uint64((index + 1) & 0xFFFFFFFFFFFFFFFF) * _CHILD)
        return SeededRng(int(mix64(self.seed ^ tag)))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 values of the stream."""
        z = np.arange(1, n + 1, dtype=np.uint64)
        z += self._counter
        z *= _GOLDEN
        z += self.seed
        self._counter += np.uint64(n)
        return _mix64_inplace(z, np.empty_like(z))

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` float64 values uniform on [0, 1), 53-bit resolution."""
        z = self.raw(n)
        z >>= np.uint64(11)
        u = z.astype(np.float64)
        u *= _U64_INV
        return u

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = float(self.uniforms(1)[0])
        return lo + (hi - lo) * u

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normal values via Box-Muller (pairs of uniforms)."""
        m = (n + 1) // 2
        u = self.uniforms(2 * m)
        u1 = u[:m]
        u2 = u[m:]
        np.subtract(1.0, u1, out=u1)  # in (0, 1], keeps log() finite
        np.log(u1, out=u1)
        u1 *= -2.0
        np.sqrt(u1, out=u1)  # Box-Muller radius
        u2 *= 2.0 * math.pi
        out = np.empty(2 * m, dtype=np.float64)
        np.cos(u2, out=out[:m])
        np.sin(u2, out=out[m:])
        out[:m] *= u1
        out[m:] *= u1
        return out[:n]

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        u = self.uniforms(1)[0]
        return lo + min(int(u * (hi - lo + 1)), hi - lo)

    def choice(self, weights) -> int:
        """Index sampled proportionally to nonnegative ``weights``."""
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        cdf = np.cumsum(w / w.sum())
        u = self.uniforms(1)[0]
        return int(np.searchsorted(cdf, u, side="right").clip(0, len(w) - 1))

    def poisson(self, lam: np.ndarray) -> np.ndarray:
        """Elementwise Poisson draws for a nonnegative rate array.

        Consumes exactly one uniform and one normal per element, whatever
        branch each element takes, so the stream layout does not depend on
        the data. Rates below 15 use exact inverse-CDF inversion; larger
        rates use the rounded normal approximation.
        """
        lam = np.asarray(lam, dtype=np.float64)
        flat = lam.reshape(-1)
        n = flat.size
        u = self.uniforms(n)
        z = self.normals(n)

        out = np.zeros(n, dtype=np.float64)
        small = flat < 15.0
        if np.any(small):
            ls = flat[small]
            us = u[small]
            k = np.zeros(ls.shape, dtype=np.float64)
            p = np.exp(-ls)
            cdf = p.copy()
            active = us > cdf
            step = 0
            while np.any(active) and step < 64:
                step += 1
                p = p * ls / step
                cdf = cdf + p
                k = np.where(active, step, k)
                active = us > cdf
            out[small] = k
        big = ~small
        if np.any(big):
            lb = flat[big]
            out[big] = np.maximum(0.0, np.round(lb + np.sqrt(lb) * z[big]))
        return out.reshape(lam.shape)
