"""Two-stage synthetic degradation of ground-truth images into LR inputs.

Each stage applies blur -> resize -> noise -> JPEG with independently
skippable sub-steps; a finalization block then resizes to the exact target
resolution, optionally applies a ring-inducing sinc filter, and applies the
last JPEG step. Every sampled parameter is captured in a record that can be
replayed to reproduce the output bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .jpegsim import jpeg_roundtrip
from .kernels import BlurKernel, gen_gaussian_kernel, gen_sinc_kernel
from .resample import resize
from .rng import SeededRng
from .tensor import ShapeError, Tensor

DEFAULT_KERNEL_SIZES = (7, 9, 11, 13, 15, 17, 19, 21)


@dataclass
class BlurConfig:
    kernel_sizes: tuple = DEFAULT_KERNEL_SIZES
    sigma_range: tuple = (0.2, 3.0)
    rotation_range: tuple = (-math.pi, math.pi)
    weight_iso: float = 0.6
    weight_aniso: float = 0.3
    weight_sinc: float = 0.1
    sinc_cutoff_range: tuple = (math.pi / 3, math.pi)
    skip_prob: float = 0.0


@dataclass
class ResizeConfig:
    scale_range: tuple = (0.15, 1.5)
    weight_nearest: float = 0.0
    weight_bilinear: float = 1.0
    weight_bicubic: float = 1.0
    weight_area: float = 1.0
    skip_prob: float = 0.0


@dataclass
class NoiseConfig:
    weight_gaussian: float = 0.5
    weight_poisson: float = 0.5
    gaussian_sigma_range: tuple = (0.0, 30.0 / 255.0)
    poisson_scale_range: tuple = (0.05, 3.0)
    gray_prob: float = 0.4
    skip_prob: float = 0.0


@dataclass
class JpegConfig:
    quality_range: tuple = (30, 95)
    skip_prob: float = 0.0


@dataclass
class DegradationStageConfig:
    blur: BlurConfig = field(default_factory=BlurConfig)
    resize: ResizeConfig = field(default_factory=ResizeConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    jpeg: JpegConfig = field(default_factory=JpegConfig)

    def validate(self):
        for name, rng_ in (("blur.sigma", self.blur.sigma_range),
                           ("resize.scale", self.resize.scale_range),
                           ("noise.gaussian_sigma", self.noise.gaussian_sigma_range),
                           ("noise.poisson_scale", self.noise.poisson_scale_range),
                           ("jpeg.quality", self.jpeg.quality_range)):
            if rng_[0] > rng_[1]:
                raise ValueError(f"{name} range is empty: {rng_}")
        for name, w in (("blur", (self.blur.weight_iso, self.blur.weight_aniso, self.blur.weight_sinc)),
                        ("resize", (self.resize.weight_nearest, self.resize.weight_bilinear,
                                    self.resize.weight_bicubic, self.resize.weight_area)),
                        ("noise", (self.noise.weight_gaussian, self.noise.weight_poisson))):
            if any(x < 0 for x in w) or sum(w) <= 0:
                raise ValueError(f"{name} weights must be nonnegative and normalizable: {w}")


def _stage2_default() -> DegradationStageConfig:
    return DegradationStageConfig(
        blur=BlurConfig(sigma_range=(0.2, 1.5), skip_prob=0.2),
        resize=ResizeConfig(scale_range=(0.3, 1.2)),
        noise=NoiseConfig(gaussian_sigma_range=(0.0, 25.0 / 255.0),
                          poisson_scale_range=(0.05, 2.5)),
    )


@dataclass
class DegradationConfig:
    stage1: DegradationStageConfig = field(default_factory=DegradationStageConfig)
    stage2: DegradationStageConfig = field(default_factory=_stage2_default)
    final_sinc_probability: float = 0.8
    final_sinc_cutoff_range: tuple = (math.pi / 3, math.pi)
    output_scale: int = 4

    def validate(self):
        self.stage1.validate()
        self.stage2.validate()
        if not (0.0 <= self.final_sinc_probability <= 1.0):
            raise ValueError(f"final_sinc_probability out of [0,1]: {self.final_sinc_probability}")
        lo, hi = self.final_sinc_cutoff_range
        if not (0.0 < lo <= hi <= math.pi):
            raise ValueError(f"final_sinc_cutoff_range must be within (0, pi]: {(lo, hi)}")
        if self.output_scale not in (1, 2, 4):
            raise ValueError(f"output_scale must be 1, 2 or 4, got {self.output_scale}")


def identity_config(output_scale: int = 1) -> DegradationConfig:
    """Config that skips every stochastic sub-step; only the mandatory final
    resize (and a quality-100 JPEG pass) remain."""
    skip_stage = DegradationStageConfig(
        blur=BlurConfig(skip_prob=1.0),
        resize=ResizeConfig(skip_prob=1.0),
        noise=NoiseConfig(skip_prob=1.0),
        jpeg=JpegConfig(quality_range=(100, 100), skip_prob=1.0),
    )
    final_stage = DegradationStageConfig(
        blur=BlurConfig(skip_prob=1.0),
        resize=ResizeConfig(skip_prob=1.0),
        noise=NoiseConfig(skip_prob=1.0),
        jpeg=JpegConfig(quality_range=(100, 100), skip_prob=0.0),
    )
    return DegradationConfig(stage1=skip_stage, stage2=final_stage,
                             final_sinc_probability=0.0, output_scale=output_scale)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def apply_blur(img: Tensor, kernel: BlurKernel) -> Tensor:
    """Per-channel 2-D convolution with reflect padding; shape preserved.

    Border handling is whole-sample reflection (the edge pixel itself is not
    duplicated), i.e. numpy's pad mode "reflect" / ndimage's "mirror".
    """
    if img.data.ndim != 4 or img.data.shape[1] not in (1, 3):
        raise ShapeError(f"apply_blur expects Nx{{1,3}}xHxW, got shape {img.shape}")
    n, c, h, w = img.data.shape
    if kernel.size > 2 * h - 1 or kernel.size > 2 * w - 1:
        raise ShapeError(
            f"kernel size {kernel.size} too large for reflect-padded {h}x{w} image")
    out = np.empty((n, c, h, w), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            out[b, ch] = ndimage.convolve(img.data[b, ch].astype(np.float64),
                                          kernel.weights, mode="mirror")
    return Tensor(out.astype(img.data.dtype))


def add_gaussian_noise(img: Tensor, sigma: float, gray: bool, rng: SeededRng) -> Tensor:
    """x + N(0, sigma^2) per element; one noise plane shared over channels
    when gray. Output clamped to [0, 1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    n, c, h, w = img.data.shape
    if gray:
        z = rng.normals(n * h * w).reshape(n, 1, h, w)
        noise = np.broadcast_to(z, (n, c, h, w))
    else:
        noise = rng.normals(n * c * h * w).reshape(n, c, h, w)
    out = img.data.astype(np.float64) + sigma * noise
    return Tensor(np.clip(out, 0.0, 1.0).astype(img.data.dtype))


def add_poisson_noise(img: Tensor, scale: float, gray: bool, rng: SeededRng) -> Tensor:
    """Signal-dependent shot noise: y = Poisson(x * lam) / lam, lam = 255/scale.

    Larger ``scale`` means fewer events and stronger noise. When gray, the
    noise realization from the channel mean is shared across channels.
    """
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    lam = 255.0 / scale
    x = img.data.astype(np.float64)
    if gray:
        base = x.mean(axis=1, keepdims=True)
        sampled = rng.poisson(base * lam) / lam
        out = x + (sampled - base)
    else:
        out = rng.poisson(x * lam) / lam
    return Tensor(np.clip(out, 0.0, 1.0).astype(img.data.dtype))


# ---------------------------------------------------------------------------
# sampling and the pipeline
# ---------------------------------------------------------------------------

_RESIZE_METHODS = ("nearest", "bilinear", "bicubic", "area")


def _fit_kernel_size(size: int, h: int, w: int, floor: int) -> int:
    """Largest odd kernel <= size that reflect-padding can support, or 0."""
    limit = 2 * min(h, w) - 1
    if limit % 2 == 0:
        limit -= 1
    fitted = min(size, limit)
    return fitted if fitted >= floor else 0


def _sample_blur(cfg: BlurConfig, rng: SeededRng, h: int, w: int) -> dict:
    if rng.uniform() < cfg.skip_prob:
        return {"applied": False}
    fam = rng.choice((cfg.weight_iso, cfg.weight_aniso, cfg.weight_sinc))
    size = cfg.kernel_sizes[rng.randint(0, len(cfg.kernel_sizes) - 1)]
    if fam == 2:
        size = _fit_kernel_size(size, h, w, 7)
        if size == 0:
            return {"applied": False}
        cutoff = rng.uniform(*cfg.sinc_cutoff_range)
        return {"applied": True, "family": "sinc", "size": size, "cutoff": cutoff}
    size = _fit_kernel_size(size, h, w, 3)
    if size == 0:
        return {"applied": False}
    if fam == 0:
        s = rng.uniform(*cfg.sigma_range)
        return {"applied": True, "family": "iso", "size": size,
                "sigma_x": s, "sigma_y": s, "theta": 0.0}
    sx = rng.uniform(*cfg.sigma_range)
    sy = rng.uniform(*cfg.sigma_range)
    theta = rng.uniform(*cfg.rotation_range)
    return {"applied": True, "family": "aniso", "size": size,
            "sigma_x": sx, "sigma_y": sy, "theta": theta}


def _sample_resize(cfg: ResizeConfig, rng: SeededRng, h: int, w: int) -> dict:
    if rng.uniform() < cfg.skip_prob:
        return {"applied": False}
    s = rng.uniform(*cfg.scale_range)
    method = _RESIZE_METHODS[rng.choice((cfg.weight_nearest, cfg.weight_bilinear,
                                         cfg.weight_bicubic, cfg.weight_area))]
    return {"applied": True, "method": method,
            "target_h": max(1, round(h * s)), "target_w": max(1, round(w * s))}


def _sample_noise(cfg: NoiseConfig, rng: SeededRng) -> dict:
    if rng.uniform() < cfg.skip_prob:
        return {"applied": False}
    kind = "gaussian" if rng.choice((cfg.weight_gaussian, cfg.weight_poisson)) == 0 else "poisson"
    gray = rng.uniform() < cfg.gray_prob
    if kind == "gaussian":
        return {"applied": True, "kind": kind, "gray": gray,
                "sigma": rng.uniform(*cfg.gaussian_sigma_range)}
    return {"applied": True, "kind": kind, "gray": gray,
            "scale": rng.uniform(*cfg.poisson_scale_range)}


def _sample_jpeg(cfg: JpegConfig, rng: SeededRng) -> dict:
    if rng.uniform() < cfg.skip_prob:
        return {"applied": False}
    return {"applied": True, "quality": rng.randint(*cfg.quality_range)}


def _blur_from_record(img: Tensor, rec: dict) -> Tensor:
    if not rec["applied"]:
        return img
    if rec["family"] == "sinc":
        k = gen_sinc_kernel(rec["size"], rec["cutoff"])
    else:
        k = gen_gaussian_kernel(rec["size"], rec["sigma_x"], rec["sigma_y"], rec["theta"])
    return apply_blur(img, k)


def _resize_from_record(img: Tensor, rec: dict) -> Tensor:
    if not rec["applied"]:
        return img
    return resize(img, rec["target_h"], rec["target_w"], rec["method"])


def _noise_from_record(img: Tensor, rec: dict, rng: SeededRng) -> Tensor:
    if not rec["applied"]:
        return img
    if rec["kind"] == "gaussian":
        return add_gaussian_noise(img, rec["sigma"], rec["gray"], rng)
    return add_poisson_noise(img, rec["scale"], rec["gray"], rng)


def _jpeg_from_record(img: Tensor, rec: dict) -> Tensor:
    if not rec["applied"]:
        return img
    return jpeg_roundtrip(img, rec["quality"])


def degrade(img_hr: Tensor, config: DegradationConfig, rng: SeededRng):
    """Run the full degradation pipeline on one HR image.

    Returns ``(img_lr, record)`` where the record holds every sampled
    parameter (including the noise sub-stream seed) so that
    :func:`degrade_from_record` reproduces the output exactly. Output dims
    are input dims divided by ``config.output_scale``.
    """
    config.validate()
    n, c, h, w = img_hr.data.shape
    s = config.output_scale
    if h % s or w % s:
        raise ShapeError(f"image {h}x{w} not divisible by output_scale {s}")

    # kernel sizes are clamped to the running image size at sampling time so
    # the record stays replay-exact even for aggressively downscaled stages
    record = {"noise_seed": int(rng.child(0).seed), "stage1": {}, "stage2": {}, "final": {}}
    record["stage1"]["blur"] = _sample_blur(config.stage1.blur, rng, h, w)
    record["stage1"]["resize"] = _sample_resize(config.stage1.resize, rng, h, w)
    record["stage1"]["noise"] = _sample_noise(config.stage1.noise, rng)
    record["stage1"]["jpeg"] = _sample_jpeg(config.stage1.jpeg, rng)
    r1 = record["stage1"]["resize"]
    h1 = r1["target_h"] if r1["applied"] else h
    w1 = r1["target_w"] if r1["applied"] else w
    record["stage2"]["blur"] = _sample_blur(config.stage2.blur, rng, h1, w1)
    record["stage2"]["resize"] = _sample_resize(config.stage2.resize, rng, h1, w1)
    record["stage2"]["noise"] = _sample_noise(config.stage2.noise, rng)

    r2cfg = config.stage2.resize
    final_method = _RESIZE_METHODS[rng.choice((r2cfg.weight_nearest, r2cfg.weight_bilinear,
                                               r2cfg.weight_bicubic, r2cfg.weight_area))]
    record["final"]["resize"] = {"applied": True, "method": final_method,
                                 "target_h": h // s, "target_w": w // s}
    record["final"]["sinc"] = {"applied": False}
    if rng.uniform() < config.final_sinc_probability:
        size = DEFAULT_KERNEL_SIZES[rng.randint(0, len(DEFAULT_KERNEL_SIZES) - 1)]
        size = _fit_kernel_size(size, h // s, w // s, 7)
        if size:
            record["final"]["sinc"] = {"applied": True, "size": size,
                                       "cutoff": rng.uniform(*config.final_sinc_cutoff_range)}
    record["final"]["jpeg"] = _sample_jpeg(config.stage2.jpeg, rng)

    return degrade_from_record(img_hr, record), record


def degrade_from_record(img_hr: Tensor, record: dict) -> Tensor:
    """Replay a degradation record; no sampling happens here."""
    noise_rng = SeededRng(record["noise_seed"])
    out = img_hr

    s1 = record["stage1"]
    out = _blur_from_record(out, s1["blur"])
    out = _resize_from_record(out, s1["resize"])
    out = _noise_from_record(out, s1["noise"], noise_rng)
    out = _jpeg_from_record(out, s1["jpeg"])

    s2 = record["stage2"]
    out = _blur_from_record(out, s2["blur"])
    out = _resize_from_record(out, s2["resize"])
    out = _noise_from_record(out, s2["noise"], noise_rng)

    fin = record["final"]
    out = _resize_from_record(out, fin["resize"])
    if fin["sinc"]["applied"]:
        out = apply_blur(out, gen_sinc_kernel(fin["sinc"]["size"], fin["sinc"]["cutoff"]))
    out = _jpeg_from_record(out, fin["jpeg"])
    return Tensor(np.clip(out.data, 0.0, 1.0))


def record_to_line(record: dict) -> str:
    """One-line UTF-8 serialization of a record for audit logs."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def record_from_line(line: str) -> dict:
    return json.loads(line)
