"""PSNR/SSIM metrics and the deterministic degradation-evaluation protocols.

A protocol turns each ground-truth image into a (GT, LR) pair: optional GT
rescale, then downsampling by a fixed factor, then Gaussian blur. The model
under test upscales LR back and is scored against GT in the [0, 255]
convention after 8-bit rounding. No random sampling is involved, so two
runs of the same evaluation are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .checkpoint import load_checkpoint
from .degradation import apply_blur
from .imageio import ImageIOError, list_images, read_image
from .kernels import gen_gaussian_kernel
from .networks import Generator, GeneratorConfig
from .resample import resize
from .tensor import ShapeError, Tensor

_LUMA = (0.299, 0.587, 0.114)


@dataclass
class EvalProtocol:
    name: str
    gt_resize: tuple | None  # (h, w, method) or None
    down_factor: int
    down_method: str
    blur_sigma: float
    blur_kernel_size: int
    upscale: int

    def validate(self):
        if self.upscale != self.down_factor:
            raise ValueError(
                f"upscale {self.upscale} must equal down_factor {self.down_factor}")
        if self.blur_kernel_size % 2 == 0:
            raise ValueError(f"blur kernel size must be odd, got {self.blur_kernel_size}")


def drive_protocol(blur_sigma: float = 1.0, blur_kernel_size: int = 7) -> EvalProtocol:
    """Retinal-style protocol: GT rescaled to 512x512 (lanczos), 2x bicubic
    downsampling, then Gaussian blur; 2x upscaling."""
    return EvalProtocol("drive", (512, 512, "lanczos"), 2, "bicubic",
                        blur_sigma, blur_kernel_size, 2)


def nih_protocol(blur_sigma: float = 1.0, blur_kernel_size: int = 7) -> EvalProtocol:
    """Chest X-ray-style protocol: native GT, 4x bicubic downsampling, then
    Gaussian blur; 4x upscaling."""
    return EvalProtocol("nih", None, 4, "bicubic", blur_sigma, blur_kernel_size, 4)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(a, b, peak: float = 255.0) -> float:
    """10*log10(peak^2 / MSE) over all channels and pixels; inf when equal."""
    da, db = _as_array(a), _as_array(b)
    if da.shape != db.shape:
        raise ShapeError(f"psnr: shape mismatch {da.shape} vs {db.shape}")
    mse = float(np.mean((da.astype(np.float64) - db.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _luminance(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr.astype(np.float64)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 3 and arr.shape[0] == 1:
        return arr[0].astype(np.float64)
    if arr.ndim == 3 and arr.shape[0] == 3:
        r, g, b = arr.astype(np.float64)
        return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b
    raise ShapeError(f"cannot take luminance of shape {arr.shape}")


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (ax / sigma) ** 2)
    return w / w.sum()


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, valid windows only.

    RGB inputs are converted to the 0.299/0.587/0.114 luminance channel.
    """
    la = _luminance(_as_array(a))
    lb = _luminance(_as_array(b))
    if la.shape != lb.shape:
        raise ShapeError(f"ssim: shape mismatch {la.shape} vs {lb.shape}")
    win = 11
    if la.shape[0] < win or la.shape[1] < win:
        raise ShapeError(f"ssim: image {la.shape} smaller than the {win}x{win} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = _gaussian_window(win, 1.5)
    half = win // 2

    def filt(x):
        y = correlate1d(x, g, axis=0)
        y = correlate1d(y, g, axis=1)
        return y[half:-half, half:-half]

    mu_a = filt(la)
    mu_b = filt(lb)
    saa = filt(la * la) - mu_a * mu_a
    sbb = filt(lb * lb) - mu_b * mu_b
    sab = filt(la * lb) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# protocol execution
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    protocol: str
    checkpoint: str
    header: dict
    per_image: list  # (name, psnr_db, ssim_value)
    skipped: list  # (name, reason)
    mean_psnr: float
    mean_ssim: float


def quantize8(img01: np.ndarray) -> np.ndarray:
    """Round a [0,1] image to its 8-bit levels, returned on the [0,255] scale."""
    return np.floor(np.clip(img01, 0.0, 1.0) * 255.0 + 0.5)


def degrade_for_protocol(gt01: Tensor, protocol: EvalProtocol) -> Tensor:
    """GT -> LR: downsample by the fixed factor, then Gaussian blur."""
    _, _, h, w = gt01.data.shape
    f = protocol.down_factor
    lr = resize(gt01, h // f, w // f, protocol.down_method)
    kernel = gen_gaussian_kernel(protocol.blur_kernel_size, protocol.blur_sigma,
                                 protocol.blur_sigma, 0.0)
    return apply_blur(lr, kernel)


def bicubic_sr_fn(scale: int):
    """Reference baseline: plain bicubic upscaling."""
    def fn(lr: Tensor) -> Tensor:
        _, _, h, w = lr.data.shape
        return resize(lr, h * scale, w * scale, "bicubic")
    return fn


def generator_sr_fn(checkpoint_path, expected_scale: int | None = None):
    """Load a generator from a checkpoint (EMA weights when present)."""
    tensors, meta = load_checkpoint(checkpoint_path)
    if "generator_config" not in meta:
        raise ValueError(f"{checkpoint_path}: no generator_config echo in metadata")
    cfg = GeneratorConfig(**meta["generator_config"])
    if expected_scale is not None and cfg.scale != expected_scale:
        raise ValueError(
            f"{checkpoint_path}: checkpoint scale {cfg.scale} != protocol scale {expected_scale}")
    gen = Generator(cfg, seed=0)
    prefix = "ema." if any(n.startswith("ema.") for n in tensors) else "generator."
    scoped = {n: t for n, t in tensors.items() if n.startswith(prefix)}
    problems = []
    for name, p in gen.params.items():
        key = prefix + name
        if key not in scoped:
            problems.append(f"missing tensor {key}")
        elif tuple(scoped[key].shape) != p.value.data.shape:
            problems.append(f"shape mismatch {key}: {tuple(scoped[key].shape)} vs {p.value.data.shape}")
    if problems:
        raise ShapeError("checkpoint does not match architecture:\n  " + "\n  ".join(problems))
    for name, p in gen.params.items():
        p.value.data[...] = scoped[prefix + name].astype(np.float32)

    def fn(lr: Tensor) -> Tensor:
        out = gen(lr)
        return Tensor(np.clip(out.data, 0.0, 1.0))
    return fn


def evaluate_images(sr_fn, gt_dir, protocol: EvalProtocol, checkpoint_label: str) -> EvalReport:
    """Score ``sr_fn`` over every readable PNG in ``gt_dir`` under a protocol."""
    protocol.validate()
    paths = list_images(gt_dir)
    if not paths:
        raise ValueError(f"no PNG images found in {gt_dir}")
    per_image = []
    skipped = []
    for path in paths:
        try:
            img = read_image(path)
        except ImageIOError as e:
            skipped.append((path.name, str(e)))
            continue
        if protocol.gt_resize is not None:
            h, w, method = protocol.gt_resize
            img = resize(img, h, w, method)
        # crop so the LR side is a multiple of 4, which every generator
        # scale mode (and the plain bicubic baseline) can consume
        f = 4 * protocol.down_factor
        _, _, h, w = img.data.shape
        if h % f or w % f:
            img = Tensor(img.data[:, :, : h - h % f, : w - w % f])
        gt255 = quantize8(img.data)
        lr = degrade_for_protocol(Tensor(gt255 / 255.0), protocol)
        sr = sr_fn(lr)
        sr255 = quantize8(sr.data)
        if sr255.shape != gt255.shape:
            skipped.append((path.name, f"model output {sr255.shape} != GT {gt255.shape}"))
            continue
        per_image.append((path.name, psnr(sr255, gt255, 255.0), ssim(sr255, gt255, 255.0)))
    if not per_image:
        raise ValueError(f"no image in {gt_dir} could be evaluated")
    mean_psnr = sum(p for _, p, _ in per_image) / len(per_image)
    mean_ssim = sum(s for _, _, s in per_image) / len(per_image)
    header = {
        "protocol": protocol.name,
        "checkpoint": checkpoint_label,
        "scale": protocol.upscale,
        "down_method": protocol.down_method,
        "blur_sigma": protocol.blur_sigma,
        "blur_kernel": protocol.blur_kernel_size,
        "gt_resize": ("none" if protocol.gt_resize is None
                      else f"{protocol.gt_resize[0]}x{protocol.gt_resize[1]}:{protocol.gt_resize[2]}"),
    }
    return EvalReport(protocol.name, checkpoint_label, header, per_image, skipped,
                      mean_psnr, mean_ssim)


def run_protocol(model_checkpoint, gt_dir, protocol: EvalProtocol,
                 out_path=None) -> EvalReport:
    """Full evaluation: load the model (or the bicubic baseline for
    ``"bicubic"``/None), score the directory, optionally write the report."""
    protocol.validate()
    if model_checkpoint is None or model_checkpoint == "bicubic":
        sr_fn = bicubic_sr_fn(protocol.upscale)
        label = "bicubic"
    else:
        sr_fn = generator_sr_fn(model_checkpoint, protocol.upscale)
        label = str(model_checkpoint)
    report = evaluate_images(sr_fn, gt_dir, protocol, label)
    if out_path is not None:
        Path(out_path).write_text(format_report(report), encoding="utf-8")
    return report


def _fmt_psnr(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:.4f}"


def format_report(report: EvalReport) -> str:
    """UTF-8 report: '#' header lines, one TSV line per image, then MEAN."""
    lines = [f"# {key}\t{value}" for key, value in report.header.items()]
    for name, reason in report.skipped:
        lines.append(f"# skipped\t{name}\t{reason}")
    lines.append("image\tpsnr\tssim")
    for name, p, s in report.per_image:
        lines.append(f"{name}\t{_fmt_psnr(p)}\t{s:.6f}")
    lines.append(f"MEAN\t{_fmt_psnr(report.mean_psnr)}\t{report.mean_ssim:.6f}")
    return "\n".join(lines) + "\n"
