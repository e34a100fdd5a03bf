"""UTF-8 INI configuration files for degradation, training and evaluation.

One file may carry any subset of the sections below; loaders read the
sections they own and leave the built-in defaults for everything else.

    [stage1.blur]     kernel_sizes, sigma_min/max, rotation_min/max,
                      weight_iso/aniso/sinc, sinc_cutoff_min/max, skip_prob
    [stage1.resize]   scale_min/max, weight_nearest/bilinear/bicubic/area, skip_prob
    [stage1.noise]    weight_gaussian/poisson, gaussian_sigma_min/max,
                      poisson_scale_min/max, gray_prob, skip_prob
    [stage1.jpeg]     quality_min/max, skip_prob
    [stage2.*]        same keys as stage1
    [final]           sinc_prob, sinc_cutoff_min/max, output_scale
    [train]           learning_rate, adam_beta1/2, batch_size, total_iterations,
                      w_l1, w_perceptual, w_gan, ema_decay, patch_size, seed,
                      save_interval, gan_variant, feature_weights
    [evaluate]        blur_sigma, blur_kernel_size, down_method
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .degradation import (BlurConfig, DegradationConfig, DegradationStageConfig,
                          JpegConfig, NoiseConfig, ResizeConfig)
from .training import TrainConfig


def _read(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as f:
        parser.read_file(f)
    return parser


def _set_range(section, lo_key, hi_key, current):
    lo = section.getfloat(lo_key, current[0])
    hi = section.getfloat(hi_key, current[1])
    return (lo, hi)


def _apply_stage(parser, stage: DegradationStageConfig, prefix: str):
    if parser.has_section(f"{prefix}.blur"):
        s = parser[f"{prefix}.blur"]
        b: BlurConfig = stage.blur
        if "kernel_sizes" in s:
            b.kernel_sizes = tuple(int(v) for v in s["kernel_sizes"].split(","))
        b.sigma_range = _set_range(s, "sigma_min", "sigma_max", b.sigma_range)
        b.rotation_range = _set_range(s, "rotation_min", "rotation_max", b.rotation_range)
        b.sinc_cutoff_range = _set_range(s, "sinc_cutoff_min", "sinc_cutoff_max",
                                         b.sinc_cutoff_range)
        b.weight_iso = s.getfloat("weight_iso", b.weight_iso)
        b.weight_aniso = s.getfloat("weight_aniso", b.weight_aniso)
        b.weight_sinc = s.getfloat("weight_sinc", b.weight_sinc)
        b.skip_prob = s.getfloat("skip_prob", b.skip_prob)
    if parser.has_section(f"{prefix}.resize"):
        s = parser[f"{prefix}.resize"]
        r: ResizeConfig = stage.resize
        r.scale_range = _set_range(s, "scale_min", "scale_max", r.scale_range)
        r.weight_nearest = s.getfloat("weight_nearest", r.weight_nearest)
        r.weight_bilinear = s.getfloat("weight_bilinear", r.weight_bilinear)
        r.weight_bicubic = s.getfloat("weight_bicubic", r.weight_bicubic)
        r.weight_area = s.getfloat("weight_area", r.weight_area)
        r.skip_prob = s.getfloat("skip_prob", r.skip_prob)
    if parser.has_section(f"{prefix}.noise"):
        s = parser[f"{prefix}.noise"]
        n: NoiseConfig = stage.noise
        n.weight_gaussian = s.getfloat("weight_gaussian", n.weight_gaussian)
        n.weight_poisson = s.getfloat("weight_poisson", n.weight_poisson)
        n.gaussian_sigma_range = _set_range(s, "gaussian_sigma_min", "gaussian_sigma_max",
                                            n.gaussian_sigma_range)
        n.poisson_scale_range = _set_range(s, "poisson_scale_min", "poisson_scale_max",
                                           n.poisson_scale_range)
        n.gray_prob = s.getfloat("gray_prob", n.gray_prob)
        n.skip_prob = s.getfloat("skip_prob", n.skip_prob)
    if parser.has_section(f"{prefix}.jpeg"):
        s = parser[f"{prefix}.jpeg"]
        j: JpegConfig = stage.jpeg
        j.quality_range = (s.getint("quality_min", j.quality_range[0]),
                           s.getint("quality_max", j.quality_range[1]))
        j.skip_prob = s.getfloat("skip_prob", j.skip_prob)


def load_degradation_config(path, output_scale: int | None = None) -> DegradationConfig:
    """Degradation config from an INI file; missing keys keep defaults."""
    cfg = DegradationConfig()
    if path is not None and Path(path).exists():
        parser = _read(path)
        _apply_stage(parser, cfg.stage1, "stage1")
        _apply_stage(parser, cfg.stage2, "stage2")
        if parser.has_section("final"):
            s = parser["final"]
            cfg.final_sinc_probability = s.getfloat("sinc_prob", cfg.final_sinc_probability)
            cfg.final_sinc_cutoff_range = _set_range(s, "sinc_cutoff_min", "sinc_cutoff_max",
                                                     cfg.final_sinc_cutoff_range)
            cfg.output_scale = s.getint("output_scale", cfg.output_scale)
    if output_scale is not None:
        cfg.output_scale = output_scale
    cfg.validate()
    return cfg


def load_train_config(path) -> TrainConfig:
    """Training config from the [train] section; missing keys keep defaults."""
    cfg = TrainConfig()
    if path is not None and Path(path).exists():
        parser = _read(path)
        if parser.has_section("train"):
            s = parser["train"]
            cfg.learning_rate = s.getfloat("learning_rate", cfg.learning_rate)
            cfg.adam_beta1 = s.getfloat("adam_beta1", cfg.adam_beta1)
            cfg.adam_beta2 = s.getfloat("adam_beta2", cfg.adam_beta2)
            cfg.batch_size = s.getint("batch_size", cfg.batch_size)
            cfg.total_iterations = s.getint("total_iterations", cfg.total_iterations)
            cfg.loss_weights = {
                "l1": s.getfloat("w_l1", cfg.loss_weights["l1"]),
                "perceptual": s.getfloat("w_perceptual", cfg.loss_weights["perceptual"]),
                "gan": s.getfloat("w_gan", cfg.loss_weights["gan"]),
            }
            cfg.ema_decay = s.getfloat("ema_decay", cfg.ema_decay)
            cfg.patch_size = s.getint("patch_size", cfg.patch_size)
            cfg.seed = s.getint("seed", cfg.seed)
            cfg.save_interval = s.getint("save_interval", cfg.save_interval)
            cfg.gan_variant = s.get("gan_variant", cfg.gan_variant)
            cfg.feature_weights = s.get("feature_weights", cfg.feature_weights)
    cfg.validate()
    return cfg


def load_eval_overrides(path) -> dict:
    """Evaluation overrides from the [evaluate] section."""
    out: dict = {}
    if path is not None and Path(path).exists():
        parser = _read(path)
        if parser.has_section("evaluate"):
            s = parser["evaluate"]
            if "blur_sigma" in s:
                out["blur_sigma"] = s.getfloat("blur_sigma")
            if "blur_kernel_size" in s:
                out["blur_kernel_size"] = s.getint("blur_kernel_size")
            if "down_method" in s:
                out["down_method"] = s.get("down_method")
    return out
