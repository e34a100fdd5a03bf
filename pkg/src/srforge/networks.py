"""RRDB generator and spectrally normalized U-Net discriminator.

The generator body is always a x4 network: 1x and 2x variants shrink the
input spatially with pixel_unshuffle (by 4 / by 2) and widen the channels
instead. The discriminator gives a per-pixel logit map at input resolution
via a three-level encoder/decoder with additive skips.

Canonical configurations reproduce the reference parameter counts exactly:
16,697,987 for the generator and 4,376,897 for the discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SeededRng
from .tensor import (Parameter, ShapeError, Tensor, add, bilinear_upsample2x,
                     concat_channels, conv2d, leaky_relu, mul, nearest_upsample,
                     pixel_unshuffle, reciprocal, sum_all)

LRELU_SLOPE = 0.2


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 3
    num_features: int = 64
    num_rrdb_blocks: int = 23
    growth_channels: int = 32
    scale: int = 4
    residual_beta: float = 0.2

    def validate(self):
        if self.scale not in (1, 2, 4):
            raise ValueError(f"scale must be 1, 2 or 4, got {self.scale}")
        if min(self.in_channels, self.out_channels, self.num_features,
               self.growth_channels) < 1 or self.num_rrdb_blocks < 1:
            raise ValueError(f"invalid generator config {self}")

    def to_dict(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "num_features": self.num_features, "num_rrdb_blocks": self.num_rrdb_blocks,
                "growth_channels": self.growth_channels, "scale": self.scale,
                "residual_beta": self.residual_beta}


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    num_features: int = 64
    spectral_norm_iterations: int = 1

    def validate(self):
        if self.in_channels < 1 or self.num_features < 1 or self.spectral_norm_iterations < 1:
            raise ValueError(f"invalid discriminator config {self}")

    def to_dict(self):
        return {"in_channels": self.in_channels, "num_features": self.num_features,
                "spectral_norm_iterations": self.spectral_norm_iterations}


def kaiming_conv_init(rng: SeededRng, cout: int, cin: int, k: int, gain: float) -> np.ndarray:
    fan_in = cin * k * k
    std = gain * np.sqrt(2.0 / fan_in)
    w = rng.normals(cout * cin * k * k).reshape(cout, cin, k, k) * std
    return w.astype(np.float32)


class ConvLayer:
    """One conv with named weight/bias parameters registered on the model."""

    def __init__(self, params: dict, rng: SeededRng, name: str, cin: int, cout: int,
                 ksize: int = 3, stride: int = 1, bias: bool = True, gain: float = 1.0):
        self.stride = stride
        self.padding = (ksize - 1) // 2
        self.weight = Parameter(f"{name}.weight", kaiming_conv_init(rng, cout, cin, ksize, gain))
        params[self.weight.name] = self.weight
        self.bias = None
        if bias:
            self.bias = Parameter(f"{name}.bias", np.zeros(cout, dtype=np.float32))
            params[self.bias.name] = self.bias

    def __call__(self, x: Tensor, weight: Tensor | None = None) -> Tensor:
        w = weight if weight is not None else self.weight.value
        b = self.bias.value if self.bias is not None else None
        return conv2d(x, w, b, stride=self.stride, padding=self.padding)


class _DenseBlock:
    """Five 3x3 convs with dense concatenation; output scaled and added back."""

    def __init__(self, params, rng, name, nf, gc, beta):
        self.beta = beta
        self.convs = [
            ConvLayer(params, rng, f"{name}.conv1", nf, gc, gain=0.1),
            ConvLayer(params, rng, f"{name}.conv2", nf + gc, gc, gain=0.1),
            ConvLayer(params, rng, f"{name}.conv3", nf + 2 * gc, gc, gain=0.1),
            ConvLayer(params, rng, f"{name}.conv4", nf + 3 * gc, gc, gain=0.1),
            ConvLayer(params, rng, f"{name}.conv5", nf + 4 * gc, nf, gain=0.1),
        ]

    def __call__(self, x):
        feats = [x]
        for conv in self.convs[:-1]:
            feats.append(leaky_relu(conv(concat_channels(feats) if len(feats) > 1 else x),
                                    LRELU_SLOPE))
        out = self.convs[-1](concat_channels(feats))
        return add(x, out * self.beta)


class _RRDB:
    """Three chained dense blocks with an outer scaled residual."""

    def __init__(self, params, rng, name, nf, gc, beta):
        self.beta = beta
        self.rdb1 = _DenseBlock(params, rng, f"{name}.rdb1", nf, gc, beta)
        self.rdb2 = _DenseBlock(params, rng, f"{name}.rdb2", nf, gc, beta)
        self.rdb3 = _DenseBlock(params, rng, f"{name}.rdb3", nf, gc, beta)

    def __call__(self, x):
        out = self.rdb3(self.rdb2(self.rdb1(x)))
        return add(x, out * self.beta)


class Generator:
    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        rng = SeededRng(seed)
        nf, gc = cfg.num_features, cfg.growth_channels
        in_ch = cfg.in_channels * {4: 1, 2: 4, 1: 16}[cfg.scale]
        self.conv_first = ConvLayer(self.params, rng, "conv_first", in_ch, nf, gain=0.1)
        self.body = [_RRDB(self.params, rng, f"body.{i}", nf, gc, cfg.residual_beta)
                     for i in range(cfg.num_rrdb_blocks)]
        self.conv_body = ConvLayer(self.params, rng, "conv_body", nf, nf, gain=0.1)
        self.conv_up1 = ConvLayer(self.params, rng, "conv_up1", nf, nf, gain=0.1)
        self.conv_up2 = ConvLayer(self.params, rng, "conv_up2", nf, nf, gain=0.1)
        self.conv_hr = ConvLayer(self.params, rng, "conv_hr", nf, nf, gain=0.1)
        self.conv_last = ConvLayer(self.params, rng, "conv_last", nf, cfg.out_channels, gain=0.1)

    def forward(self, lr: Tensor) -> Tensor:
        s = self.cfg.scale
        n, c, h, w = lr.data.shape
        if c != self.cfg.in_channels:
            raise ShapeError(f"generator expects {self.cfg.in_channels} channels, got {c}")
        if s == 2 and (h % 2 or w % 2):
            raise ShapeError(f"scale-2 input dims must be even, got {h}x{w}")
        if s == 1 and (h % 4 or w % 4):
            raise ShapeError(f"scale-1 input dims must be divisible by 4, got {h}x{w}")
        if s == 2:
            feat = pixel_unshuffle(lr, 2)
        elif s == 1:
            feat = pixel_unshuffle(lr, 4)
        else:
            feat = lr
        feat = self.conv_first(feat)
        body = feat
        for block in self.body:
            body = block(body)
        feat = add(feat, self.conv_body(body))
        feat = leaky_relu(self.conv_up1(nearest_upsample(feat, 2)), LRELU_SLOPE)
        feat = leaky_relu(self.conv_up2(nearest_upsample(feat, 2)), LRELU_SLOPE)
        return self.conv_last(leaky_relu(self.conv_hr(feat), LRELU_SLOPE))

    __call__ = forward

    def astype(self, dtype):
        for p in self.params.values():
            p.astype(dtype)
        return self


def spectral_normalize(weight: Tensor, u: np.ndarray, iterations: int = 1):
    """Divide a weight by its power-iteration spectral norm estimate.

    The weight is viewed as (out_channels, rest). ``iterations`` power steps
    refine (u, v); sigma = u^T W v is then rebuilt through tape ops so
    gradients flow through the normalization. Returns the normalized weight
    and the updated u for the caller to persist.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    co = weight.data.shape[0]
    w2 = weight.data.reshape(co, -1)
    eps = 1e-12
    u_vec = u.astype(w2.dtype, copy=True)
    for _ in range(iterations):
        v_vec = w2.T @ u_vec
        v_vec /= (np.linalg.norm(v_vec) + eps)
        u_vec = w2 @ v_vec
        u_vec /= (np.linalg.norm(u_vec) + eps)
    outer = np.outer(u_vec, v_vec).reshape(weight.data.shape)
    sigma = sum_all(mul(weight, Tensor(outer.astype(w2.dtype))))
    normalized = mul(weight, reciprocal(sigma, eps=eps))
    return normalized, u_vec


class Discriminator:
    """U-Net shaped per-pixel critic; every conv weight is spectrally normalized."""

    def __init__(self, cfg: DiscriminatorConfig, seed: int = 1):
        cfg.validate()
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        rng = SeededRng(seed)
        nf = cfg.num_features
        p, r = self.params, rng
        self.conv0 = ConvLayer(p, r, "conv0", cfg.in_channels, nf, 3, 1, bias=True)
        self.conv1 = ConvLayer(p, r, "conv1", nf, nf * 2, 4, 2, bias=False)
        self.conv2 = ConvLayer(p, r, "conv2", nf * 2, nf * 4, 4, 2, bias=False)
        self.conv3 = ConvLayer(p, r, "conv3", nf * 4, nf * 8, 4, 2, bias=False)
        self.conv4 = ConvLayer(p, r, "conv4", nf * 8, nf * 4, 3, 1, bias=False)
        self.conv5 = ConvLayer(p, r, "conv5", nf * 4, nf * 2, 3, 1, bias=False)
        self.conv6 = ConvLayer(p, r, "conv6", nf * 2, nf, 3, 1, bias=False)
        self.conv7 = ConvLayer(p, r, "conv7", nf, nf, 3, 1, bias=False)
        self.conv8 = ConvLayer(p, r, "conv8", nf, nf, 3, 1, bias=False)
        self.conv9 = ConvLayer(p, r, "conv9", nf, 1, 3, 1, bias=True)
        self.sn_state: dict[str, np.ndarray] = {}
        for name, param in self.params.items():
            if name.endswith(".weight"):
                cout = param.value.data.shape[0]
                uv = rng.normals(cout)
                self.sn_state[name] = (uv / (np.linalg.norm(uv) + 1e-12)).astype(np.float32)

    def _sn_conv(self, layer: ConvLayer, x: Tensor, update: bool) -> Tensor:
        name = layer.weight.name
        w_norm, u_new = spectral_normalize(layer.weight.value, self.sn_state[name],
                                           self.cfg.spectral_norm_iterations)
        if update:
            self.sn_state[name] = u_new
        return layer(x, weight=w_norm)

    def forward(self, img: Tensor, update_sn: bool = True) -> Tensor:
        n, c, h, w = img.data.shape
        if h % 8 or w % 8:
            raise ShapeError(f"discriminator input dims must be divisible by 8, got {h}x{w}")
        sl = LRELU_SLOPE
        x0 = leaky_relu(self._sn_conv(self.conv0, img, update_sn), sl)
        x1 = leaky_relu(self._sn_conv(self.conv1, x0, update_sn), sl)
        x2 = leaky_relu(self._sn_conv(self.conv2, x1, update_sn), sl)
        x3 = leaky_relu(self._sn_conv(self.conv3, x2, update_sn), sl)
        u3 = bilinear_upsample2x(x3)
        x4 = add(leaky_relu(self._sn_conv(self.conv4, u3, update_sn), sl), x2)
        u4 = bilinear_upsample2x(x4)
        x5 = add(leaky_relu(self._sn_conv(self.conv5, u4, update_sn), sl), x1)
        u5 = bilinear_upsample2x(x5)
        x6 = add(leaky_relu(self._sn_conv(self.conv6, u5, update_sn), sl), x0)
        out = leaky_relu(self._sn_conv(self.conv7, x6, update_sn), sl)
        out = leaky_relu(self._sn_conv(self.conv8, out, update_sn), sl)
        return self._sn_conv(self.conv9, out, update_sn)

    __call__ = forward

    def astype(self, dtype):
        for p in self.params.values():
            p.astype(dtype)
        for name in self.sn_state:
            self.sn_state[name] = self.sn_state[name].astype(dtype)
        return self


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    return Generator(cfg, seed=seed)


def build_discriminator(cfg: DiscriminatorConfig, seed: int = 1) -> Discriminator:
    return Discriminator(cfg, seed=seed)


def count_params(model) -> int:
    """Total trainable element count (spectral-norm u vectors excluded)."""
    return sum(p.value.data.size for p in model.params.values())
