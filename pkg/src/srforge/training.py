"""Fine-tuning engine: losses, Adam, EMA, the GAN step and checkpoint resume.

A training run is bit-reproducible: every random decision (batch selection,
crops, augmentation, degradation sampling) derives from (seed, iteration,
slot) through child streams, and the optimizer moments, EMA shadows and
spectral-norm power-iteration vectors are all serialized, so resuming from
a saved checkpoint continues exactly where an uninterrupted run would be.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .degradation import DegradationConfig, degrade
from .imageio import list_images, read_image
from .networks import (Discriminator, DiscriminatorConfig, Generator,
                       GeneratorConfig, kaiming_conv_init)
from .rng import SeededRng
from .tensor import (GradTape, Parameter, ShapeError, Tensor, add, conv2d, detach,
                     leaky_relu, mean_abs_diff, mean_all, scale, softplus, sub)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    batch_size: int = 10
    total_iterations: int = 1000
    loss_weights: dict = field(default_factory=lambda: {"l1": 1.0, "perceptual": 1.0, "gan": 0.1})
    ema_decay: float = 0.999
    patch_size: int = 128
    seed: int = 0
    save_interval: int = 500
    gan_variant: str = "logistic"  # or "relativistic"
    feature_weights: str | None = None  # checkpoint with features.conv{1..5}.weight

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError(f"betas must be in [0, 1): {self.adam_beta1}, {self.adam_beta2}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.ema_decay <= 1.0):
            raise ValueError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.gan_variant not in ("logistic", "relativistic"):
            raise ValueError(f"unknown gan_variant {self.gan_variant!r}")


# ---------------------------------------------------------------------------
# optimizer and EMA
# ---------------------------------------------------------------------------

class OptimizerState:
    """Adam first/second moments per parameter plus the step counter."""

    def __init__(self, params: dict[str, Parameter]):
        self.m = {n: np.zeros_like(p.value.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.value.data) for n, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, Parameter], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float, beta1: float = 0.9,
              beta2: float = 0.99, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on the parameter values."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        p.value.data -= update.astype(p.value.data.dtype)


class EmaState:
    """Exponential moving average shadow of the generator parameters."""

    def __init__(self, params: dict[str, Parameter], decay: float):
        self.decay = decay
        self.shadow = {n: p.value.data.copy() for n, p in params.items()}


def ema_update(ema: EmaState, params: dict[str, Parameter]) -> None:
    d = ema.decay
    for name, p in params.items():
        ema.shadow[name] = d * ema.shadow[name] + (1.0 - d) * p.value.data


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

class FeatureExtractor:
    """Fixed random conv stack for the perceptual loss.

    Five 3x3 convs (strides 1,2,1,2,1); the comparison taps are the raw conv
    outputs of layers 2 and 4, taken before the activation. Weights are
    seeded and never updated by training; externally converted feature
    weights can be substituted via ``load_weights``.
    """

    CHANNELS = (3, 32, 64, 64, 128, 128)
    STRIDES = (1, 2, 1, 2, 1)
    TAPS = (2, 4)  # 1-indexed layers

    def __init__(self, seed: int = 0, dtype=np.float32):
        rng = SeededRng(seed)
        self.weights = []
        for i in range(5):
            cin, cout = self.CHANNELS[i], self.CHANNELS[i + 1]
            w = kaiming_conv_init(rng, cout, cin, 3, gain=1.0).astype(dtype)
            self.weights.append(Tensor(w))

    def load_weights(self, arrays) -> None:
        if len(arrays) != 5:
            raise ValueError(f"expected 5 conv weights, got {len(arrays)}")
        for i, a in enumerate(arrays):
            if tuple(a.shape) != self.weights[i].shape:
                raise ShapeError(
                    f"feature extractor layer {i + 1}: shape {a.shape} != {self.weights[i].shape}")
        self.weights = [Tensor(np.asarray(a)) for a in arrays]

    def features(self, x: Tensor) -> list[Tensor]:
        taps = []
        h = x
        for i, w in enumerate(self.weights):
            pre = conv2d(h, w, None, stride=self.STRIDES[i], padding=1)
            if (i + 1) in self.TAPS:
                taps.append(pre)
            h = leaky_relu(pre, 0.2)
        return taps


def perceptual_loss(sr: Tensor, hr: Tensor, fx: FeatureExtractor) -> Tensor:
    """Sum of mean-abs feature differences at the tap points (hr detached)."""
    if sr.shape != hr.shape:
        raise ShapeError(f"perceptual_loss: shape mismatch {sr.shape} vs {hr.shape}")
    sr_taps = fx.features(sr)
    hr_taps = fx.features(detach(hr))
    total = None
    for fs, fh in zip(sr_taps, hr_taps):
        term = mean_abs_diff(fs, detach(fh))
        total = term if total is None else add(total, term)
    return total


def gan_loss_g(fake_logits: Tensor, real_logits: Tensor | None = None,
               variant: str = "logistic") -> Tensor:
    """Generator adversarial loss over per-pixel logits.

    logistic: -mean(log sigmoid(fake)), the non-saturating form.
    relativistic: averaged relativistic logistic loss; needs real logits.
    """
    if variant == "logistic":
        return mean_all(softplus(scale(fake_logits, -1.0)))
    if real_logits is None:
        raise ValueError("relativistic generator loss needs real logits")
    real = detach(real_logits)
    d_fake = sub(fake_logits, mean_all(real))
    d_real = sub(real, mean_all(fake_logits))
    return scale(add(mean_all(softplus(scale(d_fake, -1.0))),
                     mean_all(softplus(d_real))), 0.5)


def gan_loss_d(real_logits: Tensor, fake_logits: Tensor,
               variant: str = "logistic") -> Tensor:
    """Discriminator loss: -mean(log sig(real)) - mean(log(1 - sig(fake)))."""
    if variant == "logistic":
        return add(mean_all(softplus(scale(real_logits, -1.0))),
                   mean_all(softplus(fake_logits)))
    d_real = sub(real_logits, mean_all(fake_logits))
    d_fake = sub(fake_logits, mean_all(real_logits))
    return scale(add(mean_all(softplus(scale(d_real, -1.0))),
                     mean_all(softplus(d_fake))), 0.5)


# ---------------------------------------------------------------------------
# the GAN step
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    opt_g: OptimizerState
    opt_d: OptimizerState | None
    ema: EmaState
    fx: FeatureExtractor


def make_train_state(gen: Generator, disc: Discriminator | None, cfg: TrainConfig) -> TrainState:
    fx = FeatureExtractor(seed=0)
    if cfg.feature_weights:
        tensors, _ = load_checkpoint(cfg.feature_weights)
        try:
            fx.load_weights([tensors[f"features.conv{i}.weight"] for i in range(1, 6)])
        except KeyError as e:
            raise ValueError(
                f"{cfg.feature_weights}: feature checkpoint is missing tensor {e}") from e
    return TrainState(
        opt_g=OptimizerState(gen.params),
        opt_d=OptimizerState(disc.params) if disc is not None else None,
        ema=EmaState(gen.params, cfg.ema_decay),
        fx=fx,
    )


def _check_finite(name: str, value: float):
    if not math.isfinite(value):
        raise RuntimeError(f"non-finite loss term {name!r}: {value}")


def train_step(gen: Generator, disc: Discriminator | None, hr_batch: Tensor,
               deg_config: DegradationConfig, rng: SeededRng, cfg: TrainConfig,
               state: TrainState) -> dict:
    """One optimization step: degrade, update the generator, then the critic.

    Returns the scalar loss terms for logging. The discriminator trains on
    the detached super-resolved batch, so its step cannot touch generator
    parameters.
    """
    w = cfg.loss_weights
    n = hr_batch.data.shape[0]

    lr_imgs = []
    for b in range(n):
        hr_i = Tensor(hr_batch.data[b:b + 1])
        lr_i, _ = degrade(hr_i, deg_config, rng.child(b))
        lr_imgs.append(lr_i.data)
    lr_batch = Tensor(np.concatenate(lr_imgs, axis=0))

    use_gan = disc is not None and w.get("gan", 0.0) != 0.0
    losses = {"loss_l1": 0.0, "loss_percep": 0.0, "loss_gan_g": 0.0, "loss_d": 0.0}

    # generator pass
    with GradTape() as tape:
        sr = gen(lr_batch)
        total = None
        l1 = mean_abs_diff(sr, hr_batch)
        losses["loss_l1"] = l1.item()
        _check_finite("loss_l1", losses["loss_l1"])
        if w.get("l1", 0.0) != 0.0:
            total = scale(l1, w["l1"])
        if w.get("perceptual", 0.0) != 0.0:
            lp = perceptual_loss(sr, hr_batch, state.fx)
            losses["loss_percep"] = lp.item()
            _check_finite("loss_percep", losses["loss_percep"])
            term = scale(lp, w["perceptual"])
            total = term if total is None else add(total, term)
        if use_gan:
            fake_logits = disc(sr)
            if cfg.gan_variant == "relativistic":
                real_logits = disc(detach(hr_batch))
                lg = gan_loss_g(fake_logits, real_logits, cfg.gan_variant)
            else:
                lg = gan_loss_g(fake_logits)
            losses["loss_gan_g"] = lg.item()
            _check_finite("loss_gan_g", losses["loss_gan_g"])
            term = scale(lg, w["gan"])
            total = term if total is None else add(total, term)
        if total is None:
            raise ValueError("all loss weights are zero; nothing to optimize")
        grads = tape.backward(total)

    g_grads = {name: grads.get(p.value) for name, p in gen.params.items()}
    adam_step(gen.params, g_grads, state.opt_g, cfg.learning_rate,
              cfg.adam_beta1, cfg.adam_beta2)
    ema_update(state.ema, gen.params)

    # discriminator pass on the detached generator output; with a zero
    # adversarial weight there is no signal to train the critic against
    if use_gan:
        sr_detached = detach(sr)
        with GradTape() as tape_d:
            real_logits = disc(hr_batch)
            fake_logits = disc(sr_detached)
            ld = gan_loss_d(real_logits, fake_logits, cfg.gan_variant)
            losses["loss_d"] = ld.item()
            _check_finite("loss_d", losses["loss_d"])
            grads_d = tape_d.backward(ld)
        d_grads = {name: grads_d.get(p.value) for name, p in disc.params.items()}
        adam_step(disc.params, d_grads, state.opt_d, cfg.learning_rate,
                  cfg.adam_beta1, cfg.adam_beta2)

    return losses


def plan_schedule(num_images: int, batch_size: int, epochs: float) -> int:
    """Iterations for a target epoch count: round(epochs * ceil(n / batch))."""
    if num_images <= 0 or batch_size <= 0 or epochs <= 0:
        raise ValueError("plan_schedule needs positive arguments")
    steps_per_epoch = math.ceil(num_images / batch_size)
    return int(math.floor(epochs * steps_per_epoch + 0.5))


# ---------------------------------------------------------------------------
# data plumbing for finetune
# ---------------------------------------------------------------------------

def sample_crop_augmented(img: np.ndarray, patch: int, rng: SeededRng) -> np.ndarray:
    """Random patch crop with horizontal flip and 90-degree rotations."""
    _, c, h, w = img.shape
    if h < patch or w < patch:
        raise ShapeError(f"image {h}x{w} smaller than patch size {patch}")
    y = rng.randint(0, h - patch)
    x = rng.randint(0, w - patch)
    crop = img[:, :, y:y + patch, x:x + patch]
    if rng.uniform() < 0.5:
        crop = crop[:, :, :, ::-1]
    k = rng.randint(0, 3)
    if k:
        crop = np.rot90(crop, k, axes=(2, 3))
    return np.ascontiguousarray(crop)


def load_into_params(params: dict[str, Parameter], tensors: dict[str, np.ndarray],
                     prefix: str) -> list[str]:
    """Copy ``prefix``-scoped checkpoint tensors into parameters.

    Returns the names of unmatched checkpoint tensors under the prefix.
    Raises with a complete list if any parameter is missing or any shape
    disagrees.
    """
    scoped = {name[len(prefix):]: arr for name, arr in tensors.items()
              if name.startswith(prefix)}
    problems = []
    for name, p in params.items():
        if name not in scoped:
            problems.append(f"missing tensor {prefix}{name}")
        elif tuple(scoped[name].shape) != p.value.data.shape:
            problems.append(
                f"shape mismatch {prefix}{name}: checkpoint {tuple(scoped[name].shape)} "
                f"vs model {p.value.data.shape}")
    if problems:
        raise ShapeError("checkpoint does not match architecture:\n  " + "\n  ".join(problems))
    for name, p in params.items():
        p.value.data[...] = scoped[name].astype(p.value.data.dtype)
    return [prefix + n for n in scoped if n not in params]


def gather_checkpoint_tensors(gen: Generator, disc: Discriminator | None,
                              state: TrainState) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, p in gen.params.items():
        out[f"generator.{name}"] = p.value.data
    for name, shadow in state.ema.shadow.items():
        out[f"ema.{name}"] = shadow
    for name in gen.params:
        out[f"optim_g.{name}.m"] = state.opt_g.m[name]
        out[f"optim_g.{name}.v"] = state.opt_g.v[name]
    if disc is not None:
        for name, p in disc.params.items():
            out[f"discriminator.{name}"] = p.value.data
        for name, u in disc.sn_state.items():
            out[f"sn_u.{name}"] = u
        if state.opt_d is not None:
            for name in disc.params:
                out[f"optim_d.{name}.m"] = state.opt_d.m[name]
                out[f"optim_d.{name}.v"] = state.opt_d.v[name]
    return out


def _restore_optimizer(opt: OptimizerState, tensors: dict, prefix: str, t: int):
    present = [n for n in tensors if n.startswith(prefix)]
    if not present:
        return
    for name in opt.m:
        mkey, vkey = f"{prefix}{name}.m", f"{prefix}{name}.v"
        if mkey in tensors and tensors[mkey].shape == opt.m[name].shape:
            opt.m[name] = tensors[mkey].astype(opt.m[name].dtype).copy()
        if vkey in tensors and tensors[vkey].shape == opt.v[name].shape:
            opt.v[name] = tensors[vkey].astype(opt.v[name].dtype).copy()
    opt.t = t


@dataclass
class FinetuneSummary:
    iterations_executed: int
    start_iteration: int
    final_iteration: int
    final_losses: dict
    seconds: float
    checkpoint_out: str
    warnings: list[str]


def finetune(checkpoint_in, dataset_dir, cfg: TrainConfig, deg_config: DegradationConfig,
             checkpoint_out, gen_config: GeneratorConfig | None = None,
             disc_config: DiscriminatorConfig | None = None,
             log=None) -> FinetuneSummary:
    """Fine-tune from a pretrained checkpoint over a directory of PNGs.

    Architecture configs default to the echo embedded in the checkpoint.
    Saves to ``checkpoint_out`` every ``cfg.save_interval`` iterations and at
    the end; a run resumed from such a checkpoint reproduces the uninterrupted
    run bit for bit. Tensors present in the input checkpoint are never
    reinitialized; a missing discriminator is freshly initialized with a
    logged warning.
    """
    cfg.validate()
    deg_config.validate()
    if cfg.patch_size % deg_config.output_scale:
        raise ValueError(
            f"patch_size {cfg.patch_size} not divisible by scale {deg_config.output_scale}")
    warnings: list[str] = []
    t_start = time.perf_counter()

    tensors, meta = load_checkpoint(checkpoint_in)
    if gen_config is None:
        if "generator_config" not in meta:
            raise ValueError("checkpoint has no generator_config echo; pass gen_config")
        gen_config = GeneratorConfig(**meta["generator_config"])
    if disc_config is None:
        disc_config = (DiscriminatorConfig(**meta["discriminator_config"])
                       if "discriminator_config" in meta else DiscriminatorConfig())

    gen = Generator(gen_config, seed=cfg.seed)
    unknown = load_into_params(gen.params, tensors, "generator.")
    disc = Discriminator(disc_config, seed=cfg.seed + 1)
    if any(n.startswith("discriminator.") for n in tensors):
        unknown += load_into_params(disc.params, tensors, "discriminator.")
        for name in disc.sn_state:
            key = f"sn_u.{name}"
            if key in tensors:
                disc.sn_state[name] = tensors[key].astype(np.float32).copy()
    else:
        warnings.append("checkpoint has no discriminator tensors; initialized fresh")
    for name in unknown:
        warnings.append(f"checkpoint tensor {name} does not match any model parameter")

    state = make_train_state(gen, disc, cfg)
    if any(n.startswith("ema.") for n in tensors):
        for name in state.ema.shadow:
            key = f"ema.{name}"
            if key in tensors:
                state.ema.shadow[name] = tensors[key].astype(np.float32).copy()
    _restore_optimizer(state.opt_g, tensors, "optim_g.", int(meta.get("adam_t_g", 0)))
    _restore_optimizer(state.opt_d, tensors, "optim_d.", int(meta.get("adam_t_d", 0)))
    start_iter = int(meta.get("iteration", 0))

    paths = list_images(dataset_dir)
    if not paths:
        raise ValueError(f"no PNG images found in {dataset_dir}")
    cache: dict[int, np.ndarray] = {}

    def image(idx: int) -> np.ndarray:
        if idx not in cache:
            if len(cache) >= 128:
                cache.pop(next(iter(cache)))
            cache[idx] = read_image(paths[idx]).data
        return cache[idx]

    root = SeededRng(cfg.seed)

    def save(iteration: int):
        metadata = {
            "format_version": 1,
            "iteration": iteration,
            "seed": cfg.seed,
            "adam_t_g": state.opt_g.t,
            "adam_t_d": state.opt_d.t if state.opt_d else 0,
            "generator_config": gen_config.to_dict(),
            "discriminator_config": disc_config.to_dict(),
        }
        save_checkpoint(gather_checkpoint_tensors(gen, disc, state), metadata, checkpoint_out)

    losses = {"loss_l1": 0.0, "loss_percep": 0.0, "loss_gan_g": 0.0, "loss_d": 0.0}
    for it in range(start_iter, cfg.total_iterations):
        it_rng = root.child(it)
        t0 = time.perf_counter()
        batch = []
        for slot in range(cfg.batch_size):
            slot_rng = it_rng.child(slot)
            idx = slot_rng.randint(0, len(paths) - 1)
            batch.append(sample_crop_augmented(image(idx), cfg.patch_size, slot_rng))
        hr_batch = Tensor(np.concatenate(batch, axis=0))
        step_rng = it_rng.child(10_000)
        losses = train_step(gen, disc, hr_batch, deg_config, step_rng, cfg, state)
        if log is not None:
            log(f"{it + 1}\t{losses['loss_l1']:.6f}\t{losses['loss_percep']:.6f}"
                f"\t{losses['loss_gan_g']:.6f}\t{losses['loss_d']:.6f}"
                f"\t{time.perf_counter() - t0:.3f}")
        if (it + 1) % cfg.save_interval == 0 and (it + 1) < cfg.total_iterations:
            save(it + 1)

    save(cfg.total_iterations)
    return FinetuneSummary(
        iterations_executed=cfg.total_iterations - start_iter,
        start_iteration=start_iter,
        final_iteration=cfg.total_iterations,
        final_losses=losses,
        seconds=time.perf_counter() - t_start,
        checkpoint_out=str(checkpoint_out),
        warnings=warnings,
    )
