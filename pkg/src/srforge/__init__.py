"""srforge: a blind super-resolution pipeline toolkit.

Modules:
  tensor       dense NCHW tensors with reverse-mode autodiff
  rng          portable counter-based PRNG
  kernels      Gaussian / sinc blur kernel synthesis
  resample     nearest / bilinear / bicubic / area / lanczos resizing
  jpegsim      block-DCT compression artifact simulation
  degradation  the two-stage degradation pipeline
  networks     RRDB generator, spectrally normalized U-Net discriminator
  training     losses, Adam, EMA, GAN step, fine-tuning and resume
  evaluation   PSNR/SSIM and the deterministic evaluation protocols
  checkpoint   named-tensor binary container
  imageio      8-bit PNG in/out
  dataset      multi-scale ground-truth preparation
  cli          command-line entry points
"""

__version__ = "0.1.0"

from .rng import SeededRng
from .tensor import GradTape, Parameter, ShapeError, Tensor

__all__ = ["SeededRng", "GradTape", "Parameter", "ShapeError", "Tensor", "__version__"]
