"""8-bit PNG reading and writing at the [0,1] tensor boundary."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import Tensor


class ImageIOError(ValueError):
    pass


def read_image(path) -> Tensor:
    """Read an 8-bit grayscale or RGB PNG as a 1x3xHxW tensor in [0, 1].

    Grayscale is replicated to three channels. Alpha channels, palettes and
    non-8-bit depths are rejected with the offending file named.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise ImageIOError(
                    f"{path}: unsupported PNG mode {mode!r} (need 8-bit L or RGB, no alpha)")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except Exception as e:
        raise ImageIOError(f"{path}: cannot read image: {e}") from e
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return Tensor((arr.astype(np.float32) / 255.0)[None])


def write_image(tensor: Tensor, path) -> None:
    """Write a 1xCxHxW tensor in [0, 1] as an 8-bit PNG.

    Values are rounded to the nearest 8-bit level (half rounds up). When the
    rounded channels are identical the file is written as grayscale.
    Atomic: written to a temp file and renamed.
    """
    d = tensor.data
    if d.ndim != 4 or d.shape[0] != 1 or d.shape[1] not in (1, 3):
        raise ImageIOError(f"write_image expects 1x{{1,3}}xHxW, got shape {tensor.shape}")
    arr = np.clip(d[0], 0.0, 1.0).astype(np.float64)
    bytes_ = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    if bytes_.shape[0] == 1 or (np.all(bytes_[0] == bytes_[1]) and np.all(bytes_[0] == bytes_[2])):
        im = Image.fromarray(bytes_[0], mode="L")
    else:
        im = Image.fromarray(bytes_.transpose(1, 2, 0), mode="RGB")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    im.save(tmp, format="PNG")
    os.replace(tmp, path)


def list_images(directory) -> list[Path]:
    """Sorted PNG paths directly inside ``directory``."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() == ".png")
