"""Multi-scale ground-truth preparation: one Lanczos copy per scale."""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

from .imageio import ImageIOError, list_images, read_image, write_image
from .resample import resize

logger = logging.getLogger("srforge")

DEFAULT_SCALES = (1.0, 0.75, 0.5, 1.0 / 3.0, 0.25)


def round_half_away(x: float) -> int:
    """Round half away from zero, floored at 1 (output dimension rule)."""
    return max(1, int(math.floor(x + 0.5)))


@dataclass
class ManifestEntry:
    source: str
    scale: float
    output: str
    height: int
    width: int


@dataclass
class DatasetManifest:
    entries: list

    def write(self, path) -> None:
        lines = ["source\tscale\toutput\theight\twidth"]
        for e in self.entries:
            lines.append(f"{e.source}\t{e.scale:.6f}\t{e.output}\t{e.height}\t{e.width}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def prepare_multiscale(src_dir, dst_dir, scales=DEFAULT_SCALES) -> DatasetManifest:
    """Write a Lanczos-resized copy of every source image at every scale.

    Scale 1.0 is a byte-preserving file copy. Output dims are
    round-half-away(dim * scale), floored at 1. Unreadable files are skipped
    with a warning; producing nothing at all is an error. The manifest is
    written to ``dst_dir/manifest.tsv`` and returned.
    """
    src_dir, dst_dir = Path(src_dir), Path(dst_dir)
    for s in scales:
        if not (0.0 < s <= 1.0):
            raise ValueError(f"scales must lie in (0, 1], got {s}")
    dst_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for path in list_images(src_dir):
        try:
            img = read_image(path)
        except ImageIOError as e:
            logger.warning("skipping %s: %s", path, e)
            continue
        _, _, h, w = img.data.shape
        for s in scales:
            out_name = f"{path.stem}_s{s:.4f}.png"
            out_path = dst_dir / out_name
            if s == 1.0:
                shutil.copyfile(path, out_path)
                entries.append(ManifestEntry(path.name, s, out_name, h, w))
            else:
                th, tw = round_half_away(h * s), round_half_away(w * s)
                write_image(resize(img, th, tw, "lanczos"), out_path)
                entries.append(ManifestEntry(path.name, s, out_name, th, tw))
    if not entries:
        raise ValueError(f"no readable images in {src_dir}")
    manifest = DatasetManifest(entries)
    manifest.write(dst_dir / "manifest.tsv")
    return manifest
