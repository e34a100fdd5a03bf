"""Named-tensor checkpoint container.

Layout: magic ``SRFG`` | u32 version | u64 manifest length | UTF-8 JSON
manifest | raw payload. Everything little-endian, tensors stored as raw
float32 in manifest order (sorted by name), so save -> load -> save is
byte-identical. The manifest carries per-tensor (name, dtype tag, shape,
offset, length) plus free-form metadata such as the iteration counter and
an echo of the architecture configuration.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SRFG"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed, truncated or incompatible checkpoint files."""


def save_checkpoint(tensors: dict[str, np.ndarray], metadata: dict, path) -> None:
    """Write tensors plus metadata; atomic via write-to-temp and rename."""
    names = sorted(tensors)
    if len(names) != len(set(names)):
        raise CheckpointError("duplicate tensor names")
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        offset += len(blob)
        blobs.append(blob)
    manifest = {"format_version": FORMAT_VERSION, "metadata": metadata, "tensors": entries}
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(mbytes)))
        f.write(mbytes)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, metadata dict).

    Validates magic, version, manifest bounds, non-overlapping offsets and
    payload length; any inconsistency raises :class:`CheckpointError`.
    """
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    mlen = struct.unpack("<Q", data[8:16])[0]
    if 16 + mlen > len(data):
        raise CheckpointError(f"{path}: manifest length {mlen} exceeds file size")
    try:
        manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    payload = data[16 + mlen:]

    entries = manifest.get("tensors", [])
    expected = 0
    for entry in entries:
        if entry["offset"] != expected:
            raise CheckpointError(
                f"{path}: tensor {entry['name']!r} offset {entry['offset']} overlaps "
                f"or leaves a gap (expected {expected})")
        if entry["dtype"] != "f32":
            raise CheckpointError(f"{path}: unsupported dtype tag {entry['dtype']!r}")
        expected += entry["nbytes"]
    if expected != len(payload):
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, manifest declares {expected}")

    tensors = {}
    for entry in entries:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = np.ascontiguousarray(arr)
    return tensors, manifest.get("metadata", {})


def manifest_summary(path) -> str:
    """Readable listing of a checkpoint's manifest and metadata."""
    tensors, metadata = load_checkpoint(path)
    lines = [f"checkpoint: {path}", f"tensors: {len(tensors)}"]
    total = 0
    for name in sorted(tensors):
        shape = "x".join(str(d) for d in tensors[name].shape) or "scalar"
        total += tensors[name].size
        lines.append(f"  {name}\tf32\t{shape}")
    lines.append(f"total elements: {total}")
    lines.append("metadata: " + json.dumps(metadata, sort_keys=True))
    return "\n".join(lines)
