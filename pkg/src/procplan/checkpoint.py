"""Checkpoints: a flat binary of named float64 tensors plus a text manifest.

For a stem `model`, writes `model.bin` (raw little-endian float64, tensors
concatenated) and `model.manifest` with one line per tensor:

    <name> <shape as d0xd1x...> <byte offset> <element count>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError


def save_tensors(tensors: dict[str, np.ndarray], stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    manifest_path = stem.with_suffix(".manifest")
    offset = 0
    lines = []
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {shape} {offset} {arr.size}")
        blobs.append(arr.tobytes())
        offset += arr.size * 8
    bin_path.write_bytes(b"".join(blobs))
    manifest_path.write_text("\n".join(lines) + "\n")
    return bin_path, manifest_path


def load_tensors(stem: str | Path) -> dict[str, np.ndarray]:
    stem = Path(stem)
    raw = stem.with_suffix(".bin").read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for line in stem.with_suffix(".manifest").read_text().splitlines():
        if not line.strip():
            continue
        name, shape_s, offset_s, count_s = line.split()
        offset, count = int(offset_s), int(count_s)
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        if shape_s == "scalar":
            tensors[name] = np.array(flat[0])
        else:
            shape = tuple(int(d) for d in shape_s.split("x"))
            if int(np.prod(shape)) != count:
                raise ValidationError(f"manifest corrupt for tensor {name}")
            tensors[name] = flat.reshape(shape).copy()
    return tensors
