"""File formats: raw float32 tensors, flat key=value configs, PNG frames."""

import json
import struct

import numpy as np

from .errors import ValidationError

__all__ = ["RAW_MAGIC", "write_raw", "read_raw", "read_config", "write_config", "save_png_frames"]

RAW_MAGIC = b"RPSM1\0"


def write_raw(path, array):
    """Write a tensor as magic, u32 rank, u32 dims, then little-endian f32 payload."""
    arr = np.asarray(array)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raw(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:6] != RAW_MAGIC:
        raise ValidationError(f"{path}: not an RPSM1 tensor file")
    if len(buf) < 10:
        raise ValidationError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", buf, 6)
    head = 10 + 4 * rank
    if len(buf) < head:
        raise ValidationError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 10)
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != head + 4 * count:
        raise ValidationError(
            f"{path}: payload has {len(buf) - head} bytes, dims {dims} need {4 * count}"
        )
    return np.frombuffer(buf, dtype="<f4", offset=head).reshape(dims).astype(np.float32)


def _parse_value(raw):
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_config(path, allowed):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in allowed:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            if key in out:
                raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = _parse_value(val)
    return out


def write_config(path, values):
    with open(path, "w") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {v}\n")


def save_png_frames(stack, prefix):
    """16-bit PNGs of each frame, min-max scaled over the whole stack.

    The scale is written to ``<prefix>scale.json`` so pixel values can be
    mapped back: ``value = lo + png / 65535 * (hi - lo)``.
    """
    from PIL import Image

    stack = np.asarray(stack, dtype=float)
    lo, hi = float(stack.min()), float(stack.max())
    span = hi - lo if hi > lo else 1.0
    paths = []
    for t, frame in enumerate(stack):
        q = np.round((frame - lo) / span * 65535.0).astype(np.uint16)
        path = f"{prefix}{t:04d}.png"
        Image.fromarray(q).save(path)
        paths.append(path)
    with open(f"{prefix}scale.json", "w") as fh:
        json.dump({"lo": lo, "hi": hi, "frames": len(paths)}, fh)
    return paths
