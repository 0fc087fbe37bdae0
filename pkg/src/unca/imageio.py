"""PNG and binary PPM reading/writing for float RGB images in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_png(path, size: int | None = None) -> np.ndarray:
    """8-bit image as float RGB (alpha dropped), optionally resized to size x size."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.Resampling.LANCZOS)
        return np.asarray(im, dtype=np.float64) / 255.0


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, rgb: np.ndarray):
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path)


def write_ppm(path, rgb: np.ndarray, maxval: int = 255):
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    h, w = rgb.shape[:2]
    codes = np.rint(np.clip(rgb[..., :3], 0.0, 1.0) * maxval)
    body = codes.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n{maxval}\n".encode() + body)


def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens and the offset after them."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        out.append(data[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def decode_ppm(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else np.uint8
    n = w * h * 3
    raster = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
    return raster.reshape(h, w, 3).astype(np.float64) / maxval


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def read_image(path, size: int | None = None) -> np.ndarray:
    if Path(path).suffix.lower() == ".ppm":
        return read_ppm(path)
    return read_png(path, size)


def write_image(path, rgb: np.ndarray):
    if Path(path).suffix.lower() == ".ppm":
        write_ppm(path, rgb, maxval=65535)
    else:
        write_png(path, rgb)
