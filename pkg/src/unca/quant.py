"""One-byte-per-parameter quantization and the binary model file format.

File layout (little-endian)::

    b"uNCA" | version u8 | mode u8 | n_lap u8 | n_x u8 | n_y u8 | payload

The quantized payload (mode 1) is two float32 scales (weights, bias) followed
by one signed byte per parameter; the float payload (mode 0) is one float32
per parameter. Parameter order is W row-major (perception index outer), then b.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nca import ModelConfig, Params, make_config

MAGIC = b"uNCA"
VERSION = 1
MODE_FLOAT = 0
MODE_QUANTIZED = 1
HEADER = struct.Struct("<4sBBBBB")
SCALES = struct.Struct("<ff")
QMAX = 127


class ModelFormatError(ValueError):
    pass


class BadMagic(ModelFormatError):
    pass


class BadVersion(ModelFormatError):
    pass


class BadLength(ModelFormatError):
    pass


@dataclass
class QuantizedModel:
    config: ModelConfig
    w_codes: np.ndarray  # int8, (4C, C)
    b_codes: np.ndarray  # int8, (C,)
    w_scale: float
    b_scale: float

    @property
    def payload(self) -> bytes:
        """The parameter bytes alone; exactly ``config.n_params`` long."""
        return self.w_codes.astype(np.int8).tobytes() + self.b_codes.astype(np.int8).tobytes()


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _quantize_tensor(v: np.ndarray):
    peak = float(np.abs(v).max()) if v.size else 0.0
    if peak == 0.0:
        return np.zeros(v.shape, np.int8), 1.0
    scale = peak / QMAX
    codes = np.clip(round_half_away(v / scale), -QMAX, QMAX).astype(np.int8)
    # the file stores float32 scales, so keep the in-memory value identical
    return codes, float(np.float32(scale))


def quantize(params: Params, config: ModelConfig) -> QuantizedModel:
    """Symmetric per-tensor quantization of W and b to codes in [-127, 127]."""
    params.check(config)
    w_codes, w_scale = _quantize_tensor(np.asarray(params.w, dtype=np.float64))
    b_codes, b_scale = _quantize_tensor(np.asarray(params.b, dtype=np.float64))
    return QuantizedModel(config, w_codes, b_codes, w_scale, b_scale)


def dequantize(qm: QuantizedModel) -> Params:
    return Params(qm.w_codes.astype(np.float64) * qm.w_scale,
                  qm.b_codes.astype(np.float64) * qm.b_scale)


def encode(model, config: ModelConfig | None = None) -> bytes:
    """Serialize a ``QuantizedModel`` or float ``Params`` (which need ``config``)."""
    if isinstance(model, QuantizedModel):
        cfg = model.config
        head = HEADER.pack(MAGIC, VERSION, MODE_QUANTIZED, *cfg.filters)
        return head + SCALES.pack(model.w_scale, model.b_scale) + model.payload
    if config is None:
        raise TypeError("float params need their ModelConfig")
    model.check(config)
    head = HEADER.pack(MAGIC, VERSION, MODE_FLOAT, *config.filters)
    return head + model.flat().astype("<f4").tobytes()


def decode(data: bytes):
    """Inverse of ``encode``: returns a QuantizedModel or ``(Params, ModelConfig)``."""
    if len(data) < HEADER.size:
        raise BadLength(f"file has {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, mode, n_lap, n_x, n_y = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported format version {version}")
    cfg = make_config(n_lap, n_x, n_y)
    c = cfg.channels
    body = data[HEADER.size:]
    if mode == MODE_QUANTIZED:
        want = SCALES.size + cfg.n_params
        if len(body) != want:
            raise BadLength(f"quantized body is {len(body)} bytes, expected {want}")
        w_scale, b_scale = SCALES.unpack_from(body)
        codes = np.frombuffer(body, dtype=np.int8, offset=SCALES.size)
        return QuantizedModel(cfg, codes[:4 * c * c].reshape(4 * c, c).copy(), codes[4 * c * c:].copy(),
                              float(w_scale), float(b_scale))
    if mode == MODE_FLOAT:
        want = 4 * cfg.n_params
        if len(body) != want:
            raise BadLength(f"float body is {len(body)} bytes, expected {want}")
        flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
        return Params.from_flat(flat, cfg), cfg
    raise ModelFormatError(f"unknown mode byte {mode}")


def save_model(model, path, config: ModelConfig | None = None) -> int:
    data = encode(model, config)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path):
    return decode(Path(path).read_bytes())


def load_params(path):
    """Load either kind of model file as ``(Params, ModelConfig)`` for inference."""
    model = load_model(path)
    if isinstance(model, QuantizedModel):
        return dequantize(model), model.config
    return model
