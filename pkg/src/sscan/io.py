"""PNG images, the SSCW weight container, and JSON run configs.

SSCW layout (all integers little-endian)::

    magic        4 bytes   b"SSCW"
    version      u16       1
    tensor_count u32
    per tensor:
      name_len   u16
      name       name_len bytes, UTF-8
      rank       u8
      dims       u32 * rank
      dtype      u8        0 = float64 little-endian
      byte_len   u64       must equal 8 * prod(dims)
      data       byte_len bytes

Nothing may follow the last tensor.
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import AttentionConfig
from .metrics import ImageU8
from .model import ConfigError, ModelConfig, WeightStore
from .tensor import Tensor

MAGIC = b"SSCW"
VERSION = 1
DTYPE_F64 = 0


class UnsupportedFormatError(ValueError):
    """PNG variant outside 8-bit, non-interlaced grayscale/RGB."""


class WeightFormatError(ValueError):
    """Base class for every way a weight file can be rejected."""


class BadMagicError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class DuplicateNameError(WeightFormatError):
    pass


class UnsupportedDtypeError(WeightFormatError):
    pass


class CorruptEntryError(WeightFormatError):
    """Entry header contradicts itself (length mismatch, bad name, zero dim)."""


class TrailingDataError(WeightFormatError):
    pass


# ---------------------------------------------------------------------------
# PNG

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _check_png_header(path: Path) -> None:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != _PNG_SIG or head[12:16] != b"IHDR":
        raise UnsupportedFormatError(f"{path}: not a PNG file")
    bit_depth, color_type, interlace = head[24], head[25], head[28]
    if bit_depth != 8:
        raise UnsupportedFormatError(f"{path}: {bit_depth}-bit PNG is not supported (8-bit only)")
    if color_type not in (0, 2):
        raise UnsupportedFormatError(f"{path}: PNG colour type {color_type} is not supported (grayscale or RGB only)")
    if interlace:
        raise UnsupportedFormatError(f"{path}: interlaced PNG is not supported")


def load_png(path) -> ImageU8:
    path = Path(path)
    _check_png_header(path)
    with Image.open(path) as im:
        arr = np.asarray(im)
    return ImageU8(arr)


def save_png(img: ImageU8, path) -> None:
    px = img.pixels
    data = px[:, :, 0] if img.channels == 1 else px
    Image.fromarray(np.ascontiguousarray(data)).save(Path(path), format="PNG")


# ---------------------------------------------------------------------------
# weights


def weights_to_bytes(store: WeightStore) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(store))]
    for name, t in store.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(t.data, dtype="<f8", order="C")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<BQ", DTYPE_F64, arr.nbytes))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_weights(store: WeightStore, path) -> None:
    Path(path).write_bytes(weights_to_bytes(store))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if n > self.remaining():
            raise TruncatedFileError(f"truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def weights_from_bytes(buf: bytes, requires_grad: bool = True) -> WeightStore:
    r = _Reader(buf)
    if len(buf) < 4:
        raise TruncatedFileError("file shorter than the magic number")
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("not an SSCW weight file")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported SSCW version {version}")
    (count,) = r.unpack("<I", "tensor count")
    store: WeightStore = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"name length of entry {i}")
        try:
            name = r.take(name_len, f"name of entry {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptEntryError(f"entry {i}: name is not valid UTF-8") from None
        if name in store:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        dims = r.unpack(f"<{rank}I", f"dims of {name!r}")
        if any(d == 0 for d in dims):
            raise CorruptEntryError(f"{name!r}: zero-sized dimension in {dims}")
        dtype, byte_len = r.unpack("<BQ", f"dtype of {name!r}")
        if dtype != DTYPE_F64:
            raise UnsupportedDtypeError(f"{name!r}: unknown dtype tag {dtype}")
        if byte_len != 8 * math.prod(dims):
            raise CorruptEntryError(f"{name!r}: byte_len {byte_len} does not match dims {dims}")
        raw = r.take(byte_len, f"data of {name!r}")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        store[name] = Tensor(arr, requires_grad=requires_grad)
    if r.remaining():
        raise TrailingDataError(f"{r.remaining()} unexpected bytes after the last tensor")
    return store


def load_weights(path, requires_grad: bool = True) -> WeightStore:
    return weights_from_bytes(Path(path).read_bytes(), requires_grad)


# ---------------------------------------------------------------------------
# run configs

_CONFIG_KEYS = {f for f in ModelConfig.__dataclass_fields__}


def parse_run_config(doc) -> tuple[ModelConfig, AttentionConfig]:
    """Validate a decoded JSON object; absent keys keep their defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be a JSON object")
    for key in doc:
        if key not in _CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
    try:
        cfg = ModelConfig(**doc)
    except TypeError as exc:
        raise ConfigError("<document>", str(exc)) from None
    return cfg, cfg.attention


def load_run_config(path) -> tuple[ModelConfig, AttentionConfig]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"malformed JSON: {exc}") from None
    return parse_run_config(doc)


def save_run_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + os.linesep)
