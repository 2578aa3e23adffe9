"""Binary checkpoint format.

Layout, all integers unsigned 32-bit little-endian::

    b"TSDP" | version | parameter count
    per parameter: name length | UTF-8 name | rows | cols | rows*cols float64 LE

Parameters are written in ``PARAM_NAMES`` order; ``mask_token`` is stored
as a 1 x d matrix.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, MagicError, TruncationError, VersionError
from .model import PARAM_NAMES, TsadpModel

MAGIC = b"TSDP"
VERSION = 1
_U32 = struct.Struct("<I")


def checkpoint_bytes(model: TsadpModel) -> bytes:
    buf = io.BytesIO()
    params = model.params()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    buf.write(_U32.pack(len(params)))
    for name in PARAM_NAMES:
        value = np.asarray(params[name], dtype="<f8")
        if value.ndim == 1:
            value = value[None, :]
        encoded = name.encode("utf-8")
        buf.write(_U32.pack(len(encoded)))
        buf.write(encoded)
        buf.write(_U32.pack(value.shape[0]))
        buf.write(_U32.pack(value.shape[1]))
        buf.write(np.ascontiguousarray(value).tobytes())
    return buf.getvalue()


def save_checkpoint(model: TsadpModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(f"file truncated while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def read_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    """Parse checkpoint bytes into ``{name: array}`` without building a model."""
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    count = r.u32("parameter count")
    params = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "parameter name").decode("utf-8")
        rows, cols = r.u32(f"{name} rows"), r.u32(f"{name} cols")
        raw = r.take(8 * rows * cols, f"{name} values")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last parameter")
    return params


def load_checkpoint(path, heads: int = 1) -> TsadpModel:
    params = read_checkpoint(Path(path).read_bytes())
    missing = [n for n in PARAM_NAMES if n not in params]
    if missing:
        raise FormatError(f"checkpoint lacks parameters {missing}")
    token = params["mask_token"]
    if token.shape[0] != 1:
        raise FormatError(f"mask_token must be stored as 1 x d, got {token.shape}")
    params["mask_token"] = token[0]
    return TsadpModel.from_params(params, heads)
