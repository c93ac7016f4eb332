"""Binary checkpoint container.

Layout (little-endian throughout)::

    b"IMNT"  u32 version  u32 len  <config text, UTF-8>
    u32 count, then per tensor:  u16 len <name>  u8 ndim  u32 dims...  f32 values
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .errors import CheckpointError, ConfigError
from .model import init_params
from .params import Params
from .tensor import Tensor

MAGIC = b"IMNT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict  # name -> float32 ndarray, in model creation order

    @classmethod
    def from_params(cls, config: RunConfig, params: Params) -> "Checkpoint":
        return cls(config, {k: np.asarray(v.data, dtype=np.float32) for k, v in params.items()})

    def params(self, dtype=np.float32, requires_grad: bool = True) -> Params:
        return {k: Tensor(v.astype(dtype), requires_grad=requires_grad, name=k) for k, v in self.tensors.items()}


def dumps(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    text = cfgmod.dumps(ckpt.config).encode("utf-8")
    parts += [struct.pack("<I", len(text)), text, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Checkpoint:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not an IMNT checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupt file)")
    (n,) = r.unpack("<I")
    try:
        config = cfgmod.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"embedded config invalid: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    expected = {k: v.shape for k, v in init_params(config).items()}
    got = {k: v.shape for k, v in tensors.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise CheckpointError(f"tensors disagree with config: missing={missing} extra={extra} shape={wrong}")
    return Checkpoint(config, tensors)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(data)
