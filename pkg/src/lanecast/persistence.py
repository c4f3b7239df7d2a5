"""Binary model container.

Layout (little-endian throughout)::

    b"STCP" | u16 version | u8 module tag
    u32 n | n bytes of UTF-8 JSON describing the architecture
    u32 tensor count | per tensor: u32 rank, rank x u32 dims
    parameter arrays, row-major float32
    u32 input channels | u32 output rows | in_mean, in_std (float64 each) | out_mean, out_std (rows x 2 float64 each)
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptModelError, ModelFormatError, ModelVersionError
from .network import CLASSIFIER, REGRESSOR, Architecture, NetworkParams
from .neighborhood import Normalizer

MAGIC = b"STCP"
FORMAT_VERSION = 1
MODULE_TAGS = {CLASSIFIER: 0, REGRESSOR: 1}
_KINDS = {v: k for k, v in MODULE_TAGS.items()}


def dumps(params: NetworkParams, normalizer: Normalizer) -> bytes:
    arch_json = json.dumps(params.arch.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HB", FORMAT_VERSION, MODULE_TAGS[params.kind])]
    parts.append(struct.pack("<I", len(arch_json)) + arch_json)
    parts.append(struct.pack("<I", len(params.tensors)))
    for arr in params.tensors.values():
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
    for arr in params.tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<II", len(normalizer.in_mean), len(normalizer.out_mean)))
    for stat in (normalizer.in_mean, normalizer.in_std, normalizer.out_mean, normalizer.out_std):
        parts.append(np.ascontiguousarray(stat, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptModelError(f"model file truncated: needed {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape, dtype: str) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype[1:])


def loads(buf: bytes) -> tuple[NetworkParams, Normalizer]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic bytes)")
    r = _Reader(buf)
    r.take(4)
    version, tag = r.unpack("<HB")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptModelError("checksum mismatch: model file is truncated or corrupted")
    if tag not in _KINDS:
        raise ModelFormatError(f"unknown module tag {tag}")
    (n,) = r.unpack("<I")
    try:
        arch = Architecture.from_dict(json.loads(r.take(n).decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad architecture block: {exc}") from exc
    if arch.kind != _KINDS[tag]:
        raise ModelFormatError(f"module tag says {_KINDS[tag]} but architecture says {arch.kind}")

    expected = arch.param_shapes()
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise ModelFormatError(f"shape table lists {count} tensors, architecture needs {len(expected)}")
    shapes = []
    for name, want in expected.items():
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        if tuple(dims) != want:
            raise ModelFormatError(f"shape table entry for {name} is {dims}, expected {want}")
        shapes.append((name, want))
    tensors = {name: r.array(shape, "<f4") for name, shape in shapes}

    n_in, rows = r.unpack("<II")
    stats = [r.array(shape, "<f8") for shape in ((n_in,), (n_in,), (rows, 2), (rows, 2))]
    if r.pos != len(body):
        raise CorruptModelError(f"{len(body) - r.pos} unexpected trailing bytes before the checksum")
    try:
        normalizer = Normalizer(*stats)
    except ValueError as exc:
        raise ModelFormatError(f"bad normalizer block: {exc}") from exc
    return NetworkParams(arch, tensors, normalizer.digest()), normalizer


def save_model(params: NetworkParams, normalizer: Normalizer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, normalizer))
    return path


def load_model(path) -> tuple[NetworkParams, Normalizer]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    return loads(path.read_bytes())
