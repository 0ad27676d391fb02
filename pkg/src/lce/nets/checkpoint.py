"""LCEC checkpoint files.

Layout (little endian)::

    b"LCEC"  u32 version  32-byte sha256 of the config text
    u32 config length, config text (utf-8)
    u32 entry count, then per entry:
        u16 name length, name (utf-8), u8 dtype code, u32 rank, u32 * rank extents, u64 payload offset
    payloads, each contiguous C-order, offsets relative to the start of the file

Tensors round-trip bit-exactly.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LCEC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def config_digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict

    @property
    def digest(self) -> bytes:
        return config_digest(self.config_text)

    def prefixed(self, prefix: str) -> dict:
        """Entries under ``prefix.`` with the prefix stripped."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}


def to_bytes(ckpt: Checkpoint) -> bytes:
    text = ckpt.config_text.encode("utf-8")
    arrays = []
    for name, arr in ckpt.tensors.items():
        a = np.asarray(arr)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        if np.dtype(dt) not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {a.dtype}")
        # ascontiguousarray promotes 0-d arrays to 1-d; keep the original rank
        arrays.append((name.encode("utf-8"), np.ascontiguousarray(a, dtype=dt).reshape(a.shape)))
    header = bytearray(MAGIC + struct.pack("<I", VERSION) + config_digest(ckpt.config_text))
    header += struct.pack("<I", len(text)) + text + struct.pack("<I", len(arrays))
    table_size = sum(2 + len(n) + 1 + 4 + 4 * a.ndim + 8 for n, a in arrays)
    offset = len(header) + table_size
    table = bytearray()
    for n, a in arrays:
        table += struct.pack("<H", len(n)) + n + struct.pack("<BI", _CODES[np.dtype(a.dtype)], a.ndim)
        table += struct.pack(f"<{a.ndim}I", *a.shape) + struct.pack("<Q", offset)
        offset += a.nbytes
    return bytes(header + table) + b"".join(a.tobytes() for _, a in arrays)


def from_bytes(buf: bytes) -> Checkpoint:
    try:
        if buf[:4] != MAGIC:
            raise CheckpointError("not an LCEC checkpoint")
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = buf[8:40]
        (tlen,) = struct.unpack_from("<I", buf, 40)
        text = buf[44:44 + tlen].decode("utf-8")
        if config_digest(text) != digest:
            raise CheckpointError("config digest does not match the stored config")
        pos = 44 + tlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            code, rank = struct.unpack_from("<BI", buf, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            (off,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            dt = _DTYPES[code]
            n = int(np.prod(shape, dtype=np.int64))
            if off + n * dt.itemsize > len(buf):
                raise CheckpointError(f"{name}: payload runs past end of file")
            tensors[name] = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).copy()
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return Checkpoint(text, tensors)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path, expect_digest: bytes | None = None) -> Checkpoint:
    ckpt = from_bytes(Path(path).read_bytes())
    if expect_digest is not None and ckpt.digest != expect_digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    return ckpt
