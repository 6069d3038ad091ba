"""Single-file archive container shared by datasets and checkpoints.

Layout (all integers little-endian)::

    magic   4 bytes   b"FFAR"
    version u16
    flags   u16       reserved, 0
    length  u64       byte length of the compressed payload
    crc32   u32       CRC-32 of the compressed payload
    payload           zlib (deflate) stream of the body

    body:
    u32 meta_len, meta_len bytes of UTF-8 JSON
    u32 n_arrays
    per array: u16 name_len, name (UTF-8), u8 ndim, ndim x u64 dims,
               prod(dims) x float64 little-endian

Arrays are stored as IEEE-754 doubles, so a round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"FFAR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQI")


class ArchiveError(Exception):
    code = "archive"


class ArchiveFormatError(ArchiveError):
    code = "format"


class ArchiveVersionError(ArchiveError):
    code = "version"


class ArchiveTruncatedError(ArchiveError):
    code = "truncated"


class ArchiveChecksumError(ArchiveError):
    code = "checksum"


def _encode(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _decode(body: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    view = memoryview(body)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ArchiveTruncatedError("archive body ends early")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arrays[name] = np.frombuffer(bytes(take(8 * n)), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise ArchiveFormatError("trailing bytes after last array")
    return arrays, meta


def write_archive(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any],
                  level: int = 6) -> None:
    payload = zlib.compress(_encode(arrays, dict(meta, format_version=FORMAT_VERSION)), level)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, len(payload), zlib.crc32(payload) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    tmp.replace(path)


def read_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ArchiveTruncatedError(f"{path}: header truncated")
    magic, version, _flags, length, crc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveFormatError(f"{path}: not an archive (bad magic)")
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) < length:
        raise ArchiveTruncatedError(f"{path}: payload has {len(payload)} of {length} bytes")
    payload = payload[:length]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ArchiveChecksumError(f"{path}: checksum mismatch")
    try:
        body = zlib.decompress(payload)
    except zlib.error as exc:
        raise ArchiveChecksumError(f"{path}: corrupt payload ({exc})") from exc
    arrays, meta = _decode(body)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ArchiveVersionError(f"{path}: metadata version {meta.get('format_version')}")
    return arrays, meta
