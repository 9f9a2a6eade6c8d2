"""Self-describing binary container shared by checkpoints and datasets.

Layout (all integers little-endian)::

    magic      8 bytes   b"GEPSCTR\\0"
    version    u32
    length     u64       number of payload bytes that follow
    payload:
        meta_len u64, meta (UTF-8 JSON, sorted keys)
        count    u32
        count x [name_len u32, name UTF-8, rank u32, dims u64 * rank,
                 data float64 * prod(dims)]
    digest     32 bytes  SHA-256 of everything above

Only float64 arrays are stored; anything else belongs in the metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GEPSCTR\x00"
FORMAT_VERSION = 1
_DIGEST_LEN = 32
_HEADER = struct.Struct("<8sIQ")


class ContainerError(Exception):
    """Base class for container read failures."""


class ContainerFormatError(ContainerError):
    pass


class ContainerVersionError(ContainerError):
    def __init__(self, found: int, supported: int = FORMAT_VERSION):
        super().__init__(
            f"container format version {found} is not supported "
            f"(this build reads version {supported})"
        )
        self.found = found
        self.supported = supported


class ContainerTruncatedError(ContainerError):
    pass


class ContainerChecksumError(ContainerError):
    pass


def encode(arrays: Mapping[str, np.ndarray], meta: Mapping | None = None,
           version: int = FORMAT_VERSION) -> bytes:
    meta_bytes = json.dumps(dict(meta or {}), sort_keys=True,
                            separators=(",", ":")).encode()
    parts = [struct.pack("<Q", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype != np.float64:
            raise TypeError(f"array {name!r} has dtype {a.dtype}, expected float64")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    payload = b"".join(parts)
    body = _HEADER.pack(MAGIC, version, len(payload)) + payload
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _HEADER.size:
        if blob[: len(MAGIC)] != MAGIC[: len(blob)]:
            raise ContainerFormatError("not a GEPS container (bad magic)")
        raise ContainerTruncatedError(
            f"file holds {len(blob)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, length = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerFormatError("not a GEPS container (bad magic)")
    if version != FORMAT_VERSION:
        raise ContainerVersionError(version)
    end = _HEADER.size + length
    if len(blob) < end + _DIGEST_LEN:
        raise ContainerTruncatedError(
            f"expected {end + _DIGEST_LEN} bytes, found {len(blob)}")
    if hashlib.sha256(blob[:end]).digest() != blob[end:end + _DIGEST_LEN]:
        raise ContainerChecksumError("SHA-256 digest mismatch; file is corrupted")

    pos = _HEADER.size
    (meta_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    meta = json.loads(blob[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
        pos += 8 * n
        arrays[name] = data.astype(np.float64).reshape(dims)
    return arrays, meta


def write(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(encode(arrays, meta))


def read(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
