"""Framing shared by the raster, mask and checkpoint files.

Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header,
payload bytes, then the 64-bit FNV-1a hash of the payload (little-endian).
Files are written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class HeaderError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return magic + struct.pack("<I", len(head)) + head + payload + struct.pack("<Q", fnv1a64(payload))


def unpack(blob: bytes, magic: bytes, payload_size) -> tuple[dict, bytes]:
    """Split ``blob`` into (header, payload).

    ``payload_size`` maps the parsed header to the expected payload length and
    should raise :class:`HeaderError` for an inconsistent header.
    """
    if blob[: len(magic)] != magic:
        raise BadMagicError(f"bad magic {blob[:len(magic)]!r}, expected {magic!r}")
    pos = len(magic)
    if len(blob) < pos + 4:
        raise TruncatedError("file ends inside the header length")
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + hlen:
        raise TruncatedError("file ends inside the header")
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError("header is not a JSON object")
    pos += hlen
    size = payload_size(header)
    if len(blob) < pos + size + 8:
        raise TruncatedError(f"payload truncated: need {size + 8} bytes, have {len(blob) - pos}")
    payload = blob[pos : pos + size]
    (stored,) = struct.unpack_from("<Q", blob, pos + size)
    if stored != fnv1a64(payload):
        raise ChecksumError("payload checksum mismatch")
    return header, payload
