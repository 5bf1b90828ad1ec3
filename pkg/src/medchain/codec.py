"""Canonical byte layouts: length-prefixed fields and fixed-width integers."""
from __future__ import annotations

import re
import struct
from typing import Iterable

_HEX_RE = re.compile(r"\A(?:[0-9a-f]{2})*\Z")


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def lp(*parts: bytes) -> bytes:
    """Concatenate parts, each preceded by its 4-octet big-endian length."""
    return b"".join(struct.pack(">I", len(p)) + p for p in parts)


def lp_short(part: bytes) -> bytes:
    if len(part) > 0xFFFF:
        raise ValueError("field longer than 65535 octets")
    return struct.pack(">H", len(part)) + part


def split_lp(data: bytes) -> list[bytes]:
    """Inverse of :func:`lp`; raises ValueError on any framing error."""
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("truncated field")
        out.append(data[pos:pos + n])
        pos += n
    return out


def to_hex(b: bytes) -> str:
    return b.hex()


def from_hex(s: str) -> bytes:
    """Strict lowercase-hex decoder; rejects uppercase and whitespace."""
    if not _HEX_RE.match(s):
        raise ValueError(f"not canonical lowercase hex: {s[:16]!r}")
    return bytes.fromhex(s)


def enc(s: str) -> bytes:
    return s.encode("utf-8")


def join_hex(parts: Iterable[bytes]) -> str:
    return "".join(p.hex() for p in parts)
