"""Digest-only hash chain mined by Proof-of-Authority rotation.

Cluster Heads are the authorities. Slot ``s`` belongs to
``authority_ids[s mod N]``; a block appends once at least ``floor(N/2)+1``
authorities (the signer included) acknowledge it. A failed slot passes the
turn to the next authority, so with no faults slot and height coincide.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .codec import from_hex, lp_short, u64
from .crypto_core import (
    DIGEST_SIZE,
    SIGNATURE_SIZE,
    ZERO_DIGEST,
    hash_bytes,
    sign,
    verify,
)
from .errors import MiningRejected, OverlayError

logger = logging.getLogger(__name__)


class PayloadKind(str, Enum):
    DATA_BLOCK = "data_block"
    TXN = "txn"


_KIND_CODE = {PayloadKind.DATA_BLOCK: 0, PayloadKind.TXN: 1}


def quorum(n: int) -> int:
    if n < 1:
        raise OverlayError("authority count must be at least 1")
    return n // 2 + 1


@dataclass(frozen=True)
class PoAConfig:
    authority_ids: Tuple[str, ...]

    def __post_init__(self):
        if not self.authority_ids:
            raise OverlayError("at least one authority is required")
        if len(set(self.authority_ids)) != len(self.authority_ids):
            raise OverlayError("authority ids must be unique")

    @property
    def n(self) -> int:
        return len(self.authority_ids)

    @property
    def quorum(self) -> int:
        return quorum(self.n)

    def scheduled(self, slot: int) -> str:
        return self.authority_ids[slot % self.n]


@dataclass(frozen=True)
class ChainBlock:
    height: int
    prev_hash: bytes
    payload_root: bytes
    payload_kind: PayloadKind
    cloud_block_ref: Optional[str]
    authority_id: str
    authority_signature: bytes
    timestamp: int

    def signing_bytes(self) -> bytes:
        return (u64(self.height) + self.prev_hash + self.payload_root
                + bytes([_KIND_CODE[self.payload_kind]])
                + lp_short((self.cloud_block_ref or "").encode())
                + lp_short(self.authority_id.encode()) + u64(self.timestamp))

    def to_bytes(self) -> bytes:
        return self.signing_bytes() + self.authority_signature

    def digest(self) -> bytes:
        return hash_bytes(self.to_bytes())

    def dump_line(self) -> str:
        return "|".join([
            str(self.height), self.prev_hash.hex(), self.payload_root.hex(),
            self.payload_kind.value, self.cloud_block_ref or "", self.authority_id,
            self.authority_signature.hex(), str(self.timestamp)])


def _canonical_int(s: str) -> int:
    if not s.isdigit() or (len(s) > 1 and s[0] == "0"):
        raise ValueError(f"not a canonical non-negative integer: {s!r}")
    return int(s)


def parse_dump_line(line: str) -> ChainBlock:
    parts = line.split("|")
    if len(parts) != 8:
        raise ValueError(f"expected 8 fields, got {len(parts)}")
    height, prev, root, kind, ref, aid, sig, ts = parts
    prev_b, root_b, sig_b = from_hex(prev), from_hex(root), from_hex(sig)
    if len(prev_b) != DIGEST_SIZE or len(root_b) != DIGEST_SIZE:
        raise ValueError("digest fields must be 32 octets")
    if len(sig_b) != SIGNATURE_SIZE:
        raise ValueError("signature must be 64 octets")
    if not aid:
        raise ValueError("empty authority id")
    return ChainBlock(_canonical_int(height), prev_b, root_b, PayloadKind(kind), ref or None,
                      aid, sig_b, _canonical_int(ts))


def render_dump(blocks: Iterable[ChainBlock]) -> str:
    return "".join(b.dump_line() + "\n" for b in blocks)


def parse_dump(text: str) -> List[ChainBlock]:
    """Parse a ledger dump. Raises ValueError on any malformed or truncated line."""
    if text == "":
        return []
    if not text.endswith("\n"):
        raise ValueError("ledger dump is truncated (no trailing newline)")
    blocks = []
    for lineno, line in enumerate(text[:-1].split("\n"), 1):
        try:
            blocks.append(parse_dump_line(line))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return blocks


@dataclass(frozen=True)
class ChainValidation:
    valid: bool
    height: Optional[int] = None
    reason: str = ""


def validate_chain(blocks: Sequence[ChainBlock],
                   authority_keys: Mapping[str, bytes]) -> ChainValidation:
    prev = None
    for i, block in enumerate(blocks):
        if block.height != i:
            return ChainValidation(False, i, "bad_height")
        if i == 0:
            if block.prev_hash != ZERO_DIGEST:
                return ChainValidation(False, 0, "bad_genesis")
        else:
            if block.prev_hash != prev.digest():
                return ChainValidation(False, i, "broken_link")
            if block.timestamp < prev.timestamp:
                return ChainValidation(False, i, "timestamp_regression")
        key = authority_keys.get(block.authority_id)
        if key is None:
            return ChainValidation(False, i, "unknown_authority")
        if not verify(key, block.signing_bytes(), block.authority_signature):
            return ChainValidation(False, i, "bad_signature")
        prev = block
    return ChainValidation(True)


@dataclass
class PoAChain:
    """The replicated ledger plus the authorities that mine it.

    ``signing_keys`` maps each authority id to its private key (all
    authorities run in-process). ``faults`` maps an authority id to the tick
    from which it refuses to sign or acknowledge anything.
    """

    config: PoAConfig
    authority_keys: Dict[str, bytes]
    signing_keys: Dict[str, bytes] = field(repr=False, default_factory=dict)
    faults: Dict[str, int] = field(default_factory=dict)
    blocks: List[ChainBlock] = field(default_factory=list)
    slot: int = 0
    rejections: int = 0

    def __post_init__(self):
        missing = [a for a in self.config.authority_ids if a not in self.authority_keys]
        if missing:
            raise OverlayError(f"authorities without registered keys: {missing}")

    @property
    def height(self) -> int:
        """Number of blocks on the chain (the next block's height)."""
        return len(self.blocks)

    def head_hash(self) -> bytes:
        return self.blocks[-1].digest() if self.blocks else ZERO_DIGEST

    def refuses(self, authority_id: str, tick: int) -> bool:
        start = self.faults.get(authority_id)
        return start is not None and tick >= start

    def sign_block(self, authority_id: str, payload_root: bytes, payload_kind: PayloadKind,
                   cloud_block_ref: Optional[str], tick: int) -> ChainBlock:
        if authority_id != self.config.scheduled(self.slot):
            raise MiningRejected("not_your_turn",
                                 f"slot {self.slot} belongs to {self.config.scheduled(self.slot)}")
        if len(payload_root) != DIGEST_SIZE:
            raise OverlayError("payload root must be a 32-octet digest")
        unsigned = ChainBlock(self.height, self.head_hash(), payload_root, PayloadKind(payload_kind),
                              cloud_block_ref, authority_id, b"", tick)
        sig = sign(self.signing_keys[authority_id], unsigned.signing_bytes())
        return replace(unsigned, authority_signature=sig.bytes)

    def acknowledge(self, authority_id: str, block: ChainBlock, tick: int) -> bool:
        """One authority's check of a proposed block against its replica."""
        if self.refuses(authority_id, tick):
            return False
        return (block.height == self.height
                and block.prev_hash == self.head_hash()
                and (not self.blocks or block.timestamp >= self.blocks[-1].timestamp)
                and block.authority_id == self.config.scheduled(self.slot)
                and verify(self.authority_keys[block.authority_id], block.signing_bytes(),
                           block.authority_signature))

    def propose_and_mine(self, keeper_ch: str, payload_root: bytes, payload_kind: PayloadKind,
                         cloud_block_ref: Optional[str] = None, tick: int = 0) -> ChainBlock:
        """Mine one digest, retrying across at most N rotation slots.

        Raises :class:`MiningRejected` with reason ``no_quorum`` when no slot
        in a full rotation gathers a majority.
        """
        if keeper_ch not in self.config.authority_ids:
            raise OverlayError(f"{keeper_ch!r} is not an authority")
        for _ in range(self.config.n):
            signer = self.config.scheduled(self.slot)
            if self.refuses(signer, tick):
                logger.debug("slot %d: scheduled signer %s is silent", self.slot, signer)
                self.slot += 1
                self.rejections += 1
                continue
            block = self.sign_block(signer, payload_root, payload_kind, cloud_block_ref, tick)
            acks = sum(self.acknowledge(a, block, tick) for a in self.config.authority_ids)
            self.slot += 1
            if acks >= self.config.quorum:
                self.blocks.append(block)
                return block
            logger.debug("slot %d: %d/%d acks, quorum %d", self.slot - 1, acks,
                         self.config.n, self.config.quorum)
            self.rejections += 1
        raise MiningRejected("no_quorum", f"no slot in a rotation reached {self.config.quorum} acks")

    def validate(self) -> ChainValidation:
        return validate_chain(self.blocks, self.authority_keys)

    def storage_bytes(self) -> int:
        return sum(len(b.to_bytes()) for b in self.blocks)

    def signed_by(self) -> Dict[str, int]:
        counts = {a: 0 for a in self.config.authority_ids}
        for b in self.blocks:
            counts[b.authority_id] += 1
        return counts


# ---------------------------------------------------------------- authority file

def render_authorities(config: PoAConfig, keys: Mapping[str, bytes]) -> str:
    doc = {
        "authority_ids": list(config.authority_ids),
        "public_keys": {a: keys[a].hex() for a in config.authority_ids},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_authorities(text: str) -> Tuple[PoAConfig, Dict[str, bytes]]:
    try:
        doc = json.loads(text)
        config = PoAConfig(tuple(doc["authority_ids"]))
        keys = {a: from_hex(h) for a, h in doc["public_keys"].items()}
    except (KeyError, TypeError, AttributeError, OverlayError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed authorities file: {exc}") from exc
    return config, keys


def load_authorities(path) -> Tuple[PoAConfig, Dict[str, bytes]]:
    return parse_authorities(Path(path).read_text())
