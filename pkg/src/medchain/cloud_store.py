"""Signature-gated cloud storage.

Records arrive encrypted and signed. The store never decrypts; it checks the
signature and the signer's registration, groups accepted records into
per-patient blocks, and hands each sealed block's Merkle root to the overlay.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from . import merkle
from .codec import enc, from_hex, lp, split_lp
from .crypto_core import Ciphertext, Scheme, Signature, sign, verify
from .errors import StoreError

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 16


@dataclass(frozen=True)
class SignedRecord:
    record_id: str
    patient_id: str
    payload: Ciphertext
    signature: Optional[Signature]
    signer_public_key: bytes

    def signing_bytes(self) -> bytes:
        p = self.payload
        return lp(enc(self.record_id), enc(self.patient_id), p.nonce, p.body, p.auth_tag)

    def to_bytes(self) -> bytes:
        """Merkle-leaf / on-disk form: the signed fields plus signature and signer key."""
        p = self.payload
        sig = self.signature.bytes if self.signature is not None else b""
        return lp(enc(self.record_id), enc(self.patient_id), p.nonce, p.body, p.auth_tag,
                  sig, self.signer_public_key)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignedRecord":
        fields = split_lp(data)
        if len(fields) != 7:
            raise ValueError(f"record has {len(fields)} fields, expected 7")
        rid, pid, nonce, body, tag, sig, signer = fields
        return cls(rid.decode(), pid.decode(), Ciphertext(Scheme.SYMMETRIC, nonce, body, tag),
                   Signature(sig, signer) if sig else None, signer)


def sign_record(record_id: str, patient_id: str, payload: Ciphertext,
                private_key: bytes, public_key: bytes) -> SignedRecord:
    unsigned = SignedRecord(record_id, patient_id, payload, None, public_key)
    return SignedRecord(record_id, patient_id, payload,
                        sign(private_key, unsigned.signing_bytes()), public_key)


class DiscardReason(str, Enum):
    MISSING_SIGNATURE = "missing_signature"
    BAD_SIGNATURE = "bad_signature"
    UNREGISTERED_SIGNER = "unregistered_signer"


@dataclass(frozen=True)
class IngestOutcome:
    accepted: bool
    reason: Optional[DiscardReason] = None
    block_id: Optional[str] = None
    index: Optional[int] = None
    sealed: Optional["DataBlock"] = None


@dataclass(frozen=True)
class DataBlock:
    block_id: str
    patient_id: str
    records: Tuple[SignedRecord, ...]
    merkle_root: bytes
    sealed_at: Optional[int] = None

    def tree(self) -> merkle.MerkleTree:
        return merkle.build_tree([r.to_bytes() for r in self.records])


@dataclass(frozen=True)
class BlockAnnouncement:
    block_id: str
    patient_id: str
    merkle_root: bytes


@dataclass(frozen=True)
class AuditResult:
    passed: bool
    block_id: str
    detail: str = ""


@dataclass
class _OpenBlock:
    block_id: str
    records: List[SignedRecord] = field(default_factory=list)


class CloudStore:
    """Per-patient block store.

    ``key_gate`` answers whether a signer public key belongs to a registered
    node; ``on_seal`` receives a :class:`BlockAnnouncement` for every sealed block.
    """

    def __init__(self, key_gate: Callable[[bytes], bool], capacity: int = DEFAULT_CAPACITY,
                 on_seal: Optional[Callable[[BlockAnnouncement], None]] = None):
        if capacity < 1:
            raise StoreError("block capacity must be at least 1")
        self._key_gate = key_gate
        self.capacity = capacity
        self._on_seal = on_seal
        self._open: Dict[str, _OpenBlock] = {}
        self.blocks: Dict[str, DataBlock] = {}
        self._next_block = 1
        self.accepted_count = 0
        self.discarded: Dict[DiscardReason, int] = {r: 0 for r in DiscardReason}

    @property
    def discarded_count(self) -> int:
        return sum(self.discarded.values())

    def ingest(self, record: SignedRecord, tick: int = 0) -> IngestOutcome:
        reason = self._check(record)
        if reason is not None:
            self.discarded[reason] += 1
            logger.info("discarded record %s: %s", record.record_id, reason.value)
            return IngestOutcome(False, reason)
        ob = self._open.get(record.patient_id)
        if ob is None:
            ob = self._open[record.patient_id] = _OpenBlock(f"blk-{self._next_block:06d}")
            self._next_block += 1
        ob.records.append(record)
        index = len(ob.records) - 1
        self.accepted_count += 1
        sealed = None
        if len(ob.records) >= self.capacity:
            sealed = self.seal_block(record.patient_id, tick)
        return IngestOutcome(True, None, ob.block_id, index, sealed)

    def _check(self, record: SignedRecord) -> Optional[DiscardReason]:
        if record.signature is None or not record.signature.bytes:
            return DiscardReason.MISSING_SIGNATURE
        if not verify(record.signer_public_key, record.signing_bytes(), record.signature):
            return DiscardReason.BAD_SIGNATURE
        if not self._key_gate(record.signer_public_key):
            return DiscardReason.UNREGISTERED_SIGNER
        return None

    def open_block_id(self, patient_id: str) -> Optional[str]:
        ob = self._open.get(patient_id)
        return ob.block_id if ob else None

    def seal_block(self, patient_id: str, tick: int = 0) -> DataBlock:
        ob = self._open.pop(patient_id, None)
        if ob is None or not ob.records:
            raise StoreError(f"no open records for patient {patient_id!r}")
        records = tuple(ob.records)
        tree = merkle.build_tree([r.to_bytes() for r in records])
        block = DataBlock(ob.block_id, patient_id, records, merkle.root(tree), tick)
        self.blocks[block.block_id] = block
        logger.debug("sealed %s for %s with %d records", block.block_id, patient_id, len(records))
        if self._on_seal is not None:
            self._on_seal(BlockAnnouncement(block.block_id, patient_id, block.merkle_root))
        return block

    def seal_all(self, tick: int = 0) -> List[DataBlock]:
        return [self.seal_block(pid, tick) for pid in sorted(self._open)]

    def fetch_record(self, block_id: str, index: int) -> Tuple[SignedRecord, merkle.MerkleProof]:
        block = self.blocks.get(block_id)
        if block is None:
            if any(ob.block_id == block_id for ob in self._open.values()):
                raise StoreError(f"block {block_id} is not sealed")
            raise StoreError(f"unknown block {block_id!r}")
        if not 0 <= index < len(block.records):
            raise StoreError(f"record index {index} out of range in {block_id}")
        return block.records[index], merkle.prove(block.tree(), index)

    def audit_block(self, block_id: str, ledger_root: bytes) -> AuditResult:
        block = self.blocks.get(block_id)
        if block is None:
            raise StoreError(f"unknown block {block_id!r}")
        return audit_records(block_id, block.records, ledger_root)

    # ------------------------------------------------------------ persistence

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for block_id in sorted(self.blocks):
            (directory / block_id).write_bytes(render_block_file(self.blocks[block_id]))


def audit_records(block_id: str, records, ledger_root: bytes) -> AuditResult:
    if not records:
        return AuditResult(False, block_id, "block holds no records")
    for i, rec in enumerate(records):
        if rec.signature is None or not verify(rec.signer_public_key, rec.signing_bytes(),
                                               rec.signature):
            return AuditResult(False, block_id, f"record {i} signature does not verify")
    recomputed = merkle.root(merkle.build_tree([r.to_bytes() for r in records]))
    if recomputed != ledger_root:
        return AuditResult(False, block_id,
                           f"merkle root {recomputed.hex()} != ledger {ledger_root.hex()}")
    return AuditResult(True, block_id)


def render_block_file(block: DataBlock) -> bytes:
    lines = [f"root {block.merkle_root.hex()}"]
    lines += [f"record {r.to_bytes().hex()}" for r in block.records]
    return ("\n".join(lines) + "\n").encode("ascii")


def parse_block_file(block_id: str, data: bytes) -> DataBlock:
    """Strict parser: anything but the exact canonical rendering is rejected."""
    try:
        text = data.decode("ascii")
        lines = text.split("\n")
        if lines[-1] != "" or len(lines) < 3:
            raise ValueError("bad line structure")
        head, *body = lines[:-1]
        tag, _, root_hex = head.partition(" ")
        if tag != "root":
            raise ValueError("missing root line")
        merkle_root = from_hex(root_hex)
        records = []
        for line in body:
            tag, _, rec_hex = line.partition(" ")
            if tag != "record":
                raise ValueError(f"unexpected line tag {tag!r}")
            records.append(SignedRecord.from_bytes(from_hex(rec_hex)))
        patients = {r.patient_id for r in records}
        if len(patients) != 1:
            raise ValueError("records span several patients")
        block = DataBlock(block_id, patients.pop(), tuple(records), merkle_root)
    except (UnicodeDecodeError, ValueError) as exc:
        raise StoreError(f"block file {block_id}: {exc}") from exc
    if render_block_file(block) != data:
        raise StoreError(f"block file {block_id}: not in canonical form")
    return block


def audit_block_file(path, ledger_root: bytes) -> AuditResult:
    path = Path(path)
    block_id = path.name
    try:
        block = parse_block_file(block_id, path.read_bytes())
    except FileNotFoundError:
        return AuditResult(False, block_id, "block file missing")
    except StoreError as exc:
        return AuditResult(False, block_id, str(exc))
    if block.merkle_root != ledger_root:
        return AuditResult(False, block_id, "stored root differs from ledger root")
    return audit_records(block_id, block.records, ledger_root)


def list_block_files(directory) -> List[str]:
    return sorted(os.listdir(directory))
