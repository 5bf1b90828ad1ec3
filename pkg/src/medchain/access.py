"""Session-key transactions and patient-controlled access.

Three transaction kinds move wrapped session keys around:

* ``create``: a patient makes a fresh session key and wraps it for itself.
* ``grant``: the patient rewraps its current key for a provider.
* ``provider_record``: a provider encrypts a record under a fresh key, stores
  it in the cloud and wraps that key for the patient.

Every transaction's digest is mined onto the chain. Readers recover keys only
by unwrapping mined transactions addressed to them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Set, Tuple

from .cloud_store import CloudStore, SignedRecord, sign_record
from .codec import enc, lp, u64
from .crypto_core import (
    Ciphertext,
    EntropySource,
    KeyEpochRegistry,
    KeyPair,
    SessionKey,
    Signature,
    decrypt_sym,
    encrypt_sym,
    hash_bytes,
    sign,
    system_entropy,
    unwrap_key,
    verify,
    wrap_key,
)
from .errors import AccessError, DecryptionError, MiningRejected
from .ledger import PayloadKind, PoAChain
from .overlay import Overlay

logger = logging.getLogger(__name__)


class TxnKind(str, Enum):
    CREATE = "create"
    GRANT = "grant"
    PROVIDER_RECORD = "provider_record"


@dataclass(frozen=True)
class SessionKeyTxn:
    txn_id: str
    kind: TxnKind
    patient_id: str
    provider_id: Optional[str]
    wrapped_key: Ciphertext
    key_epoch: int
    record_ref: Optional[Tuple[str, int]]
    issuer_id: str
    issued_at: int
    issuer_signature: Optional[Signature] = None

    @property
    def recipient_id(self) -> str:
        return self.provider_id if self.kind is TxnKind.GRANT else self.patient_id

    def signing_bytes(self) -> bytes:
        ref = f"{self.record_ref[0]}:{self.record_ref[1]}" if self.record_ref else ""
        return lp(enc(self.txn_id), enc(self.kind.value), enc(self.patient_id),
                  enc(self.provider_id or ""), self.wrapped_key.to_bytes(), u64(self.key_epoch),
                  enc(ref), enc(self.issuer_id), u64(self.issued_at))

    def to_bytes(self) -> bytes:
        sig = self.issuer_signature.bytes if self.issuer_signature else b""
        return lp(self.signing_bytes(), sig)

    def digest(self) -> bytes:
        return hash_bytes(self.to_bytes())

    def log_line(self) -> str:
        ref = f"{self.record_ref[0]}:{self.record_ref[1]}" if self.record_ref else ""
        return " ".join([self.txn_id, self.kind.value, f"patient={self.patient_id}",
                         f"provider={self.provider_id or ''}", f"epoch={self.key_epoch}",
                         f"ref={ref}", f"digest={self.digest().hex()}",
                         f"txn={self.to_bytes().hex()}"])


@dataclass
class GrantState:
    granted_epochs: Set[int] = field(default_factory=set)
    revoked: bool = False


class DeviceOpDecision(str, Enum):
    APPROVED = "approved"
    DENIED = "denied"


@dataclass(frozen=True)
class DeviceOpLogEntry:
    tick: int
    provider_id: str
    device_id: str
    operation: str
    cluster_head: Optional[str]
    decision: DeviceOpDecision


class AccessManager:
    """Issues the three transaction kinds and answers access questions.

    ``keyring`` holds every party's key pair; at desk scale all parties run
    in-process, but each operation only touches the keys its actor owns.
    """

    def __init__(self, overlay: Overlay, chain: PoAChain, cloud: CloudStore,
                 keyring: Mapping[str, KeyPair], epochs: Optional[KeyEpochRegistry] = None,
                 rng: EntropySource = system_entropy):
        self.overlay = overlay
        self.chain = chain
        self.cloud = cloud
        self._keyring = keyring
        self._rng = rng
        self.epochs = epochs or KeyEpochRegistry(rng)
        self.txns: Dict[str, SessionKeyTxn] = {}
        self.mined: List[str] = []
        self.pending: List[str] = []
        self.grants: Dict[Tuple[str, str], GrantState] = {}
        self.device_log: List[DeviceOpLogEntry] = []
        # device-side state: the key a patient's device currently encrypts with
        self._device_keys: Dict[str, SessionKey] = {}
        self._next_txn = 1
        self._next_record = 1

    # ------------------------------------------------------------ helpers

    def _keys(self, node_id: str) -> KeyPair:
        try:
            return self._keyring[node_id]
        except KeyError:
            raise AccessError(f"no key pair for {node_id!r}") from None

    def _keeper_for(self, node_id: str) -> str:
        head = self.overlay.cluster_of(node_id).head_id
        ids = self.chain.config.authority_ids
        return head if head in ids else ids[0]

    def _issue(self, kind: TxnKind, patient_id: str, provider_id: Optional[str],
               wrapped: Ciphertext, epoch: int, record_ref, issuer_id: str,
               tick: int) -> SessionKeyTxn:
        txn_id = f"txn-{self._next_txn:06d}"
        self._next_txn += 1
        unsigned = SessionKeyTxn(txn_id, kind, patient_id, provider_id, wrapped, epoch,
                                 record_ref, issuer_id, tick)
        txn = SessionKeyTxn(txn_id, kind, patient_id, provider_id, wrapped, epoch, record_ref,
                            issuer_id, tick,
                            sign(self._keys(issuer_id).private_key, unsigned.signing_bytes()))
        self.txns[txn_id] = txn
        try:
            self.chain.propose_and_mine(self._keeper_for(issuer_id), txn.digest(),
                                        PayloadKind.TXN, None, tick)
        except MiningRejected:
            self.pending.append(txn_id)
            raise
        self.mined.append(txn_id)
        logger.debug("mined %s (%s) for %s", txn_id, kind.value, patient_id)
        return txn

    def mined_txns(self) -> List[SessionKeyTxn]:
        return [self.txns[t] for t in self.mined]

    def verify_txn(self, txn: SessionKeyTxn) -> bool:
        node = self.overlay.nodes.get(txn.issuer_id)
        return node is not None and verify(node.public_key, txn.signing_bytes(),
                                           txn.issuer_signature)

    # ------------------------------------------------------------ transactions

    def txn1_create(self, patient_id: str, tick: int = 0) -> SessionKeyTxn:
        if not self.overlay.is_requestee(patient_id):
            raise AccessError(f"{patient_id!r} is not a registered patient device")
        self.epochs.register(patient_id)
        key = self.epochs.generate_session_key(patient_id)
        wrapped = wrap_key(self._keys(patient_id).public_key, key, self._rng)
        txn = self._issue(TxnKind.CREATE, patient_id, None, wrapped, key.epoch, None,
                          patient_id, tick)
        self._device_keys[patient_id] = key
        return txn

    def _patient_current_key(self, patient_id: str) -> SessionKey:
        """The patient fetches its latest create txn from the ledger and unwraps it."""
        creates = [t for t in self.mined_txns()
                   if t.kind is TxnKind.CREATE and t.patient_id == patient_id]
        if not creates:
            raise AccessError(f"{patient_id} has no session key yet")
        return unwrap_key(self._keys(patient_id).private_key, creates[-1].wrapped_key)

    def txn2_grant(self, patient_id: str, provider_id: str, tick: int = 0) -> SessionKeyTxn:
        if not self.overlay.is_requester(provider_id):
            raise AccessError(f"{provider_id!r} is not a registered provider")
        key = self._patient_current_key(patient_id)
        wrapped = wrap_key(self.overlay.public_key(provider_id), key, self._rng)
        txn = self._issue(TxnKind.GRANT, patient_id, provider_id, wrapped, key.epoch, None,
                          patient_id, tick)
        state = self.grants.setdefault((patient_id, provider_id), GrantState())
        state.granted_epochs.add(key.epoch)
        state.revoked = False
        return txn

    def txn3_provider_record(self, provider_id: str, patient_id: str, record_plaintext: bytes,
                             tick: int = 0) -> SessionKeyTxn:
        if not self.overlay.is_requester(provider_id):
            raise AccessError(f"{provider_id!r} is not a registered provider")
        if not self.overlay.is_requestee(patient_id):
            raise AccessError(f"{patient_id!r} is not a registered patient device")
        self.epochs.register(provider_id)
        key = self.epochs.generate_session_key(provider_id)
        record = self._seal_record(provider_id, patient_id, record_plaintext, key)
        outcome = self.cloud.ingest(record, tick)
        if not outcome.accepted:
            raise AccessError(f"cloud rejected provider record: {outcome.reason.value}")
        wrapped = wrap_key(self.overlay.public_key(patient_id), key, self._rng)
        return self._issue(TxnKind.PROVIDER_RECORD, patient_id, provider_id, wrapped, key.epoch,
                           (outcome.block_id, outcome.index), provider_id, tick)

    def revoke_access(self, patient_id: str, provider_id: str, tick: int = 0) -> GrantState:
        state = self.grants.get((patient_id, provider_id))
        if state is None:
            raise AccessError(f"{patient_id} never granted {provider_id}")
        if state.revoked:
            raise AccessError(f"access of {provider_id} to {patient_id} already revoked")
        state.revoked = True
        self.txn1_create(patient_id, tick)
        return state

    def request_device_operation(self, provider_id: str, device_id: str, operation: str,
                                 tick: int = 0) -> DeviceOpDecision:
        if device_id not in self.overlay.nodes or not self.overlay.is_requestee(device_id):
            raise AccessError(f"unknown device {device_id!r}")
        state = self.grants.get((device_id, provider_id))
        ok = (self.overlay.is_requester(provider_id) and state is not None
              and not state.revoked)
        decision = DeviceOpDecision.APPROVED if ok else DeviceOpDecision.DENIED
        head = self.overlay.cluster_of(device_id).head_id
        self.device_log.append(
            DeviceOpLogEntry(tick, provider_id, device_id, operation, head, decision))
        return decision

    # ------------------------------------------------------------ records

    def _seal_record(self, signer_id: str, patient_id: str, plaintext: bytes,
                     key: SessionKey) -> SignedRecord:
        record_id = f"rec-{self._next_record:06d}"
        self._next_record += 1
        payload = encrypt_sym(key, plaintext, self._rng)
        kp = self._keys(signer_id)
        return sign_record(record_id, patient_id, payload, kp.private_key, kp.public_key)

    def device_record(self, patient_id: str, plaintext: bytes) -> SignedRecord:
        """Encrypt and sign a reading on the patient's device under its current key."""
        key = self._device_keys.get(patient_id)
        if key is None:
            raise AccessError(f"{patient_id} has no session key yet")
        return self._seal_record(patient_id, patient_id, plaintext, key)

    def device_epoch(self, patient_id: str) -> int:
        key = self._device_keys.get(patient_id)
        return key.epoch if key else 0

    def decrypt_record(self, reader_id: str, record: SignedRecord) -> bytes:
        """Decrypt with whatever keys ``reader_id`` can unwrap from mined transactions."""
        sk = self._keys(reader_id).private_key
        for txn in self.mined_txns():
            if txn.patient_id != record.patient_id or txn.recipient_id != reader_id:
                continue
            try:
                key = unwrap_key(sk, txn.wrapped_key)
                return decrypt_sym(key, record.payload)
            except DecryptionError:
                continue
        raise AccessError(f"{reader_id} holds no key for record {record.record_id}")

    def can_decrypt(self, reader_id: str, record: SignedRecord) -> bool:
        try:
            self.decrypt_record(reader_id, record)
            return True
        except AccessError:
            return False
