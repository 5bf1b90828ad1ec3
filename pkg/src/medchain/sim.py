"""Deterministic tick-loop runner and the audit / chain-verification tools."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .access import AccessManager, DeviceOpDecision
from .cloud_store import (
    BlockAnnouncement,
    CloudStore,
    SignedRecord,
    audit_block_file,
    audit_records,
    render_block_file,
)
from .contracts import AlertEvent, ContractRegistry, DEFAULT_UNITS, HealthReading
from .crypto_core import KeyPair, generate_keypair, seeded_entropy
from .errors import MedchainError, MiningRejected
from .ledger import (
    ChainBlock,
    PayloadKind,
    PoAChain,
    PoAConfig,
    parse_authorities,
    parse_dump,
    render_authorities,
    render_dump,
    validate_chain,
)
from .overlay import Overlay, Role
from .scenario import ID_RE, ReadingSpec, Scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INPUT_ERROR = 2

LEDGER_FILE = "ledger.dump"
ALERTS_FILE = "alerts.log"
TXNS_FILE = "txns.log"
CLOUD_DIR = "cloud"
AUTHORITIES_FILE = "authorities.json"
DEVICE_OPS_FILE = "device_ops.log"
REPORT_FILE = "report.json"

# event ordering inside one tick
_GRANT, _REVOKE, _PROVIDER_RECORD, _DEVICE_OP, _READING = range(5)


@dataclass
class StoredAlert:
    alert: AlertEvent
    provider_id: str
    block_id: str
    index: int


@dataclass
class RunResult:
    report: Dict
    ledger_dump: str
    alerts_log: str
    txns_log: str
    device_ops_log: str
    authorities: str
    cloud_files: Dict[str, bytes]
    stored_alerts: List[StoredAlert] = field(default_factory=list)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / CLOUD_DIR).mkdir(parents=True, exist_ok=True)
        (out / LEDGER_FILE).write_text(self.ledger_dump)
        (out / ALERTS_FILE).write_text(self.alerts_log)
        (out / TXNS_FILE).write_text(self.txns_log)
        (out / DEVICE_OPS_FILE).write_text(self.device_ops_log)
        (out / AUTHORITIES_FILE).write_text(self.authorities)
        for name, data in sorted(self.cloud_files.items()):
            (out / CLOUD_DIR / name).write_bytes(data)
        (out / REPORT_FILE).write_text(json.dumps(self.report, indent=2, sort_keys=True) + "\n")
        return out


class Simulation:
    """Wires overlay, chain, cloud, contracts and transactions from a scenario.

    Building the simulation has no side effects beyond memory; files appear
    only when :meth:`RunResult.write` is called.
    """

    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        scenario.validate()
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.rng = seeded_entropy(self.seed)

        self.keyring: Dict[str, KeyPair] = {}
        for node_id in scenario.patients + scenario.providers:
            self.keyring[node_id] = generate_keypair(rng=self.rng)

        self.overlay = Overlay()
        patients = set(scenario.patients)
        for spec in scenario.clusters:
            self.overlay.add_cluster(spec.cluster_id)
            for m in spec.members:
                role = Role.REQUESTEE if m.node_id in patients else Role.REQUESTER
                pk = self.keyring[m.node_id].public_key
                self.overlay.add_node(m.node_id, role, pk, spec.cluster_id)
                if role is Role.REQUESTEE:
                    self.overlay.register_requestee(spec.cluster_id, m.node_id, pk)
                else:
                    self.overlay.register_requester(spec.cluster_id, m.node_id, pk)
        heads = [self.overlay.elect_cluster_head(spec.cluster_id,
                                                 {m.node_id: m.degree for m in spec.members})
                 for spec in scenario.clusters]

        self.config = PoAConfig(tuple(heads))
        self.chain = PoAChain(
            self.config,
            authority_keys={h: self.keyring[h].public_key for h in heads},
            signing_keys={h: self.keyring[h].private_key for h in heads},
            faults={f.authority_id: f.refuse_from_tick for f in scenario.faults},
        )
        self._announcements: List[BlockAnnouncement] = []
        self.cloud = CloudStore(self.overlay.is_registered_key, scenario.block_capacity,
                                on_seal=self._announcements.append)
        self.contracts = ContractRegistry(self.overlay.is_requestee, self.overlay.is_requester)
        for c in scenario.contracts:
            self.contracts.deploy_contract(c.patient_id, c.provider_id, c.metric, c.lower, c.upper)
        self.access = AccessManager(self.overlay, self.chain, self.cloud, self.keyring,
                                    rng=self.rng)

        self.alerts: List[AlertEvent] = []
        self.stored_alerts: List[StoredAlert] = []
        self.readings_processed = 0
        self.readings_out_of_band = 0
        self.suppressed_alerts = 0
        self.unmined_blocks: List[str] = []
        self.failed_txns = 0
        self.routing_hops = 0
        self._announced = 0

    # ------------------------------------------------------------ plumbing

    def _drain(self, tick: int) -> None:
        ring = self.config.authority_ids
        while self._announcements:
            ann = self._announcements.pop(0)
            origin = ring[self._announced % len(ring)]
            self._announced += 1
            keeper, hops = self.overlay.route_announcement(ann, origin, ring)
            self.routing_hops += hops
            try:
                self.chain.propose_and_mine(keeper, ann.merkle_root, PayloadKind.DATA_BLOCK,
                                            ann.block_id, tick)
            except MiningRejected as exc:
                logger.warning("block %s not mined: %s", ann.block_id, exc)
                self.unmined_blocks.append(ann.block_id)

    def _txn(self, fn, *args) -> None:
        try:
            fn(*args)
        except MiningRejected as exc:
            logger.warning("transaction not mined: %s", exc)
            self.failed_txns += 1

    def _reading(self, spec: ReadingSpec) -> None:
        self.readings_processed += 1
        reading = HealthReading(spec.patient_id, spec.metric, spec.value, spec.tick,
                                spec.unit or DEFAULT_UNITS.get(spec.metric, ""))
        hits = []
        for contract in self.contracts.active_for(spec.patient_id, spec.metric):
            alert = self.contracts.evaluate(contract.contract_id, reading)
            if alert is not None:
                hits.append((alert, contract.provider_id))
        if not hits:
            return
        self.readings_out_of_band += 1
        if self.access.device_epoch(spec.patient_id) == 0:
            # the device's key transaction never made it onto the chain
            logger.warning("tick %d: %s has no session key, alerts suppressed",
                           spec.tick, spec.patient_id)
            self.suppressed_alerts += len(hits)
            return
        plaintext = json.dumps({"metric": reading.metric, "patient_id": reading.patient_id,
                                "tick": reading.timestamp, "unit": reading.unit,
                                "value": reading.value}, sort_keys=True).encode()
        record = self.access.device_record(spec.patient_id, plaintext)
        record = _inject(record, spec.inject)
        outcome = self.cloud.ingest(record, spec.tick)
        if not outcome.accepted:
            self.suppressed_alerts += len(hits)
            return
        for alert, provider_id in hits:
            self.alerts.append(alert)
            self.stored_alerts.append(StoredAlert(alert, provider_id, outcome.block_id,
                                                  outcome.index))

    # ------------------------------------------------------------ run

    def events(self) -> List[Tuple[int, int, int, object]]:
        sc = self.scenario
        evs: List[Tuple[int, int, int, object]] = []
        for kind, items in ((_GRANT, sc.grants), (_REVOKE, sc.revokes),
                            (_PROVIDER_RECORD, sc.provider_records),
                            (_DEVICE_OP, sc.device_operations), (_READING, sc.telemetry)):
            evs.extend((ev.tick, kind, i, ev) for i, ev in enumerate(items))
        evs.sort(key=lambda e: e[:3])
        return evs

    def run(self) -> RunResult:
        for patient in self.scenario.patients:
            self._txn(self.access.txn1_create, patient, 0)
        self._drain(0)
        tick = 0
        for tick, kind, _, ev in self.events():
            if kind == _GRANT:
                self._txn(self.access.txn2_grant, ev.patient_id, ev.provider_id, tick)
            elif kind == _REVOKE:
                self._txn(self.access.revoke_access, ev.patient_id, ev.provider_id, tick)
            elif kind == _PROVIDER_RECORD:
                self._txn(self.access.txn3_provider_record, ev.provider_id, ev.patient_id,
                          ev.record.encode(), tick)
            elif kind == _DEVICE_OP:
                self.access.request_device_operation(ev.provider_id, ev.device_id,
                                                     ev.operation, tick)
            else:
                self._reading(ev)
            self._drain(tick)
        self.cloud.seal_all(tick)
        self._drain(tick)
        return self._result()

    def _result(self) -> RunResult:
        cloud_files = {bid: render_block_file(b) for bid, b in self.cloud.blocks.items()}
        ledger_dump = render_dump(self.chain.blocks)
        authorities = render_authorities(self.config, self.chain.authority_keys)
        audit = audit_outputs(self.chain.blocks, self.chain.authority_keys,
                              {bid: b for bid, b in self.cloud.blocks.items()})
        ops = self.access.device_log
        report = {
            "seed": self.seed,
            "readings_processed": self.readings_processed,
            "readings_out_of_band": self.readings_out_of_band,
            "alerts_emitted": len(self.alerts),
            "alerts_suppressed": self.suppressed_alerts,
            "records_stored": self.cloud.accepted_count,
            "records_discarded": self.cloud.discarded_count,
            "discard_reasons": {r.value: n for r, n in self.cloud.discarded.items()},
            "blocks_sealed": len(self.cloud.blocks),
            "unmined_blocks": self.unmined_blocks,
            "chain_height": self.chain.height,
            "ledger_bytes": self.chain.storage_bytes(),
            "blocks_signed": self.chain.signed_by(),
            "quorum": self.config.quorum,
            "mining_rejections": self.chain.rejections,
            "routing_hops": self.routing_hops,
            "txns_mined": len(self.access.mined),
            "txns_failed": self.failed_txns,
            "device_operations": {
                "approved": sum(e.decision is DeviceOpDecision.APPROVED for e in ops),
                "denied": sum(e.decision is DeviceOpDecision.DENIED for e in ops),
            },
            "audit": {"passed": audit.exit_code == EXIT_OK, "failures": audit.failures},
        }
        return RunResult(
            report=report,
            ledger_dump=ledger_dump,
            alerts_log="".join(a.log_line() + "\n" for a in self.alerts),
            txns_log="".join(self.access.txns[t].log_line() + "\n" for t in self.access.mined),
            device_ops_log="".join(
                f"tick={e.tick} provider={e.provider_id} device={e.device_id} "
                f"cluster_head={e.cluster_head} operation={json.dumps(e.operation)} "
                f"decision={e.decision.value}\n" for e in ops),
            authorities=authorities,
            cloud_files=cloud_files,
            stored_alerts=list(self.stored_alerts),
        )


def _inject(record: SignedRecord, inject: Optional[str]) -> SignedRecord:
    if inject == "missing_signature":
        return replace(record, signature=None)
    if inject == "bad_signature":
        body = bytearray(record.payload.body or b"\x00")
        body[0] ^= 0x01
        return replace(record, payload=replace(record.payload, body=bytes(body)))
    return record


def run_scenario(scenario: Scenario, out_dir=None, seed: Optional[int] = None) -> RunResult:
    result = Simulation(scenario, seed).run()
    if out_dir is not None:
        result.write(out_dir)
    return result


# ---------------------------------------------------------------- audit tools

@dataclass
class AuditReport:
    exit_code: int
    lines: List[str] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def audit_outputs(blocks: List[ChainBlock], authority_keys, cloud) -> AuditReport:
    """Validate the chain, then check every anchored block against its root.

    ``cloud`` maps block id to either a :class:`DataBlock` (in memory) or a
    path to its file.
    """
    rep = AuditReport(EXIT_OK)
    v = validate_chain(blocks, authority_keys)
    if v.valid:
        rep.lines.append(f"chain: valid ({len(blocks)} blocks)")
    else:
        rep.lines.append(f"chain: INVALID at height {v.height}: {v.reason}")
        rep.failures.append(f"height {v.height}: {v.reason}")
    anchored = set()
    for b in blocks:
        if b.payload_kind is not PayloadKind.DATA_BLOCK:
            continue
        ref = b.cloud_block_ref
        if ref is None or not ID_RE.match(ref):
            rep.lines.append(f"FAIL height {b.height}: bad cloud block reference {ref!r}")
            rep.failures.append(f"height {b.height}: bad cloud block reference")
            continue
        if ref in anchored:
            rep.lines.append(f"FAIL block {ref} (height {b.height}): anchored twice")
            rep.failures.append(f"block {ref}: anchored twice")
            continue
        anchored.add(ref)
        target = cloud.get(ref)
        if target is None:
            res_passed, detail = False, "block missing from cloud"
        elif isinstance(target, (str, Path)):
            res = audit_block_file(target, b.payload_root)
            res_passed, detail = res.passed, res.detail
        else:
            res = audit_records(ref, target.records, b.payload_root)
            res_passed, detail = res.passed, res.detail
        if res_passed:
            rep.lines.append(f"pass block {ref} (height {b.height})")
        else:
            rep.lines.append(f"FAIL block {ref} (height {b.height}): {detail}")
            rep.failures.append(f"block {ref}: {detail}")
    for ref in sorted(set(cloud) - anchored):
        rep.lines.append(f"FAIL block {ref}: not anchored on the ledger")
        rep.failures.append(f"block {ref}: not anchored on the ledger")
    if rep.failures:
        rep.exit_code = EXIT_VERIFY_FAILED
    rep.lines.append("audit: " + ("PASS" if not rep.failures else
                                  f"FAIL ({len(rep.failures)} problem(s))"))
    return rep


def _load_chain(ledger_path, authorities_path) -> Tuple[List[ChainBlock], Dict[str, bytes]]:
    ledger_path = Path(ledger_path)
    if authorities_path is None:
        authorities_path = ledger_path.parent / AUTHORITIES_FILE
    blocks = parse_dump(ledger_path.read_text(encoding="ascii"))
    _, keys = parse_authorities(Path(authorities_path).read_text())
    return blocks, keys


def audit(ledger_path, cloud_dir, authorities_path=None) -> AuditReport:
    try:
        blocks, keys = _load_chain(ledger_path, authorities_path)
        cloud_dir = Path(cloud_dir)
        if not cloud_dir.is_dir():
            raise OSError(f"cloud directory {cloud_dir} not found")
        cloud = {p.name: p for p in sorted(cloud_dir.iterdir()) if p.is_file()}
    except (OSError, ValueError, UnicodeDecodeError, MedchainError) as exc:
        return AuditReport(EXIT_INPUT_ERROR, [f"input error: {exc}"], [str(exc)])
    return audit_outputs(blocks, keys, cloud)


def verify_chain(ledger_path, authorities_path=None) -> AuditReport:
    try:
        blocks, keys = _load_chain(ledger_path, authorities_path)
    except (OSError, ValueError, UnicodeDecodeError, MedchainError) as exc:
        return AuditReport(EXIT_INPUT_ERROR, [f"input error: {exc}"], [str(exc)])
    v = validate_chain(blocks, keys)
    if v.valid:
        return AuditReport(EXIT_OK, [f"chain: valid ({len(blocks)} blocks)"])
    msg = f"chain: INVALID at height {v.height}: {v.reason}"
    return AuditReport(EXIT_VERIFY_FAILED, [msg], [msg])
