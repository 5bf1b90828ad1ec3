"""Scenario files: JSON for the setup, optional JSON-lines for telemetry.

See ``docs/scenario_schema.md`` for the field reference.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ScenarioError

ID_RE = re.compile(r"\A[A-Za-z0-9_.-]{1,32}\Z")
INJECTIONS = ("missing_signature", "bad_signature")


@dataclass(frozen=True)
class MemberSpec:
    node_id: str
    degree: int = 0


@dataclass(frozen=True)
class ClusterSpec:
    cluster_id: str
    members: List[MemberSpec]


@dataclass(frozen=True)
class ContractSpec:
    patient_id: str
    provider_id: str
    metric: str
    lower: float
    upper: float


@dataclass(frozen=True)
class AccessEvent:
    tick: int
    patient_id: str
    provider_id: str


@dataclass(frozen=True)
class ProviderRecordEvent:
    tick: int
    provider_id: str
    patient_id: str
    record: str


@dataclass(frozen=True)
class DeviceOpEvent:
    tick: int
    provider_id: str
    device_id: str
    operation: str


@dataclass(frozen=True)
class FaultSpec:
    authority_id: str
    refuse_from_tick: int


@dataclass(frozen=True)
class ReadingSpec:
    tick: int
    patient_id: str
    metric: str
    value: float
    unit: str = ""
    inject: Optional[str] = None


@dataclass
class Scenario:
    seed: int
    clusters: List[ClusterSpec]
    patients: List[str]
    providers: List[str]
    contracts: List[ContractSpec] = field(default_factory=list)
    grants: List[AccessEvent] = field(default_factory=list)
    revokes: List[AccessEvent] = field(default_factory=list)
    provider_records: List[ProviderRecordEvent] = field(default_factory=list)
    device_operations: List[DeviceOpEvent] = field(default_factory=list)
    faults: List[FaultSpec] = field(default_factory=list)
    telemetry: List[ReadingSpec] = field(default_factory=list)
    block_capacity: int = 16

    def validate(self) -> None:
        """Check every cross-reference; raise :class:`ScenarioError` on the first problem."""
        ids = self.patients + self.providers
        for i in ids:
            _check_id(i)
        if len(set(ids)) != len(ids):
            raise ScenarioError("patient and provider ids must be unique")
        if not self.clusters:
            raise ScenarioError("at least one cluster is required")
        seen: Dict[str, str] = {}
        cluster_ids = set()
        for c in self.clusters:
            _check_id(c.cluster_id)
            if c.cluster_id in cluster_ids:
                raise ScenarioError(f"duplicate cluster {c.cluster_id}")
            cluster_ids.add(c.cluster_id)
            if not c.members:
                raise ScenarioError(f"cluster {c.cluster_id} has no members")
            for m in c.members:
                if m.node_id not in ids:
                    raise ScenarioError(f"cluster member {m.node_id} is not a patient or provider")
                if m.node_id in seen:
                    raise ScenarioError(f"{m.node_id} belongs to two clusters")
                if m.degree < 0:
                    raise ScenarioError(f"negative degree for {m.node_id}")
                seen[m.node_id] = c.cluster_id
        unclustered = [i for i in ids if i not in seen]
        if unclustered:
            raise ScenarioError(f"nodes without a cluster: {unclustered}")
        if self.block_capacity < 1:
            raise ScenarioError("block_capacity must be at least 1")
        pats, provs = set(self.patients), set(self.providers)
        for c in self.contracts:
            if c.patient_id not in pats or c.provider_id not in provs:
                raise ScenarioError(f"contract references unknown party: {c}")
            if not (math.isfinite(c.lower) and math.isfinite(c.upper)) or c.lower > c.upper:
                raise ScenarioError(f"contract bounds invalid: {c}")
        for ev in self.grants + self.revokes:
            if ev.patient_id not in pats or ev.provider_id not in provs or ev.tick < 0:
                raise ScenarioError(f"access event invalid: {ev}")
        for ev in self.provider_records:
            if ev.patient_id not in pats or ev.provider_id not in provs or ev.tick < 0:
                raise ScenarioError(f"provider record event invalid: {ev}")
        for ev in self.device_operations:
            if ev.provider_id not in provs or ev.device_id not in pats or ev.tick < 0:
                raise ScenarioError(f"device operation invalid: {ev}")
        heads = {c.cluster_id: elect(c) for c in self.clusters}
        for f in self.faults:
            if f.authority_id not in heads.values():
                raise ScenarioError(f"fault targets {f.authority_id}, which is not a Cluster Head")
            if f.refuse_from_tick < 0:
                raise ScenarioError("refuse_from_tick must be non-negative")
        last = 0
        for r in self.telemetry:
            if r.patient_id not in pats:
                raise ScenarioError(f"reading for unknown patient {r.patient_id}")
            if r.tick < last:
                raise ScenarioError(f"telemetry ticks decrease at tick {r.tick}")
            last = r.tick
            if not math.isfinite(r.value):
                raise ScenarioError(f"non-finite reading value at tick {r.tick}")
            if r.inject is not None and r.inject not in INJECTIONS:
                raise ScenarioError(f"unknown injection {r.inject!r}")


def elect(cluster: ClusterSpec) -> str:
    """Static mirror of the overlay election rule, used for validation."""
    return min(cluster.members, key=lambda m: (-m.degree, m.node_id)).node_id


def _check_id(s: Any) -> None:
    if not isinstance(s, str) or not ID_RE.match(s):
        raise ScenarioError(f"invalid identifier {s!r}")


def _req(d: Dict[str, Any], key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return d[key]


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{where}: expected integer, got {v!r}")
    return v


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: expected number, got {v!r}")
    return float(v)


def parse_reading(d: Dict[str, Any], where: str = "telemetry") -> ReadingSpec:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: reading must be an object")
    return ReadingSpec(
        tick=_int(_req(d, "tick", where), where),
        patient_id=str(_req(d, "patient_id", where)),
        metric=str(_req(d, "metric", where)),
        value=_num(_req(d, "value", where), where),
        unit=str(d.get("unit", "")),
        inject=d.get("inject"),
    )


def read_telemetry_jsonl(path) -> List[ReadingSpec]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"{path}:{lineno}: {exc}") from exc
            out.append(parse_reading(obj, f"{path}:{lineno}"))
    return out


def scenario_from_dict(doc: Dict[str, Any], base_dir: Optional[Path] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        clusters = [
            ClusterSpec(str(_req(c, "cluster_id", "cluster")),
                        [MemberSpec(str(_req(m, "node_id", "member")),
                                    _int(m.get("degree", 0), "member degree"))
                         for m in _req(c, "members", "cluster")])
            for c in _req(doc, "clusters", "scenario")
        ]
        patients = [str(_req(p, "patient_id", "patient")) if isinstance(p, dict) else str(p)
                    for p in doc.get("patients", [])]
        providers = [str(_req(p, "provider_id", "provider")) if isinstance(p, dict) else str(p)
                     for p in doc.get("providers", [])]
        contracts = [ContractSpec(str(_req(c, "patient_id", "contract")),
                                  str(_req(c, "provider_id", "contract")),
                                  str(_req(c, "metric", "contract")),
                                  _num(_req(c, "lower", "contract"), "contract lower"),
                                  _num(_req(c, "upper", "contract"), "contract upper"))
                     for c in doc.get("contracts", [])]

        def access(items, what):
            return [AccessEvent(_int(_req(e, "tick", what), what),
                                str(_req(e, "patient_id", what)),
                                str(_req(e, "provider_id", what))) for e in items]

        grants = access(doc.get("grants", []), "grant")
        revokes = access(doc.get("revokes", []), "revoke")
        provider_records = [
            ProviderRecordEvent(_int(_req(e, "tick", "provider_record"), "provider_record"),
                                str(_req(e, "provider_id", "provider_record")),
                                str(_req(e, "patient_id", "provider_record")),
                                str(_req(e, "record", "provider_record")))
            for e in doc.get("provider_records", [])]
        device_ops = [
            DeviceOpEvent(_int(_req(e, "tick", "device_operation"), "device_operation"),
                          str(_req(e, "provider_id", "device_operation")),
                          str(_req(e, "device_id", "device_operation")),
                          str(_req(e, "operation", "device_operation")))
            for e in doc.get("device_operations", [])]
        faults = [FaultSpec(str(_req(f, "authority_id", "fault")),
                            _int(_req(f, "refuse_from_tick", "fault"), "fault"))
                  for f in doc.get("faults", [])]
        telemetry = [parse_reading(r) for r in doc.get("telemetry", [])]
        if "telemetry_file" in doc:
            tpath = Path(doc["telemetry_file"])
            if base_dir is not None and not tpath.is_absolute():
                tpath = base_dir / tpath
            try:
                telemetry += read_telemetry_jsonl(tpath)
            except OSError as exc:
                raise ScenarioError(f"cannot read telemetry file: {exc}") from exc
        scenario = Scenario(
            seed=_int(doc.get("seed", 0), "seed"),
            clusters=clusters, patients=patients, providers=providers,
            contracts=contracts, grants=grants, revokes=revokes,
            provider_records=provider_records, device_operations=device_ops,
            faults=faults, telemetry=telemetry,
            block_capacity=_int(doc.get("block_capacity", 16), "block_capacity"),
        )
    except (TypeError, AttributeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    scenario.validate()
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot load scenario {path}: {exc}") from exc
    return scenario_from_dict(doc, path.parent)
