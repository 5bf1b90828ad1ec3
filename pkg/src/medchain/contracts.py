"""Threshold smart contracts evaluated against wearable readings."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional

from .errors import AuthorizationError, ContractError

KNOWN_METRICS = ("glucose", "heart_rate", "blood_pressure_systolic", "respiration")
DEFAULT_UNITS = {
    "glucose": "mg/dL",
    "heart_rate": "bpm",
    "blood_pressure_systolic": "mmHg",
    "respiration": "breaths/min",
}


def normalize_metric(metric: str) -> str:
    """Known metric names pass through; anything else becomes ``custom(name)``."""
    if metric in KNOWN_METRICS or (metric.startswith("custom(") and metric.endswith(")")):
        return metric
    return f"custom({metric})"


@dataclass(frozen=True)
class HealthReading:
    patient_id: str
    metric: str
    value: float
    timestamp: int
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ContractError(f"non-finite reading value {self.value!r}")
        if self.timestamp < 0:
            raise ContractError("timestamp must be non-negative")


class Status(str, Enum):
    ACTIVE = "active"
    REVOKED = "revoked"


class Breach(str, Enum):
    BELOW_LOWER = "below_lower"
    ABOVE_UPPER = "above_upper"


@dataclass(frozen=True)
class ThresholdContract:
    contract_id: str
    patient_id: str
    provider_id: str
    metric: str
    lower_bound: float
    upper_bound: float
    status: Status = Status.ACTIVE


@dataclass(frozen=True)
class AlertEvent:
    contract_id: str
    reading: HealthReading
    breach: Breach
    emitted_at: int

    def log_line(self) -> str:
        r = self.reading
        return (f"tick={self.emitted_at} contract={self.contract_id} patient={r.patient_id} "
                f"metric={r.metric} value={r.value!r} breach={self.breach.value}")


def evaluate(contract: ThresholdContract, reading: HealthReading) -> Optional[AlertEvent]:
    """Return an alert iff the reading lies strictly outside the contract band."""
    if contract.status is not Status.ACTIVE:
        raise ContractError(f"contract {contract.contract_id} is revoked")
    if reading.patient_id != contract.patient_id:
        raise ContractError(
            f"reading for {reading.patient_id} sent to contract of {contract.patient_id}")
    if normalize_metric(reading.metric) != contract.metric:
        raise ContractError(f"metric {reading.metric} does not match contract {contract.metric}")
    if reading.value > contract.upper_bound:
        breach = Breach.ABOVE_UPPER
    elif reading.value < contract.lower_bound:
        breach = Breach.BELOW_LOWER
    else:
        return None
    return AlertEvent(contract.contract_id, reading, breach, reading.timestamp)


class ContractRegistry:
    """Deployed contracts, keyed by contract id (the contract's address).

    ``is_requestee`` and ``is_requester`` are registry lookups supplied by the
    overlay; deployment refuses parties the overlay does not know.
    """

    def __init__(self, is_requestee: Callable[[str], bool], is_requester: Callable[[str], bool]):
        self._is_requestee = is_requestee
        self._is_requester = is_requester
        self._contracts: Dict[str, ThresholdContract] = {}
        self._revoked_at: Dict[str, int] = {}

    def deploy_contract(self, patient_id: str, provider_id: str, metric: str,
                        lower: float, upper: float) -> str:
        if not self._is_requestee(patient_id):
            raise ContractError(f"unknown patient {patient_id!r}")
        if not self._is_requester(provider_id):
            raise ContractError(f"unknown provider {provider_id!r}")
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise ContractError("bounds must be finite")
        if lower > upper:
            raise ContractError(f"lower bound {lower} exceeds upper bound {upper}")
        contract_id = f"ctr-{len(self._contracts) + 1:04d}"
        self._contracts[contract_id] = ThresholdContract(
            contract_id, patient_id, provider_id, normalize_metric(metric),
            float(lower), float(upper))
        return contract_id

    def get(self, contract_id: str) -> ThresholdContract:
        try:
            return self._contracts[contract_id]
        except KeyError:
            raise ContractError(f"unknown contract {contract_id!r}") from None

    def revoke_contract(self, contract_id: str, requester_id: str, tick: int = 0) -> Status:
        contract = self.get(contract_id)
        if requester_id != contract.patient_id:
            raise AuthorizationError(
                f"{requester_id} may not revoke contract {contract_id}; only its patient can")
        if contract.status is Status.REVOKED:
            raise ContractError(f"contract {contract_id} already revoked")
        self._contracts[contract_id] = replace(contract, status=Status.REVOKED)
        self._revoked_at[contract_id] = tick
        return Status.REVOKED

    def evaluate(self, contract_id: str, reading: HealthReading) -> Optional[AlertEvent]:
        return evaluate(self.get(contract_id), reading)

    def active_for(self, patient_id: str, metric: str) -> List[ThresholdContract]:
        metric = normalize_metric(metric)
        return [c for c in self._contracts.values()
                if c.status is Status.ACTIVE and c.patient_id == patient_id and c.metric == metric]

    def __iter__(self) -> Iterator[ThresholdContract]:
        return iter(self._contracts.values())

    def __len__(self) -> int:
        return len(self._contracts)
