"""Air-quality emission contract and the chaincode lifecycle.

Pollutant readings and the penalty are fixed-point: the canonical bytes
carry signed micro-units (value x 10^6) so that every platform hashes the
same record to the same digest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from decimal import Decimal, InvalidOperation
from enum import IntEnum
from typing import TYPE_CHECKING, Callable, Optional, Protocol

from .encoding import DecodeError, Reader, Writer, decode_all, digest

if TYPE_CHECKING:
    from .network import EndorsementPolicy, Network

log = logging.getLogger(__name__)

MICRO_PLACES = 6
_QUANTUM = Decimal(1).scaleb(-MICRO_PLACES)
_MICRO = 10 ** MICRO_PLACES

POLLUTANTS = ("so2", "no2", "rspm", "co")

Version = tuple[int, int]  # (block height, tx index)


class ChaincodeError(Exception):
    pass


class ValidationError(ChaincodeError):
    def __init__(self, violations: list[str]) -> None:
        super().__init__("; ".join(violations))
        self.violations = violations


class InstallConflict(ChaincodeError):
    pass


class NotJoined(ChaincodeError):
    pass


class NotInstantiated(ChaincodeError):
    pass


class MissingInstallation(ChaincodeError):
    def __init__(self, peers: list[str]) -> None:
        super().__init__("chaincode not installed on: " + ", ".join(peers))
        self.peers = peers


class InvalidPolicy(ChaincodeError):
    pass


class LocationType(IntEnum):
    RESIDENTIAL = 0
    INDUSTRIAL = 1
    SENSITIVE = 2
    OTHER = 3

    @classmethod
    def parse(cls, text: str) -> "LocationType":
        key = text.strip().upper().replace(" ", "_")
        aliases = {"RESIDENTIAL_RURAL_AND_OTHER_AREAS": "RESIDENTIAL",
                   "INDUSTRIAL_AREA": "INDUSTRIAL", "SENSITIVE_AREA": "SENSITIVE"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown location type {text!r}") from None


def to_decimal(value) -> Decimal:
    """Coerce a reading to a Decimal on the micro-unit grid (non-finite kept as is)."""
    if isinstance(value, Decimal):
        d = value
    elif isinstance(value, float):
        d = Decimal(repr(value)) if math.isfinite(value) else Decimal(str(value))
    else:
        try:
            d = Decimal(str(value).strip().replace("−", "-"))
        except InvalidOperation:
            raise ValueError(f"not a number: {value!r}") from None
    if d.is_finite():
        d = d.quantize(_QUANTUM)
    return d


def _to_micro(d: Decimal) -> int:
    if not d.is_finite():
        raise ValueError(f"cannot encode non-finite value {d}")
    return int(d.scaleb(MICRO_PLACES).to_integral_value())


def _from_micro(n: int) -> Decimal:
    return (Decimal(n) / _MICRO).quantize(_QUANTUM)


@dataclass(frozen=True)
class EmissionRecord:
    """One air-quality transaction payload.

    Fields follow the order in which the monitoring site reports them:
    timestamp, location type, SO2, NO2, RSPM, CO, industry names, monitoring
    location, penalty value, reporting agency.
    """

    timestamp: int
    location_type: LocationType
    so2: Decimal
    no2: Decimal
    rspm: Decimal
    co: Decimal
    industry_names: tuple[str, ...]
    monitoring_location: str
    penalty_value: Decimal
    reporting_agency: str

    def __post_init__(self) -> None:
        for name in (*POLLUTANTS, "penalty_value"):
            object.__setattr__(self, name, to_decimal(getattr(self, name)))
        object.__setattr__(self, "industry_names", tuple(self.industry_names))
        if not isinstance(self.location_type, LocationType):
            object.__setattr__(self, "location_type", LocationType(self.location_type))

    @property
    def key(self) -> str:
        return record_key(self.monitoring_location, self.timestamp)

    def write(self, w: Writer) -> None:
        w.i64(self.timestamp).u8(int(self.location_type))
        for name in POLLUTANTS:
            w.i64(_to_micro(getattr(self, name)))
        w.seq(self.industry_names, Writer.string)
        w.string(self.monitoring_location)
        w.i64(_to_micro(self.penalty_value))
        w.string(self.reporting_agency)

    @classmethod
    def read(cls, r: Reader) -> "EmissionRecord":
        timestamp = r.i64()
        raw_type = r.u8()
        try:
            location_type = LocationType(raw_type)
        except ValueError:
            raise DecodeError(f"invalid location_type byte {raw_type}") from None
        so2, no2, rspm, co = (_from_micro(r.i64()) for _ in POLLUTANTS)
        return cls(
            timestamp=timestamp,
            location_type=location_type,
            so2=so2,
            no2=no2,
            rspm=rspm,
            co=co,
            industry_names=tuple(r.seq(Reader.string)),
            monitoring_location=r.string(),
            penalty_value=_from_micro(r.i64()),
            reporting_agency=r.string(),
        )

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmissionRecord":
        return decode_all(data, cls.read)


def encode_record(record: EmissionRecord) -> bytes:
    return record.to_bytes()


def decode_record(data: bytes) -> EmissionRecord:
    return EmissionRecord.from_bytes(data)


def record_key(monitoring_location: str, timestamp: int) -> str:
    return f"{monitoring_location}/{timestamp}"


def validate_record(record: EmissionRecord) -> list[str]:
    """Return every violated record invariant; an empty list means valid."""
    violations = []
    if not isinstance(record.timestamp, int) or record.timestamp < 0:
        violations.append("timestamp must be a non-negative integer")
    for name in (*POLLUTANTS, "penalty_value"):
        value = getattr(record, name)
        if not value.is_finite():
            violations.append(f"{name} must be finite")
        elif value < 0:
            violations.append(f"{name} must be ≥ 0")
    if not record.industry_names:
        violations.append("industry_names must be non-empty")
    for i, industry in enumerate(record.industry_names):
        if not industry:
            violations.append(f"industry_names[{i}] must be non-empty")
    if not record.monitoring_location:
        violations.append("monitoring_location must be non-empty")
    if not record.reporting_agency:
        violations.append("reporting_agency must be non-empty")
    return violations


@dataclass(frozen=True)
class WriteSet:
    """Read versions and writes produced by one contract invocation."""

    reads: tuple[tuple[str, Optional[Version]], ...] = ()
    writes: tuple[tuple[str, bytes], ...] = ()

    def write(self, w: Writer) -> None:
        def read_entry(w: Writer, entry) -> None:
            key, version = entry
            w.string(key).boolean(version is not None)
            if version is not None:
                w.u64(version[0]).u32(version[1])

        def write_entry(w: Writer, entry) -> None:
            w.string(entry[0]).blob(entry[1])

        w.seq(self.reads, read_entry)
        w.seq(self.writes, write_entry)

    @classmethod
    def read(cls, r: Reader) -> "WriteSet":
        def read_entry(r: Reader):
            key = r.string()
            return (key, (r.u64(), r.u32()) if r.boolean() else None)

        reads = tuple(r.seq(read_entry))
        writes = tuple(r.seq(lambda r: (r.string(), r.blob())))
        return cls(reads, writes)

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @cached_property
    def _digest(self) -> bytes:
        return digest(self.to_bytes())

    def digest(self) -> bytes:
        return self._digest


class StateReader(Protocol):
    def get_versioned(self, key: str) -> Optional[tuple[bytes, Version]]: ...


class ExecutionContext:
    """Simulation context: reads hit committed state, writes are only collected."""

    def __init__(self, state: StateReader, channel: str = "", tx_id: str = "") -> None:
        self._state = state
        self.channel = channel
        self.tx_id = tx_id
        self._reads: dict[str, Optional[Version]] = {}
        self._writes: dict[str, bytes] = {}
        self.warnings: list[str] = []

    def get_state(self, key: str) -> Optional[bytes]:
        if key in self._writes:
            return self._writes[key]
        entry = self._state.get_versioned(key)
        if key not in self._reads:
            self._reads[key] = entry[1] if entry else None
        return entry[0] if entry else None

    def put_state(self, key: str, value: bytes) -> None:
        self._writes[key] = bytes(value)

    def write_set(self) -> WriteSet:
        return WriteSet(tuple(self._reads.items()), tuple(self._writes.items()))


def identity_penalty(record: EmissionRecord) -> EmissionRecord:
    return record


class AirQualityContract:
    """Records emission readings keyed by ``<monitoring_location>/<timestamp>``."""

    name = "aqms"

    def __init__(self, penalty_rule: Callable[[EmissionRecord], EmissionRecord] = identity_penalty) -> None:
        self.penalty_rule = penalty_rule

    @property
    def identity(self) -> str:
        cls = type(self)
        return f"{cls.__module__}.{cls.__qualname__}"

    def invoke(self, ctx: ExecutionContext, record: EmissionRecord) -> WriteSet:
        return invoke_record_emission(ctx, record, self.penalty_rule)

    def query(self, ctx: ExecutionContext, key: str) -> Optional[EmissionRecord]:
        return query_emission(ctx, key)


def invoke_record_emission(ctx: ExecutionContext, record: EmissionRecord,
                           penalty_rule: Callable[[EmissionRecord], EmissionRecord] = identity_penalty) -> WriteSet:
    violations = validate_record(record)
    if violations:
        raise ValidationError(violations)
    record = penalty_rule(record)
    key = record.key
    if ctx.get_state(key) is not None:
        msg = f"duplicate key {key}: storing a new version"
        ctx.warnings.append(msg)
        log.warning(msg)
    ctx.put_state(key, record.to_bytes())
    return ctx.write_set()


def query_emission(ctx: ExecutionContext, key: str) -> Optional[EmissionRecord]:
    raw = ctx.get_state(key)
    if raw is None:
        return None
    return decode_record(raw)


@dataclass(frozen=True)
class ChaincodePackage:
    name: str
    version: str
    contract: AirQualityContract

    @property
    def contract_identity(self) -> str:
        return getattr(self.contract, "identity", type(self.contract).__qualname__)


@dataclass(frozen=True)
class InstallReceipt:
    peer_id: str
    name: str
    version: str
    registry_size: int


@dataclass(frozen=True)
class InstantiationRecord:
    channel: str
    chaincode: str
    policy: "EndorsementPolicy"


@dataclass(frozen=True)
class InstantiateReceipt:
    record: InstantiationRecord
    acknowledged_by: tuple[str, ...]


@dataclass
class ChaincodeRegistry:
    """Per-peer store of installed packages."""

    packages: dict[tuple[str, str], ChaincodePackage] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.packages)

    def add(self, package: ChaincodePackage) -> None:
        key = (package.name, package.version)
        existing = self.packages.get(key)
        if existing is not None and existing.contract_identity != package.contract_identity:
            raise InstallConflict(
                f"{package.name} {package.version} already installed with "
                f"{existing.contract_identity}"
            )
        self.packages[key] = existing or package

    def has(self, name: str) -> bool:
        return any(n == name for n, _ in self.packages)

    def latest(self, name: str) -> Optional[ChaincodePackage]:
        matches = [p for (n, _), p in self.packages.items() if n == name]
        return matches[-1] if matches else None


def install(peer, package: ChaincodePackage) -> InstallReceipt:
    """Install ``package`` on ``peer``; repeated installs of the same package are no-ops."""
    if not peer.channels:
        raise NotJoined(f"{peer.peer_id} has not joined any channel")
    peer.chaincodes.add(package)
    return InstallReceipt(peer.peer_id, package.name, package.version, len(peer.chaincodes))


def instantiate(network: "Network", channel: str, name: str,
                policy: "EndorsementPolicy") -> InstantiateReceipt:
    """Bind ``name`` to ``channel`` and wait until every policy peer acknowledges."""
    if not policy.required:
        raise InvalidPolicy("endorsement policy must name at least one peer")
    network.config.check_policy_members(policy)
    missing = [peer_id for _, peer_id in policy.required
               if not network.peer(peer_id).chaincodes.has(name)]
    if missing:
        raise MissingInstallation(missing)
    return network.instantiate_on_channel(InstantiationRecord(channel, name, policy))

