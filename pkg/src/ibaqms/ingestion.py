"""Sensor CSV and monitoring-dataset ingestion into emission records.

Raw MQ-series readings are 10-bit ADC counts, not concentrations. The default
calibration is therefore the identity (the record carries raw counts); a
deployment that has real calibration curves supplies affine overrides.
"""

from __future__ import annotations

import csv
import io
import math
import os
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from importlib import resources
from typing import Iterable, Mapping, Optional

from .chaincode import POLLUTANTS, EmissionRecord, LocationType, to_decimal, validate_record

SENSOR_HEADER = ("mq7_co", "mq2_smoke", "mq135_co2")
DATASET_HEADER = (
    "timestamp", "location_type", "so2", "no2", "rspm", "co",
    "industry_names", "monitoring_location", "penalty_value", "reporting_agency",
)
ADC_MAX = 1023
INDUSTRY_SEP = ";"

# record field <- sensor channel; MQ135 (CO2) has no slot in the record
DEFAULT_CHANNEL_MAP = {"co": "mq7_co", "rspm": "mq2_smoke"}


class IngestionError(Exception):
    pass


class CalibrationError(IngestionError):
    pass


@dataclass(frozen=True)
class RowError:
    row: int
    message: str
    violations: tuple[str, ...] = ()

    def __str__(self) -> str:
        extra = f" ({'; '.join(self.violations)})" if self.violations else ""
        return f"row {self.row}: {self.message}{extra}"


@dataclass(frozen=True)
class RawSensorSample:
    mq7_co: int
    mq2_smoke: int
    mq135_co2: int

    def channel(self, name: str) -> int:
        return getattr(self, name)


@dataclass(frozen=True)
class Calibration:
    slope: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class SiteMeta:
    monitoring_location: str
    location_type: LocationType
    industry_names: tuple[str, ...]
    reporting_agency: str
    thresholds: Mapping[str, Decimal] = field(default_factory=dict)
    penalty_rate: Decimal = Decimal(0)
    calibration: Mapping[str, Calibration] = field(default_factory=dict)
    channel_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_CHANNEL_MAP))

    def __post_init__(self) -> None:
        for name, value in self.thresholds.items():
            if to_decimal(value) <= 0:
                raise IngestionError(f"threshold for {name} must be > 0")
        if to_decimal(self.penalty_rate) < 0:
            raise IngestionError("penalty_rate must be ≥ 0")
        unknown = set(self.channel_map) - set(POLLUTANTS)
        if unknown:
            raise IngestionError(f"channel map targets unknown fields: {sorted(unknown)}")


def default_site_meta() -> SiteMeta:
    """Demonstration site for the bundled sensor readings (thresholds in raw counts)."""
    return SiteMeta(
        monitoring_location="KTYM-01",
        location_type=LocationType.INDUSTRIAL,
        industry_names=("Kottayam Industrial Estate",),
        reporting_agency="CPCB",
        thresholds={"co": Decimal(390), "rspm": Decimal(380)},
        penalty_rate=Decimal(1),
    )


def _data_rows(text: str) -> Iterable[tuple[int, list[str]]]:
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        yield lineno, row


def parse_sensor_csv(text: str) -> tuple[list[RawSensorSample], list[RowError]]:
    """Parse ``mq7_co,mq2_smoke,mq135_co2`` rows; bad rows are reported, never fatal."""
    samples: list[RawSensorSample] = []
    errors: list[RowError] = []
    for lineno, row in _data_rows(text):
        cells = [c.strip() for c in row]
        if tuple(c.lower() for c in cells) == SENSOR_HEADER:
            continue
        if len(cells) != len(SENSOR_HEADER):
            errors.append(RowError(lineno, f"expected {len(SENSOR_HEADER)} columns, got {len(cells)}"))
            continue
        values = []
        for name, cell in zip(SENSOR_HEADER, cells):
            try:
                value = int(cell)
            except ValueError:
                errors.append(RowError(lineno, f"{name} is not an integer: {cell!r}"))
                break
            if not 0 <= value <= ADC_MAX:
                errors.append(RowError(lineno, f"{name}={value} outside ADC range [0, {ADC_MAX}]"))
                break
            values.append(value)
        else:
            samples.append(RawSensorSample(*values))
    return samples, errors


def read_sensor_csv(path: str | os.PathLike) -> tuple[list[RawSensorSample], list[RowError]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_sensor_csv(fh.read())


def table1_text() -> str:
    return resources.files("ibaqms.data").joinpath("table1_sensors.csv").read_text(encoding="utf-8")


def table1_samples() -> list[RawSensorSample]:
    samples, errors = parse_sensor_csv(table1_text())
    assert not errors, errors
    return samples


def exceedance_penalty(values: Mapping[str, Decimal], meta: SiteMeta) -> Decimal:
    """penalty_rate x total exceedance over each configured threshold."""
    total = Decimal(0)
    for name, value in values.items():
        threshold = meta.thresholds.get(name)
        if threshold is not None:
            total += max(Decimal(0), value - to_decimal(threshold))
    return to_decimal(meta.penalty_rate) * total


def raw_to_record(sample: RawSensorSample, meta: SiteMeta, timestamp: int) -> EmissionRecord:
    values = {name: Decimal(0) for name in POLLUTANTS}
    calibrated = {}
    for field_name, channel in meta.channel_map.items():
        cal = meta.calibration.get(channel, Calibration())
        if not (math.isfinite(cal.slope) and math.isfinite(cal.offset)):
            raise CalibrationError(f"non-finite calibration for {channel}: {cal}")
        value = to_decimal(cal.slope) * sample.channel(channel) + to_decimal(cal.offset)
        if value < 0:
            raise CalibrationError(f"calibrated {field_name} is negative ({value}) for {channel}")
        calibrated[field_name] = to_decimal(value)
    values.update(calibrated)
    return EmissionRecord(
        timestamp=timestamp,
        location_type=meta.location_type,
        industry_names=meta.industry_names,
        monitoring_location=meta.monitoring_location,
        penalty_value=exceedance_penalty(calibrated, meta),
        reporting_agency=meta.reporting_agency,
        **values,
    )


def samples_to_records(samples: Iterable[RawSensorSample], meta: SiteMeta,
                       start_ms: int = 1_700_000_000_000, interval_ms: int = 60_000) -> list[EmissionRecord]:
    return [raw_to_record(s, meta, start_ms + i * interval_ms) for i, s in enumerate(samples)]


def table1_records(meta: Optional[SiteMeta] = None) -> list[EmissionRecord]:
    return samples_to_records(table1_samples(), meta or default_site_meta())


# monitoring datasets ----------------------------------------------------------


def parse_rfc3339(text: str) -> int:
    """RFC 3339 timestamp -> UTC milliseconds since the epoch."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    moment = datetime.fromisoformat(text)
    if moment.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return int(round(moment.timestamp() * 1000))


def format_rfc3339(ms: int) -> str:
    moment = datetime.fromtimestamp(ms / 1000, tz=timezone.utc)
    return moment.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def _row_to_record(cells: list[str]) -> EmissionRecord:
    fields = dict(zip(DATASET_HEADER, cells))
    return EmissionRecord(
        timestamp=parse_rfc3339(fields["timestamp"]),
        location_type=LocationType.parse(fields["location_type"]),
        so2=to_decimal(fields["so2"]),
        no2=to_decimal(fields["no2"]),
        rspm=to_decimal(fields["rspm"]),
        co=to_decimal(fields["co"]),
        industry_names=tuple(n.strip() for n in fields["industry_names"].split(INDUSTRY_SEP) if n.strip()),
        monitoring_location=fields["monitoring_location"].strip(),
        penalty_value=to_decimal(fields["penalty_value"]),
        reporting_agency=fields["reporting_agency"].strip(),
    )


def parse_monitoring_dataset(text: str) -> tuple[list[EmissionRecord], list[RowError]]:
    records: list[EmissionRecord] = []
    errors: list[RowError] = []
    for lineno, row in _data_rows(text):
        cells = [c.strip() for c in row]
        if tuple(c.lower() for c in cells) == DATASET_HEADER:
            continue
        if len(cells) != len(DATASET_HEADER):
            errors.append(RowError(lineno, f"expected {len(DATASET_HEADER)} columns, got {len(cells)}"))
            continue
        try:
            record = _row_to_record(cells)
        except ValueError as exc:
            errors.append(RowError(lineno, str(exc)))
            continue
        violations = validate_record(record)
        if violations:
            errors.append(RowError(lineno, "record fails validation", tuple(violations)))
            continue
        records.append(record)
    return records, errors


def load_monitoring_dataset(path: str | os.PathLike) -> tuple[list[EmissionRecord], list[RowError]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_monitoring_dataset(fh.read())


def _fmt(value: Decimal) -> str:
    return format(value.normalize(), "f")


def record_to_row(record: EmissionRecord) -> list[str]:
    return [
        format_rfc3339(record.timestamp),
        record.location_type.name.capitalize(),
        *(_fmt(getattr(record, name)) for name in POLLUTANTS),
        INDUSTRY_SEP.join(record.industry_names),
        record.monitoring_location,
        _fmt(record.penalty_value),
        record.reporting_agency,
    ]


def dump_monitoring_dataset(records: Iterable[EmissionRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DATASET_HEADER)
    for record in records:
        writer.writerow(record_to_row(record))
    return buf.getvalue()


SITES = ("KTYM-01", "KTYM-02", "KOCHI-07", "ALPY-03")
AGENCIES = ("CPCB", "KSPCB")
INDUSTRIES = ("Travancore Cements", "HNL Newsprint", "Rubber Park", "Kottayam Industrial Estate")


def synthetic_records(n: int, seed: int = 0, start_ms: int = 1_700_000_000_000,
                      duplicate_rate: float = 0.0) -> list[EmissionRecord]:
    """Plausible records for load runs; ``duplicate_rate`` re-uses an earlier (site, time) key."""
    rng = random.Random(seed)
    records: list[EmissionRecord] = []
    for i in range(n):
        site = rng.choice(SITES)
        timestamp = start_ms + i * 60_000
        if records and rng.random() < duplicate_rate:
            earlier = rng.choice(records)
            site, timestamp = earlier.monitoring_location, earlier.timestamp
        records.append(EmissionRecord(
            timestamp=timestamp,
            location_type=rng.choice(list(LocationType)),
            so2=Decimal(rng.randint(0, 80_000)) / 1000,
            no2=Decimal(rng.randint(0, 120_000)) / 1000,
            rspm=Decimal(rng.randint(0, 250_000)) / 1000,
            co=Decimal(rng.randint(0, 10_000)) / 1000,
            industry_names=tuple(rng.sample(INDUSTRIES, rng.randint(1, 2))),
            monitoring_location=site,
            penalty_value=Decimal(rng.randint(0, 50_000)) / 100,
            reporting_agency=rng.choice(AGENCIES),
        ))
    return records
