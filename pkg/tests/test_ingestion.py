import math
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from ibaqms.chaincode import LocationType, validate_record
from ibaqms.ingestion import (
    Calibration,
    CalibrationError,
    IngestionError,
    RawSensorSample,
    SiteMeta,
    default_site_meta,
    dump_monitoring_dataset,
    exceedance_penalty,
    format_rfc3339,
    load_monitoring_dataset,
    parse_monitoring_dataset,
    parse_rfc3339,
    parse_sensor_csv,
    raw_to_record,
    synthetic_records,
    table1_records,
    table1_samples,
)


def meta(**kw) -> SiteMeta:
    base = dict(monitoring_location="KTYM-01", location_type=LocationType.INDUSTRIAL,
                industry_names=("Rubber Park",), reporting_agency="CPCB")
    base.update(kw)
    return SiteMeta(**base)


def test_first_row():
    samples, errors = parse_sensor_csv("mq7_co,mq2_smoke,mq135_co2\n379,375,381\n")
    assert samples == [RawSensorSample(379, 375, 381)] and errors == []


def test_bundled_table():
    samples = table1_samples()
    assert len(samples) == 14
    assert samples[0] == RawSensorSample(379, 375, 381)
    assert max(s.mq7_co for s in samples) == 395
    assert min(s.mq2_smoke for s in samples) == 326


def test_empty_file():
    assert parse_sensor_csv("") == ([], [])


def test_bad_rows_reported_with_row_numbers():
    text = "mq7_co,mq2_smoke,mq135_co2\n1,2,3\nx,2,3\n1,2\n1,2,1024\n4,5,6\n"
    samples, errors = parse_sensor_csv(text)
    assert [s.mq7_co for s in samples] == [1, 4]
    assert [e.row for e in errors] == [3, 4, 5]


@given(st.lists(st.one_of(
    st.tuples(st.integers(0, 1023), st.integers(0, 1023), st.integers(0, 1023)).map(lambda t: ",".join(map(str, t))),
    st.sampled_from(["a,b,c", "1,2", "1,2,3,4", "-1,0,0", "2000,1,1"]),
), max_size=30))
def test_rows_partition_into_samples_and_errors(rows):
    samples, errors = parse_sensor_csv("\n".join(rows))
    assert len(samples) + len(errors) == len(rows)


def test_no_exceedance_means_zero_penalty():
    m = meta(thresholds={"co": Decimal(1000), "rspm": Decimal(1000)}, penalty_rate=Decimal(5))
    assert raw_to_record(RawSensorSample(395, 380, 400), m, 0).penalty_value == 0


def test_penalty_from_fourth_table_row():
    sample = table1_samples()[3]
    assert sample.mq7_co == 395
    m = meta(thresholds={"co": Decimal(390), "rspm": Decimal(10_000)}, penalty_rate=Decimal(2))
    assert raw_to_record(sample, m, 0).penalty_value == Decimal(10)


def test_zero_rate_zero_penalty():
    m = meta(thresholds={"co": Decimal(1)}, penalty_rate=Decimal(0))
    assert raw_to_record(RawSensorSample(1000, 1000, 1000), m, 0).penalty_value == 0


def test_default_mapping():
    record = raw_to_record(RawSensorSample(379, 375, 381), meta(), 7)
    assert (record.co, record.rspm, record.so2, record.no2) == (379, 375, 0, 0)
    assert record.key == "KTYM-01/7"


def test_affine_calibration_and_errors():
    m = meta(calibration={"mq7_co": Calibration(0.5, 1.0)})
    assert raw_to_record(RawSensorSample(10, 0, 0), m, 0).co == Decimal("6")
    with pytest.raises(CalibrationError):
        raw_to_record(RawSensorSample(10, 0, 0), meta(calibration={"mq7_co": Calibration(math.inf)}), 0)
    with pytest.raises(CalibrationError):
        raw_to_record(RawSensorSample(10, 0, 0), meta(calibration={"mq7_co": Calibration(1.0, -50.0)}), 0)


def test_site_meta_invariants():
    with pytest.raises(IngestionError):
        meta(thresholds={"co": Decimal(0)})
    with pytest.raises(IngestionError):
        meta(penalty_rate=Decimal(-1))


@given(st.integers(0, 1023), st.integers(0, 1023), st.integers(0, 1022))
def test_penalty_monotone_in_each_reading(a, b, c):
    m = default_site_meta()
    lo = exceedance_penalty({"co": Decimal(c), "rspm": Decimal(b)}, m)
    hi = exceedance_penalty({"co": Decimal(c + 1), "rspm": Decimal(b)}, m)
    assert hi >= lo
    lo = exceedance_penalty({"co": Decimal(a), "rspm": Decimal(c)}, m)
    hi = exceedance_penalty({"co": Decimal(a), "rspm": Decimal(c + 1)}, m)
    assert hi >= lo


def test_ingested_records_pass_validation():
    assert all(validate_record(r) == [] for r in table1_records())


HEADER = ("timestamp,location_type,so2,no2,rspm,co,industry_names,"
          "monitoring_location,penalty_value,reporting_agency\n")


def test_dataset_single_row():
    text = HEADER + "2024-01-01T00:00:00Z,Industrial,12.0,30.5,95.0,1.2,Rubber Park,KTYM-01,0,CPCB\n"
    records, errors = parse_monitoring_dataset(text)
    assert errors == []
    (r,) = records
    assert r.timestamp == parse_rfc3339("2024-01-01T00:00:00Z") == 1_704_067_200_000
    assert r.so2 == Decimal("12.0") and r.location_type is LocationType.INDUSTRIAL


def test_dataset_unicode_minus_cites_non_negativity():
    text = HEADER + "2024-01-01T00:00:00Z,Industrial,−3,30.5,95.0,1.2,Rubber Park,KTYM-01,0,CPCB\n"
    records, (error,) = parse_monitoring_dataset(text)
    assert records == []
    assert error.row == 2 and "so2 must be ≥ 0" in error.violations


def test_dataset_counts_add_up(tmp_path):
    good = synthetic_records(25, seed=4)
    text = dump_monitoring_dataset(good).splitlines()
    bad_rows = ["not-a-time,Industrial,1,1,1,1,A,B,0,C",
                "2024-01-01T00:00:00Z,Nowhere,1,1,1,1,A,B,0,C",
                "2024-01-01T00:00:00Z,Industrial,1,1,1,1,A,B,0",
                "2024-01-01T00:00:00Z,Industrial,1,-1,1,1,A,B,0,C"]
    lines = text[:1] + text[1:11] + bad_rows + text[11:]
    path = tmp_path / "data.csv"
    path.write_text("\n".join(lines) + "\n")
    records, errors = load_monitoring_dataset(path)
    assert len(records) == 25 and len(errors) == 4
    assert len(records) + len(errors) == len(lines) - 1
    assert records == good


def test_dataset_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_monitoring_dataset(tmp_path / "absent.csv")


def test_rfc3339_round_trip():
    assert format_rfc3339(1_700_000_000_000) == "2023-11-14T22:13:20.000Z"
    assert parse_rfc3339(format_rfc3339(1_700_000_000_123)) == 1_700_000_000_123
    with pytest.raises(ValueError):
        parse_rfc3339("2024-01-01T00:00:00")


def test_synthetic_duplicates_reuse_keys():
    records = synthetic_records(100, seed=1, duplicate_rate=0.3)
    assert len({r.key for r in records}) < 100
    assert synthetic_records(100, seed=1, duplicate_rate=0.3) == records
