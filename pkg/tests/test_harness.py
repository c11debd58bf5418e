import pytest

from ibaqms.harness import PHASES, PipelineError, RunConfig, TimingReport, load_dataset, run_pipeline
from ibaqms.ingestion import dump_monitoring_dataset, synthetic_records
from ibaqms.network import table2_config


def sim_run(**kw):
    kw.setdefault("seed", 5)
    return run_pipeline(RunConfig(sim_clock=True, **kw))


def test_table1_with_max_tx_4():
    result = sim_run(network=table2_config(max_tx=4))
    s = result.summary
    assert s.block_sizes == [4, 4, 4, 2]
    assert s.valid_tx == 14 and s.invalid_tx == 0
    assert len(set(s.tip_digests.values())) == 1 and len(s.tip_digests) == 4
    assert s.ok


def test_report_has_eight_phases_in_order():
    report = sim_run().report
    assert [name for name, _ in report.phases] == list(PHASES)
    assert report.check_shape() == []


def test_zero_records():
    result = sim_run(records=0)
    assert result.report.duration("invoke") == 0.0
    assert result.report.duration("query") == 0.0
    assert result.report.check_shape() == []
    assert result.summary.ok


def test_simulated_reports_identical():
    assert sim_run().report.to_csv() == sim_run().report.to_csv()


def test_too_many_records_fails_in_prerequisites():
    with pytest.raises(PipelineError) as exc:
        sim_run(records=15)
    assert exc.value.phase == "prerequisites"


def test_real_clock_durations_non_negative():
    report = run_pipeline(RunConfig(records=3)).report
    assert report.check_shape() == []


def test_report_csv_round_trip():
    report = TimingReport([(p, i * 1.5) for i, p in enumerate(PHASES)])
    assert TimingReport.from_csv(report.to_csv()) == report
    assert report.to_csv().splitlines()[0] == "phase,milliseconds"


def test_check_shape_flags_problems():
    assert TimingReport([("query", -1.0)]).check_shape()


def test_dataset_detection(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(dump_monitoring_dataset(synthetic_records(3)))
    records, errors = load_dataset(path)
    assert len(records) == 3 and not errors
    path.write_text("a,b\n1,2\n")
    records, errors = load_dataset(path)
    assert records == [] and errors


def test_artifacts_written(tmp_path):
    sim_run(dump_dir=tmp_path, records=4)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"timing.csv", "summary.json", "certs", "peer0.aic.com.ledger"} <= names
    assert len(list((tmp_path / "certs").iterdir())) == 5  # 4 peers and the orderer
