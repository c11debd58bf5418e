"""End-to-end pipeline run with per-phase timing, plus the on-disk run artifacts."""

from __future__ import annotations

import contextlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .chaincode import AirQualityContract, ChaincodePackage, ExecutionContext, query_emission
from .clock import RealClock, SimClock, SimCosts
from .ingestion import (
    DATASET_HEADER,
    SENSOR_HEADER,
    RowError,
    default_site_meta,
    parse_monitoring_dataset,
    parse_sensor_csv,
    samples_to_records,
    table1_text,
)
from .ledger import TxStatus, verify_chain
from .network import Network, NetworkConfig, establish_network, table2_config

log = logging.getLogger(__name__)

PHASES = (
    "prerequisites",
    "generate_certificates",
    "establish_channel",
    "peer_join",
    "chaincode_install",
    "chaincode_instantiate",
    "invoke",
    "query",
)

CHAINCODE_NAME = "aqms"
CHAINCODE_VERSION = "1.0"
ACTOR_ID = "gateway-1"

LEDGER_SUFFIX = ".ledger"
TIMING_FILE = "timing.csv"
SUMMARY_FILE = "summary.json"


class PipelineError(Exception):
    def __init__(self, phase: str, cause: BaseException) -> None:
        super().__init__(f"{phase}: {cause}")
        self.phase = phase
        self.cause = cause


@dataclass
class TimingReport:
    phases: list[tuple[str, float]] = field(default_factory=list)

    def duration(self, name: str) -> float:
        return dict(self.phases)[name]

    def to_csv(self) -> str:
        lines = ["phase,milliseconds"]
        lines += [f"{name},{ms:.3f}" for name, ms in self.phases]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "TimingReport":
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        return cls([(name, float(ms)) for name, ms in rows])

    def render_table(self) -> str:
        width = max(len(p) for p in PHASES)
        lines = [f"{'phase':<{width}}  {'ms':>12}", f"{'-' * width}  {'-' * 12}"]
        lines += [f"{name:<{width}}  {ms:>12.3f}" for name, ms in self.phases]
        return "\n".join(lines)

    def check_shape(self) -> list[str]:
        problems = []
        if [name for name, _ in self.phases] != list(PHASES):
            problems.append(f"phases {[n for n, _ in self.phases]} != {list(PHASES)}")
        problems += [f"{name} has negative duration {ms}" for name, ms in self.phases if ms < 0]
        return problems


class PhaseTimer:
    def __init__(self, clock) -> None:
        self.clock = clock
        self.report = TimingReport()

    @contextlib.contextmanager
    def phase(self, name: str):
        start = self.clock.now_ms()
        try:
            yield
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        self.report.phases.append((name, max(0.0, self.clock.now_ms() - start)))

    def skip(self, name: str) -> None:
        self.report.phases.append((name, 0.0))


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=table2_config)
    dataset: Optional[Path] = None
    records: Optional[int] = None
    seed: Optional[int] = None
    sim_clock: bool = False
    dump_dir: Optional[Path] = None
    costs: SimCosts = SimCosts()


@dataclass
class Summary:
    records_submitted: int
    blocks_committed: int
    block_sizes: list[int]
    valid_tx: int
    invalid_tx: int
    rejected_proposals: int
    dataset_errors: list[str]
    tip_digests: dict[str, str]
    chain_lengths: dict[str, int]
    verified: dict[str, bool]
    queried: int

    @property
    def peers_agree(self) -> bool:
        return len(set(self.tip_digests.values())) == 1 and len(set(self.chain_lengths.values())) == 1

    @property
    def ok(self) -> bool:
        return self.peers_agree and all(self.verified.values())

    def to_json(self) -> str:
        data = dict(self.__dict__)
        data["peers_agree"] = self.peers_agree
        data["ok"] = self.ok
        return json.dumps(data, indent=2, sort_keys=True)


@dataclass
class RunResult:
    report: TimingReport
    summary: Summary
    network: Network


def load_dataset(path: Optional[Path]):
    """Sensor CSV (mq7_co,mq2_smoke,mq135_co2) or 10-column monitoring dataset, told apart by header."""
    text = table1_text() if path is None else Path(path).read_text(encoding="utf-8")
    first = text.lstrip().split("\n", 1)[0].strip().lower()
    header = tuple(c.strip() for c in first.split(","))
    if header == DATASET_HEADER:
        return parse_monitoring_dataset(text)
    if header == SENSOR_HEADER:
        samples, errors = parse_sensor_csv(text)
        return samples_to_records(samples, default_site_meta()), errors
    return [], [RowError(1, f"unrecognised header {first!r}")]


def run_pipeline(config: RunConfig) -> RunResult:
    clock = SimClock() if config.sim_clock else RealClock()
    timer = PhaseTimer(clock)

    with timer.phase("prerequisites"):
        clock.charge(config.costs.prerequisites_ms)
        config.network.validate()
        records, errors = load_dataset(config.dataset)
        wanted = len(records) if config.records is None else config.records
        if wanted < 0 or wanted > len(records):
            raise ValueError(f"requested {wanted} records but the dataset has {len(records)} valid rows")
        records = records[:wanted]

    cert_dir = config.dump_dir / "certs" if config.dump_dir else None
    network = establish_network(config.network, clock, config.seed, config.costs,
                                phase=timer.phase, cert_dir=cert_dir)

    with timer.phase("chaincode_install"):
        package = ChaincodePackage(CHAINCODE_NAME, CHAINCODE_VERSION, AirQualityContract())
        network.install(package)

    with timer.phase("chaincode_instantiate"):
        network.instantiate(CHAINCODE_NAME)

    actor = network.add_actor(ACTOR_ID)
    if records:
        with timer.phase("invoke"):
            for record in records:
                actor.submit(record)
            network.run_until_idle()
    else:
        timer.skip("invoke")

    reference = next(iter(network.peers.values()))
    committed_keys = list(reference.ledger.state.keys())
    if committed_keys:
        with timer.phase("query"):
            for key in committed_keys:
                clock.charge(config.costs.query_ms)
                query_emission(ExecutionContext(reference.ledger.state), key)
    else:
        timer.skip("query")

    summary = summarize(network, records, errors, len(committed_keys))
    if config.dump_dir is not None:
        write_artifacts(config.dump_dir, network, timer.report, summary)
    return RunResult(timer.report, summary, network)


def summarize(network: Network, records, errors, queried: int) -> Summary:
    reference = next(iter(network.peers.values()))
    blocks = list(reference.ledger.blocks())[1:]
    statuses = [s for b in blocks for s in b.statuses()]
    valid = sum(s is TxStatus.VALID for s in statuses)
    rejected = sum(len(a.rejected) for a in network.actors.values())
    return Summary(
        records_submitted=len(records),
        blocks_committed=len(blocks),
        block_sizes=[len(b.transactions) for b in blocks],
        valid_tx=valid,
        invalid_tx=len(statuses) - valid,
        rejected_proposals=rejected,
        dataset_errors=[str(e) for e in errors],
        tip_digests={pid: d.hex() for pid, d in network.tip_digests().items()},
        chain_lengths=network.chain_lengths(),
        verified={pid: verify_chain(p.ledger).valid for pid, p in network.peers.items()},
        queried=queried,
    )


def dump_path(dump_dir: Path, peer_id: str) -> Path:
    return Path(dump_dir) / f"{peer_id}{LEDGER_SUFFIX}"


def write_artifacts(dump_dir: Path, network: Network, report: TimingReport, summary: Summary) -> None:
    dump_dir = Path(dump_dir)
    dump_dir.mkdir(parents=True, exist_ok=True)
    for peer_id, peer in network.peers.items():
        _atomic_write(dump_path(dump_dir, peer_id), peer.ledger.dump_bytes())
    _atomic_write(dump_dir / TIMING_FILE, report.to_csv().encode())
    _atomic_write(dump_dir / SUMMARY_FILE, summary.to_json().encode())


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)

