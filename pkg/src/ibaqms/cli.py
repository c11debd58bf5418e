"""``ibaqms`` command line: run the pipeline, then inspect, tamper with and verify replicas.

Exit codes: 0 success, 1 invalid ledger or failed run, 2 usage error,
3 key absent, 4 file error, 5 bad argument (unknown peer, height, field).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from decimal import Decimal
from pathlib import Path

from .chaincode import EmissionRecord, ExecutionContext, query_emission
from .harness import (
    LEDGER_SUFFIX,
    SUMMARY_FILE,
    TIMING_FILE,
    PipelineError,
    RunConfig,
    TimingReport,
    dump_path,
    run_pipeline,
)
from .encoding import DecodeError
from .ledger import DumpError, Ledger, verify_chain
from .network import ConfigError, genesis_config, load_config, structural_validator, table2_config
from .transaction import Proposal, Transaction

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ABSENT = 3
EXIT_FILE = 4
EXIT_BAD_ARG = 5

DEFAULT_DUMP_DIR = Path("ibaqms-run")

RECORD_FIELDS = ("so2", "no2", "rspm", "co", "penalty_value", "reporting_agency", "monitoring_location")
TAMPER_FIELDS = RECORD_FIELDS + ("timestamp",)


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


def load_replica(dump_dir: Path, peer: str) -> Ledger:
    path = dump_path(dump_dir, peer)
    known = _known_peers(dump_dir)
    if known is not None and peer not in known:
        raise CliError(f"unknown peer {peer!r}; known: {', '.join(known)}", EXIT_BAD_ARG)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read ledger dump {path}: {exc.strerror}", EXIT_FILE) from None
    ledger = Ledger.load_bytes(data)
    try:
        ledger.validator = structural_validator(genesis_config(ledger).default_policy())
    except (DecodeError, IndexError, AttributeError):
        # unreadable genesis: verification reports it
        return ledger
    ledger.rebuild_state()
    return ledger


def _known_peers(dump_dir: Path):
    try:
        summary = json.loads((Path(dump_dir) / SUMMARY_FILE).read_text())
    except (OSError, ValueError):
        return None
    return sorted(summary.get("chain_lengths", {}))


def _default_peer(dump_dir: Path) -> str:
    known = _known_peers(dump_dir)
    if known:
        return known[0]
    found = sorted(Path(dump_dir).glob(f"*{LEDGER_SUFFIX}"))
    if not found:
        raise CliError(f"no ledger dumps in {dump_dir}", EXIT_FILE)
    return found[0].name[:-len(LEDGER_SUFFIX)]


# commands --------------------------------------------------------------------


def cmd_run(args) -> int:
    network = load_config(args.config) if args.config else table2_config()
    if args.max_tx is not None:
        network = network.with_block_cut(max_tx=args.max_tx)
    config = RunConfig(
        network=network,
        dataset=Path(args.dataset) if args.dataset else None,
        records=args.records,
        seed=args.seed,
        sim_clock=args.sim_clock,
        dump_dir=Path(args.dump_dir),
    )
    try:
        result = run_pipeline(config)
    except PipelineError as exc:
        print(f"run failed in phase {exc.phase}: {exc.cause}", file=sys.stderr)
        return EXIT_INVALID
    summary = result.summary
    print(result.report.render_table())
    print()
    print(f"records submitted : {summary.records_submitted}")
    print(f"blocks committed  : {summary.blocks_committed} {summary.block_sizes}")
    print(f"transactions      : {summary.valid_tx} valid, {summary.invalid_tx} invalid, "
          f"{summary.rejected_proposals} rejected at endorsement")
    for peer_id, tip in summary.tip_digests.items():
        status = "verified" if summary.verified[peer_id] else "FAILED verification"
        print(f"  {peer_id:<28} len={summary.chain_lengths[peer_id]:<4} tip={tip[:16]}  {status}")
    if not args.sim_clock and summary.records_submitted >= 10:
        report = result.report
        if report.duration("chaincode_instantiate") <= report.duration("chaincode_install"):
            print("WARN: chaincode_instantiate was not slower than chaincode_install")
    print("replicas agree" if summary.peers_agree else "replicas DISAGREE")
    print(f"artifacts written to {args.dump_dir}")
    return EXIT_OK if summary.ok else EXIT_INVALID


def cmd_verify(args) -> int:
    dump_dir = Path(args.dump_dir)
    peer = args.peer or _default_peer(dump_dir)
    try:
        ledger = load_replica(dump_dir, peer)
    except DumpError as exc:
        print(f"INVALID: {exc}")
        return EXIT_INVALID
    report = verify_chain(ledger)
    reasons: dict[int, list[str]] = {}
    for m in report.mismatches:
        reasons.setdefault(m.index, []).append(m.reason)
    for height in range(report.length):
        status = "ok" if height not in reasons else "MISMATCH: " + "; ".join(reasons[height])
        print(f"block {height}: {status}")
    if not report.state_consistent:
        print("world state differs from replay")
    if report.valid:
        print("VALID")
        return EXIT_OK
    bad = ", ".join(str(h) for h in report.bad_indices) or "state"
    print(f"INVALID at height {bad}")
    return EXIT_INVALID


def _mutate_record(record: EmissionRecord, field_name: str) -> EmissionRecord:
    value = getattr(record, field_name)
    if isinstance(value, Decimal):
        return replace(record, **{field_name: value + 1})
    return replace(record, **{field_name: value + "X"})


def cmd_tamper(args) -> int:
    dump_dir = Path(args.dump_dir)
    path = dump_path(dump_dir, args.peer)
    ledger = load_replica(dump_dir, args.peer)
    if not 0 <= args.height < len(ledger):
        raise CliError(f"height {args.height} out of range (chain length {len(ledger)})", EXIT_BAD_ARG)
    if args.field not in TAMPER_FIELDS:
        raise CliError(f"unknown field {args.field!r}; choose from {', '.join(TAMPER_FIELDS)}", EXIT_BAD_ARG)
    block = ledger.block(args.height)
    if args.field == "timestamp":
        tampered = replace(block, header=replace(block.header, timestamp=block.header.timestamp + 1))
    else:
        if not 0 <= args.tx < len(block.transactions) or not isinstance(block.transactions[args.tx], Transaction):
            raise CliError(f"block {args.height} has no emission transaction #{args.tx}", EXIT_BAD_ARG)
        tx = block.transactions[args.tx]
        proposal: Proposal = replace(tx.proposal, record=_mutate_record(tx.proposal.record, args.field))
        txs = list(block.transactions)
        txs[args.tx] = replace(tx, proposal=proposal)
        # header (and so tx_root) deliberately left as committed
        tampered = replace(block, transactions=tuple(txs))
    ledger.overwrite_block(args.height, tampered.to_bytes())
    path.write_bytes(ledger.dump_bytes())
    print(f"tampered {args.field} in block {args.height} of {args.peer}")
    return EXIT_OK


def cmd_query(args) -> int:
    dump_dir = Path(args.dump_dir)
    peer = args.peer or _default_peer(dump_dir)
    ledger = load_replica(dump_dir, peer)
    start = time.perf_counter()
    record = query_emission(ExecutionContext(ledger.state), args.key)
    elapsed = (time.perf_counter() - start) * 1000
    if record is None:
        print("absent")
        return EXIT_ABSENT
    for name in ("timestamp", "location_type", "so2", "no2", "rspm", "co", "industry_names",
                 "monitoring_location", "penalty_value", "reporting_agency"):
        value = getattr(record, name)
        if name == "location_type":
            value = value.name
        elif name == "industry_names":
            value = "; ".join(value)
        elif isinstance(value, Decimal):
            value = format(value.normalize(), "f")
        print(f"{name:<20} {value}")
    print(f"(query {elapsed:.3f} ms on {peer})", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.dump_dir) / TIMING_FILE
    try:
        report = TimingReport.from_csv(path.read_text())
    except OSError as exc:
        raise CliError(f"cannot read timing report {path}: {exc.strerror}", EXIT_FILE) from None
    print(report.to_csv() if args.format == "csv" else report.render_table(), end="\n" if args.format != "csv" else "")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibaqms", description="Simulated air-quality ledger network")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_dump_dir(p):
        p.add_argument("--dump-dir", default=str(DEFAULT_DUMP_DIR), help="run artifact directory")
        return p

    run = with_dump_dir(sub.add_parser("run", help="establish the network and drive the pipeline"))
    run.add_argument("--config", help="topology YAML (default: bundled two-org fibchannel layout)")
    run.add_argument("--dataset", help="sensor CSV or 10-column monitoring CSV (default: bundled sensor readings)")
    run.add_argument("--records", type=int, help="number of records to submit (default: all)")
    run.add_argument("--seed", type=int, help="seed for keys, nonces and bus jitter")
    run.add_argument("--sim-clock", action="store_true", help="use the simulated clock")
    run.add_argument("--max-tx", type=int, help="override block_cut.max_tx")
    run.set_defaults(func=cmd_run)

    verify = with_dump_dir(sub.add_parser("verify", help="verify one peer's ledger dump"))
    verify.add_argument("--peer", help="peer id (volume label)")
    verify.set_defaults(func=cmd_verify)

    tamper = with_dump_dir(sub.add_parser("tamper", help="edit one field of a stored block"))
    tamper.add_argument("--peer", required=True)
    tamper.add_argument("--height", type=int, required=True)
    tamper.add_argument("--field", required=True, help=f"one of {', '.join(TAMPER_FIELDS)}")
    tamper.add_argument("--tx", type=int, default=0, help="transaction index inside the block")
    tamper.set_defaults(func=cmd_tamper)

    query = with_dump_dir(sub.add_parser("query", help="print the committed record for a key"))
    query.add_argument("key")
    query.add_argument("--peer")
    query.set_defaults(func=cmd_query)

    report = with_dump_dir(sub.add_parser("report", help="print the phase timing report"))
    report.add_argument("--format", choices=("table", "csv"), default="table")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
