"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

from dataclasses import replace
from decimal import Decimal

from ibaqms.chaincode import AirQualityContract, ChaincodePackage, EmissionRecord, LocationType
from ibaqms.clock import SimClock
from ibaqms.network import Network, establish_network, table2_config
from ibaqms.transaction import ConfigTransaction

PEER0_ORG1 = "peer0.iiitkottayam.com"
PEER1_ORG1 = "peer1.iiitkottayam.com"
PEER0_ORG2 = "peer0.aic.com"
PEER1_ORG2 = "peer1.aic.com"
ALL_PEERS = (PEER0_ORG1, PEER1_ORG1, PEER0_ORG2, PEER1_ORG2)


def valid_record(**overrides) -> EmissionRecord:
    base = EmissionRecord(
        timestamp=1_700_000_000_000,
        location_type=LocationType.INDUSTRIAL,
        so2=Decimal("12.0"),
        no2=Decimal("30.5"),
        rspm=Decimal("95.0"),
        co=Decimal("1.2"),
        industry_names=("Travancore Cements",),
        monitoring_location="KTYM-01",
        penalty_value=Decimal("0"),
        reporting_agency="CPCB",
    )
    return replace(base, **overrides)


def aqms_package(version: str = "1.0") -> ChaincodePackage:
    return ChaincodePackage("aqms", version, AirQualityContract())


def make_network(max_tx: int = 4, max_wait_ms: float = 100.0, seed: int = 1,
                 install: bool = True, instantiate: bool = True, clock=None) -> Network:
    config = table2_config(max_tx=max_tx, max_wait_ms=max_wait_ms)
    network = establish_network(config, clock or SimClock(), seed=seed)
    if install:
        network.install(aqms_package())
    if instantiate:
        network.instantiate("aqms")
    network.add_actor("gateway-1")
    return network


def submit_all(network: Network, records, actor_id: str = "gateway-1"):
    actor = network.actors[actor_id]
    proposals = [actor.submit(r) for r in records]
    network.run_until_idle()
    return proposals


def oracle_world_state(blocks, required: set[tuple[str, str]]):
    """Sequential key-value application with an explicit read-version check.

    Deliberately independent of the ledger's validation code path: policy is
    checked as a set inclusion over endorser identities, MVCC as equality of
    the recorded read version with the current version in a plain dict.
    """
    state: dict[str, tuple[bytes, tuple[int, int]]] = {}
    for block in blocks:
        for index, tx in enumerate(block.transactions):
            if isinstance(tx, ConfigTransaction):
                continue
            endorsers = {(e.org_id, e.peer_id) for e in tx.endorsements}
            if not required <= endorsers:
                continue
            if any(e.result_digest != tx.write_set.digest() for e in tx.endorsements):
                continue
            if any((state[k][1] if k in state else None) != v for k, v in tx.write_set.reads):
                continue
            for key, value in tx.write_set.writes:
                state[key] = (value, (block.header.height, index))
    return state


def standalone_tx(record: EmissionRecord, state=None, actor: str = "gateway-1", nonce: bytes = bytes(16)):
    """A signed, unendorsed transaction simulated against ``state`` (ledger-level tests)."""
    from ibaqms.chaincode import ExecutionContext, invoke_record_emission
    from ibaqms.identity import create_ca, issue_certificate
    from ibaqms.ledger import WorldState
    from ibaqms.transaction import Transaction, make_proposal

    ca = create_ca("org1", b"standalone")
    cert, key = issue_certificate(ca, actor)
    proposal = make_proposal(actor, key, cert, "fibchannel", "aqms", record, nonce)
    write_set = invoke_record_emission(ExecutionContext(state or WorldState()), record)
    return Transaction(proposal, write_set, ())
