import itertools
from dataclasses import replace
from decimal import Decimal

import pytest

from ibaqms.clock import SimClock
from ibaqms.ledger import TxStatus, compute_header_hash, verify_chain
from ibaqms.network import (
    MSG_PROPOSAL,
    ByteEdit,
    ConfigError,
    DigestMismatch,
    DuplicateURIError,
    EndorsementPolicy,
    EndorsementRejected,
    NetworkConfig,
    OrdererSpec,
    PolicyUnsatisfied,
    SigningError,
    assemble_transaction,
    commit,
    endorse,
    establish_network,
    load_config,
    order,
    table2_config,
    tamper,
)

from support import (
    ALL_PEERS,
    PEER0_ORG1,
    PEER0_ORG2,
    PEER1_ORG1,
    make_network,
    submit_all,
    valid_record,
)


def test_table2_establishment():
    network = make_network()
    assert sorted(network.peers) == sorted(ALL_PEERS)
    assert network.orderer.node_id == "orderer.iiitkottayam.com"
    assert network.config.channel == "fibchannel"
    genesis = {compute_header_hash(p.ledger.block(0).header) for p in network.peers.values()}
    assert genesis == {compute_header_hash(network.genesis.header)}
    assert [p.peer_id for p in network.endorsing_peers] == [PEER0_ORG1, PEER0_ORG2]


def test_endorser_labels_kept_as_labels():
    labels = {p.peer_id: p.label for p in table2_config().peers if p.endorsing}
    assert labels[PEER0_ORG1] == "Control Agency"
    assert "Environmentalist" in labels[PEER0_ORG2]


def test_seeded_establishment_is_deterministic():
    a = establish_network(table2_config(), SimClock(), seed=3)
    b = establish_network(table2_config(), SimClock(), seed=3)
    assert a.genesis.to_bytes() == b.genesis.to_bytes()
    assert a.certificates == b.certificates


def test_two_orderers_rejected():
    config = table2_config()
    two = replace(config, orderers=config.orderers + (OrdererSpec("orderer2", "grpc://o2:7050"),))
    with pytest.raises(ConfigError):
        establish_network(two, SimClock(), seed=1)


def test_duplicate_uri_rejected(tmp_path):
    path = tmp_path / "net.yaml"
    path.write_text("""
channel: fibchannel
nodes:
  - {org: org1, node: peer0, volume: a, service_uri: "x:1", endorsing: true}
  - {org: org1, node: peer1, volume: b, service_uri: "x:1"}
  - {role: orderer, volume: o, service_uri: "x:2"}
""")
    with pytest.raises(DuplicateURIError):
        load_config(path)


def test_config_round_trips_through_genesis_bytes():
    config = table2_config(max_tx=3, max_wait_ms=50)
    decoded = NetworkConfig.from_bytes(config.to_bytes())
    assert decoded.to_bytes() == config.to_bytes()
    assert decoded.block_cut == config.block_cut


def test_proposal_reaches_both_endorsers():
    network = make_network()
    before = sum(n for (dst, tag), n in network.bus.deliveries.items() if tag == MSG_PROPOSAL)
    submit_all(network, [valid_record()])
    proposals = {dst: n for (dst, tag), n in network.bus.deliveries.items() if tag == MSG_PROPOSAL}
    assert sum(proposals.values()) - before == 2
    assert set(proposals) == {PEER0_ORG1, PEER0_ORG2}


def test_invalid_record_delivered_then_rejected_at_endorsement():
    network = make_network()
    (proposal,) = submit_all(network, [valid_record(so2=Decimal(-1))])
    actor = network.actors["gateway-1"]
    rejections = actor.rejected[proposal.tx_id]
    assert len(rejections) == 2
    assert all(r.reason == EndorsementRejected.VALIDATION for r in rejections)
    assert all("so2 must be ≥ 0" in r.violations for r in rejections)
    assert actor.forwarded == []
    assert set(network.chain_lengths().values()) == {1}


def test_tampered_certificate_rejected_by_both_endorsers():
    network = make_network()
    actor = network.actors["gateway-1"]
    key = bytearray(actor.cert.public_key)
    key[0] ^= 0xFF
    actor.cert = replace(actor.cert, public_key=bytes(key))
    (proposal,) = submit_all(network, [valid_record()])
    rejections = actor.rejected[proposal.tx_id]
    assert {r.peer_id for r in rejections} == {PEER0_ORG1, PEER0_ORG2}
    assert all(r.reason == EndorsementRejected.AUTHENTICATION for r in rejections)


def test_unknown_actor_rejected_before_execution():
    network = make_network()
    other = make_network(seed=99)
    proposal = other.actors["gateway-1"].propose(valid_record())
    peer = network.peer(PEER0_ORG1)
    calls = []
    package = peer.chaincodes.latest("aqms")
    original = package.contract.invoke
    package.contract.invoke = lambda *a: calls.append(a) or original(*a)
    with pytest.raises(EndorsementRejected) as exc:
        endorse(peer, proposal)
    assert exc.value.reason == EndorsementRejected.AUTHENTICATION
    assert calls == []


def test_both_endorsers_agree_on_result_digest():
    network = make_network()
    proposal = network.actors["gateway-1"].propose(valid_record())
    (e1, _), (e2, _) = (endorse(p, proposal) for p in network.endorsing_peers)
    assert e1.result_digest == e2.result_digest


def test_revoked_actor_cannot_sign():
    network = make_network()
    network.actors["gateway-1"].revoke()
    with pytest.raises(SigningError):
        network.actors["gateway-1"].propose(valid_record())


def test_invoke_before_instantiate_rejected():
    network = make_network(install=True, instantiate=False)
    proposal = network.actors["gateway-1"].propose(valid_record())
    with pytest.raises(EndorsementRejected) as exc:
        endorse(network.peer(PEER0_ORG1), proposal)
    assert exc.value.reason == EndorsementRejected.NOT_INSTANTIATED


def _endorsed(network, record=None):
    proposal = network.actors["gateway-1"].propose(record or valid_record())
    results = [endorse(p, proposal) for p in network.endorsing_peers]
    return proposal, [e for e, _ in results], results[0][1]


def test_assemble_over_every_endorsement_subset():
    network = make_network()
    proposal, endorsements, ws = _endorsed(network)
    policy = network.instantiation.policy
    required = {(PEER0_ORG1, "org1"), (PEER0_ORG2, "org2")}
    for n in range(3):
        for subset in itertools.combinations(endorsements, n):
            present = {(e.peer_id, e.org_id) for e in subset}
            if present >= required:
                assert assemble_transaction(proposal, list(subset), ws, policy).endorsements == subset
            else:
                with pytest.raises(PolicyUnsatisfied) as exc:
                    assemble_transaction(proposal, list(subset), ws, policy)
                assert {(p, o) for o, p in exc.value.missing} == required - present


def test_org1_only_reports_org2_peer_missing():
    network = make_network()
    proposal, endorsements, ws = _endorsed(network)
    with pytest.raises(PolicyUnsatisfied) as exc:
        assemble_transaction(proposal, endorsements[:1], ws, network.instantiation.policy)
    assert exc.value.missing == [("org2", PEER0_ORG2)]


def test_assemble_rejects_disagreeing_digests():
    network = make_network()
    proposal, endorsements, ws = _endorsed(network)
    forged = [endorsements[0], replace(endorsements[1], result_digest=bytes(32))]
    with pytest.raises(DigestMismatch):
        assemble_transaction(proposal, forged, ws, network.instantiation.policy)


def _transactions(network, n):
    return [assemble_transaction(p, e, ws, network.instantiation.policy)
            for p, e, ws in (_endorsed(network, valid_record(timestamp=i)) for i in range(n))]


def test_order_cuts_2_2_1():
    network = make_network(max_tx=2, max_wait_ms=100)
    blocks = order(network.orderer, _transactions(network, 5))
    assert [len(b.transactions) for b in blocks] == [2, 2, 1]
    assert [b.height for b in blocks] == [1, 2, 3]


def test_single_transaction_cut_by_timeout():
    network = make_network(max_tx=10, max_wait_ms=100)
    (tx,) = _transactions(network, 1)
    t0 = network.clock.now_ms()
    network.orderer.enqueue(tx)
    network.bus.run(until=lambda: len(network.orderer.blocks) > 1)
    assert len(network.orderer.blocks) == 2
    assert network.clock.now_ms() - t0 == pytest.approx(100.0)


def test_twenty_from_one_actor_commit_in_submission_order():
    network = make_network(max_tx=3)
    records = [valid_record(timestamp=1000 + i) for i in range(20)]
    proposals = submit_all(network, records)
    for peer in network.peers.values():
        committed = [tx.proposal.tx_id for b in list(peer.ledger.blocks())[1:] for tx in b.transactions]
        assert committed == [p.tx_id for p in proposals]


def test_same_key_same_read_version_in_one_block():
    network = make_network(max_tx=2)
    txs = _transactions(network, 1) + _transactions(network, 1)  # same key, both read "absent"
    assert txs[0].write_set.reads == txs[1].write_set.reads
    order(network.orderer, txs)
    for peer in network.peers.values():
        assert peer.ledger.block(1).statuses() == [TxStatus.VALID, TxStatus.MVCC_READ_CONFLICT]


def test_out_of_order_blocks_are_buffered():
    network = make_network(max_tx=1)
    blocks = order(network.orderer, _transactions(network, 2))
    fresh = make_network(max_tx=1, seed=1)
    peer = fresh.peer(PEER1_ORG1)
    assert commit(peer, blocks[1]) == []
    events = commit(peer, blocks[0])
    assert [e.height for e in events] == [1, 2]
    assert verify_chain(peer.ledger).valid


def test_duplicate_block_ignored():
    network = make_network(max_tx=1)
    (block,) = order(network.orderer, _transactions(network, 1))
    peer = network.peer(PEER1_ORG1)
    assert commit(peer, block) == []
    assert len(peer.ledger) == 2


def test_send_transaction_missing_endorsement_marked_invalid():
    network = make_network(max_tx=1)
    proposal, endorsements, ws = _endorsed(network)
    from ibaqms.transaction import Transaction

    network.actors["gateway-1"].send_transaction(Transaction(proposal, ws, tuple(endorsements[:1])))
    network.run_until_idle()
    for peer in network.peers.values():
        assert peer.ledger.block(1).statuses() == [TxStatus.ENDORSEMENT_POLICY_FAILURE]


def test_forged_endorsement_signature_ignored_by_committer():
    network = make_network(max_tx=1)
    proposal, endorsements, ws = _endorsed(network)
    from ibaqms.transaction import Transaction

    bad = replace(endorsements[1], signature=replace(endorsements[1].signature, value=bytes(64)))
    network.actors["gateway-1"].send_transaction(Transaction(proposal, ws, (endorsements[0], bad)))
    network.run_until_idle()
    assert network.peer(PEER0_ORG1).ledger.block(1).statuses() == [TxStatus.ENDORSEMENT_POLICY_FAILURE]


def test_tamper_diverges_exactly_one_peer():
    network = make_network()
    submit_all(network, [valid_record(timestamp=i) for i in range(6)])
    assert len(set(network.tip_digests().values())) == 1
    peer = network.peer(PEER1_ORG1)
    raw = peer.ledger.raw_block(1)
    tamper(peer, 1, ByteEdit(100, bytes([raw[100] ^ 1])))
    digests = network.tip_digests()
    divergent = [pid for pid, d in digests.items() if list(digests.values()).count(d) == 1]
    assert divergent == [PEER1_ORG1]
    report = verify_chain(peer.ledger)
    assert 1 in report.bad_indices


def test_tamper_with_empty_edit_keeps_chain_valid():
    network = make_network()
    submit_all(network, [valid_record()])
    peer = network.peer(PEER1_ORG1)
    tamper(peer, 1, ByteEdit(5))
    assert verify_chain(peer.ledger).valid
    assert len(set(network.tip_digests().values())) == 1


def test_tamper_out_of_range_height():
    network = make_network()
    with pytest.raises(IndexError):
        tamper(network.peer(PEER0_ORG1), 7, ByteEdit(0, b"x"))


def test_custom_policy_restricts_endorsers():
    network = make_network(install=True, instantiate=False)
    network.instantiate("aqms", EndorsementPolicy((("org1", PEER0_ORG1),)))
    submit_all(network, [valid_record()])
    assert network.peer(PEER1_ORG1).ledger.block(1).statuses() == [TxStatus.VALID]
