"""In-process permissioned network: actors, endorsing/committing peers, one orderer.

Nodes never share mutable state. They talk only through :class:`Bus`, a
discrete-event message queue whose frames are ``u8 tag || canonical bytes``.
With a :class:`~ibaqms.clock.SimClock` and a seed every run is reproducible;
with a :class:`~ibaqms.clock.RealClock` the bus sleeps out link latencies.
"""

from __future__ import annotations

import heapq
import logging
import os
import random
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

import yaml

from . import chaincode
from .chaincode import (
    ChaincodePackage,
    ChaincodeRegistry,
    ExecutionContext,
    InstantiateReceipt,
    InstantiationRecord,
    ValidationError,
)
from .clock import Clock, RealClock, SimCosts
from .encoding import DIGEST_SIZE, DecodeError, Reader, Writer, decode_all
from .identity import CA, Certificate, Membership, SigningKey, create_ca, issue_certificate, sign, verify
from .ledger import Block, Ledger, LinkageError, TxStatus, build_block, compute_header_hash, make_genesis
from .transaction import (
    NONCE_SIZE,
    Endorsement,
    Proposal,
    Transaction,
    encode_transaction,
    endorsement_message,
    make_proposal,
    read_transaction,
)

log = logging.getLogger(__name__)

MSG_PROPOSAL = 1
MSG_ENDORSEMENT = 2
MSG_REJECTION = 3
MSG_TRANSACTION = 4
MSG_BLOCK = 5
MSG_INSTANTIATE = 6
MSG_ACK = 7
MSG_JOIN = 8

ENDORSER_LABELS = ("Control Agency", "Environmentalist", "Industrialists")


class NetworkError(Exception):
    pass


class ConfigError(NetworkError):
    pass


class DuplicateURIError(ConfigError):
    pass


class PolicyUnsatisfied(NetworkError):
    def __init__(self, missing: list[tuple[str, str]]) -> None:
        super().__init__("endorsement policy unsatisfied, missing: "
                         + ", ".join(f"{peer}@{org}" for org, peer in missing))
        self.missing = missing


class DigestMismatch(NetworkError):
    pass


class SigningError(NetworkError):
    pass


class EndorsementRejected(NetworkError):
    AUTHENTICATION = 1
    VALIDATION = 2
    NOT_INSTANTIATED = 3
    MALFORMED = 4
    WRONG_CHANNEL = 5

    def __init__(self, reason: int, detail: str, violations: Iterable[str] = ()) -> None:
        super().__init__(detail)
        self.reason = reason
        self.detail = detail
        self.violations = list(violations)


# configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class PeerSpec:
    peer_id: str
    org_id: str
    service_uri: str
    endorsing: bool = False
    name: str = ""
    label: str = ""


@dataclass(frozen=True)
class OrgSpec:
    org_id: str
    peers: tuple[PeerSpec, ...]


@dataclass(frozen=True)
class OrdererSpec:
    orderer_id: str
    service_uri: str
    org_id: str = "orderer"


@dataclass(frozen=True)
class BlockCut:
    max_tx: int = 10
    max_wait_ms: float = 200.0


@dataclass(frozen=True)
class EndorsementPolicy:
    """All listed (org_id, peer_id) pairs must endorse."""

    required: tuple[tuple[str, str], ...]

    def missing(self, endorsements: Iterable[Endorsement]) -> list[tuple[str, str]]:
        present = {(e.org_id, e.peer_id) for e in endorsements}
        return [pair for pair in self.required if pair not in present]

    def satisfied_by(self, endorsements: Iterable[Endorsement]) -> bool:
        return not self.missing(endorsements)

    def write(self, w: Writer) -> None:
        w.seq(self.required, lambda w, pair: w.string(pair[0]).string(pair[1]))

    @classmethod
    def read(cls, r: Reader) -> "EndorsementPolicy":
        return cls(tuple(r.seq(lambda r: (r.string(), r.string()))))


@dataclass(frozen=True)
class NetworkConfig:
    orgs: tuple[OrgSpec, ...]
    orderers: tuple[OrdererSpec, ...]
    channel: str
    block_cut: BlockCut = BlockCut()
    # bus parameters; not part of the genesis bytes
    latency_ms: float = 2.0
    jitter_ms: float = 0.0

    @property
    def orderer(self) -> OrdererSpec:
        return self.orderers[0]

    @property
    def peers(self) -> list[PeerSpec]:
        return [p for org in self.orgs for p in org.peers]

    def validate(self) -> None:
        if not self.orgs:
            raise ConfigError("config must define at least one organization")
        if len(self.orderers) != 1:
            raise ConfigError(f"config must define exactly one orderer, found {len(self.orderers)}")
        if not self.channel:
            raise ConfigError("channel name must be non-empty")
        for org in self.orgs:
            if not org.peers:
                raise ConfigError(f"organization {org.org_id} has no peers")
            if not any(p.endorsing for p in org.peers):
                raise ConfigError(f"organization {org.org_id} has no endorsing peer")
        if self.block_cut.max_tx < 1:
            raise ConfigError("block_cut.max_tx must be a positive integer")
        if self.block_cut.max_wait_ms < 0:
            raise ConfigError("block_cut.max_wait_ms must be non-negative")
        ids = [p.peer_id for p in self.peers] + [o.orderer_id for o in self.orderers]
        dupes = [i for i, n in Counter(ids).items() if n > 1]
        if dupes:
            raise ConfigError(f"duplicate node ids: {', '.join(dupes)}")
        uris = [p.service_uri for p in self.peers] + [o.service_uri for o in self.orderers]
        dupes = [u for u, n in Counter(uris).items() if n > 1]
        if dupes:
            raise DuplicateURIError(f"duplicate service URIs: {', '.join(dupes)}")

    def default_policy(self) -> EndorsementPolicy:
        return EndorsementPolicy(tuple((p.org_id, p.peer_id) for p in self.peers if p.endorsing))

    def check_policy_members(self, policy: EndorsementPolicy) -> None:
        endorsers = {(p.org_id, p.peer_id) for p in self.peers if p.endorsing}
        unknown = [pair for pair in policy.required if pair not in endorsers]
        if unknown:
            raise chaincode.InvalidPolicy(
                "policy names non-endorsing or unknown peers: "
                + ", ".join(f"{peer}@{org}" for org, peer in unknown))

    def write(self, w: Writer) -> None:
        def peer(w: Writer, p: PeerSpec) -> None:
            w.string(p.peer_id).string(p.org_id).string(p.service_uri)
            w.boolean(p.endorsing).string(p.name).string(p.label)

        w.string(self.channel)
        w.seq(self.orgs, lambda w, org: w.string(org.org_id).seq(org.peers, peer))
        w.seq(self.orderers, lambda w, o: w.string(o.orderer_id).string(o.service_uri).string(o.org_id))
        w.u32(self.block_cut.max_tx).u64(int(round(self.block_cut.max_wait_ms * 1000)))

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> "NetworkConfig":
        channel = r.string()

        def peer(r: Reader) -> PeerSpec:
            return PeerSpec(r.string(), r.string(), r.string(), r.boolean(), r.string(), r.string())

        orgs = tuple(r.seq(lambda r: OrgSpec(r.string(), tuple(r.seq(peer)))))
        orderers = tuple(r.seq(lambda r: OrdererSpec(r.string(), r.string(), r.string())))
        cut = BlockCut(r.u32(), r.u64() / 1000.0)
        return cls(orgs, orderers, channel, cut)

    @classmethod
    def from_bytes(cls, data: bytes) -> "NetworkConfig":
        return decode_all(data, cls.read)

    def with_block_cut(self, max_tx: int | None = None, max_wait_ms: float | None = None) -> "NetworkConfig":
        cut = BlockCut(self.block_cut.max_tx if max_tx is None else max_tx,
                       self.block_cut.max_wait_ms if max_wait_ms is None else max_wait_ms)
        return NetworkConfig(self.orgs, self.orderers, self.channel, cut, self.latency_ms, self.jitter_ms)


def config_from_mapping(data: Mapping) -> NetworkConfig:
    """Build a config from the node table layout (one row per node, as in the YAML file)."""
    rows = data.get("nodes") or []
    networks = {str(row.get("network", "")) for row in rows}
    channel = str(data.get("channel") or (networks.pop() if len(networks) == 1 else ""))
    for row in rows:
        if str(row.get("network", channel)) != channel:
            raise ConfigError(f"node {row.get('volume')} is on network {row.get('network')!r}, "
                              f"expected {channel!r}")
    orgs: dict[str, list[PeerSpec]] = {}
    orderers = []
    for row in rows:
        try:
            node_id = str(row["volume"])
            uri = str(row["service_uri"])
        except KeyError as exc:
            raise ConfigError(f"node row missing {exc.args[0]!r}: {row}") from None
        if str(row.get("role", "peer")) == "orderer":
            orderers.append(OrdererSpec(node_id, uri, str(row.get("org", "orderer"))))
            continue
        org_id = str(row.get("org", ""))
        orgs.setdefault(org_id, []).append(PeerSpec(
            peer_id=node_id,
            org_id=org_id,
            service_uri=uri,
            endorsing=bool(row.get("endorsing", False)),
            name=str(row.get("node", "")),
            label=str(row.get("label", "")),
        ))
    cut = data.get("block_cut") or {}
    bus = data.get("bus") or {}
    config = NetworkConfig(
        orgs=tuple(OrgSpec(org_id, tuple(peers)) for org_id, peers in orgs.items()),
        orderers=tuple(orderers),
        channel=channel,
        block_cut=BlockCut(int(cut.get("max_tx", 10)), float(cut.get("max_wait_ms", 200.0))),
        latency_ms=float(bus.get("latency_ms", 2.0)),
        jitter_ms=float(bus.get("jitter_ms", 0.0)),
    )
    config.validate()
    return config


def load_config(path: str | os.PathLike) -> NetworkConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_mapping(data)


def table2_config(max_tx: int = 10, max_wait_ms: float = 200.0) -> NetworkConfig:
    """The two-organization topology on channel ``fibchannel``."""
    from importlib import resources

    text = resources.files("ibaqms.data").joinpath("table2.yaml").read_text(encoding="utf-8")
    return config_from_mapping(yaml.safe_load(text)).with_block_cut(max_tx, max_wait_ms)


# bus -------------------------------------------------------------------------


def encode_frame(tag: int, payload: bytes) -> bytes:
    return bytes([tag]) + payload


def decode_frame(frame: bytes) -> tuple[int, bytes]:
    if not frame:
        raise DecodeError("empty frame")
    return frame[0], frame[1:]


class Bus:
    """Discrete-event message bus with per-link latency and FIFO links."""

    def __init__(self, clock: Clock, latency_ms: float = 2.0, jitter_ms: float = 0.0,
                 rng: Optional[random.Random] = None) -> None:
        self.clock = clock
        self.latency_ms = latency_ms
        self.jitter_ms = jitter_ms
        self.rng = rng or random.Random()
        self.nodes: dict[str, "Node"] = {}
        self._queue: list = []
        self._seq = 0
        self._link_tail: dict[tuple[str, str], float] = {}
        self.deliveries: Counter = Counter()
        self.trace: list[tuple[float, str, str, int]] = []

    def register(self, node: "Node") -> None:
        self.nodes[node.node_id] = node
        node.bus = self

    def _push(self, at: float, item) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, item))

    def send(self, src: str, dst: str, frame: bytes) -> None:
        if dst not in self.nodes:
            raise NetworkError(f"unknown destination {dst}")
        delay = self.latency_ms
        if self.jitter_ms:
            delay += self.rng.uniform(0.0, self.jitter_ms)
        at = max(self.clock.now_ms() + delay, self._link_tail.get((src, dst), 0.0))
        self._link_tail[(src, dst)] = at
        self._push(at, ("msg", src, dst, frame))

    def call_later(self, delay_ms: float, callback: Callable[[], None]) -> None:
        self._push(self.clock.now_ms() + delay_ms, ("timer", callback))

    def idle(self) -> bool:
        return not self._queue

    def step(self) -> None:
        at, _, item = heapq.heappop(self._queue)
        self.clock.advance_to(at)
        if item[0] == "timer":
            item[1]()
            return
        _, src, dst, frame = item
        tag = frame[0] if frame else -1
        self.deliveries[(dst, tag)] += 1
        self.trace.append((at, src, dst, tag))
        self.nodes[dst].handle(src, frame)

    def run(self, until: Optional[Callable[[], bool]] = None, max_steps: int = 1_000_000) -> None:
        """Deliver events in time order until idle or ``until()`` holds."""
        for _ in range(max_steps):
            if until is not None and until():
                return
            if not self._queue:
                return
            self.step()
        raise NetworkError("bus did not quiesce")


# nodes -----------------------------------------------------------------------


class Node:
    bus: Bus

    def __init__(self, node_id: str) -> None:
        self.node_id = node_id

    def send(self, dst: str, tag: int, payload: bytes) -> None:
        self.bus.send(self.node_id, dst, encode_frame(tag, payload))

    def handle(self, src: str, frame: bytes) -> None:
        raise NotImplementedError


@dataclass(frozen=True)
class CommitEvent:
    peer_id: str
    height: int
    valid: int
    invalid: int


@dataclass(frozen=True)
class Rejection:
    peer_id: str
    reason: int
    detail: str
    violations: tuple[str, ...] = ()


def _ack(kind: str, ref: str) -> bytes:
    return Writer().string(kind).string(ref).getvalue()


def _read_ack(payload: bytes) -> tuple[str, str]:
    return decode_all(payload, lambda r: (r.string(), r.string()))


class PeerNode(Node):
    """Committing peer; endorses too when ``spec.endorsing`` is set."""

    def __init__(self, spec: PeerSpec, cert: Certificate, key: SigningKey,
                 membership: Membership, clock: Clock, costs: SimCosts) -> None:
        super().__init__(spec.peer_id)
        self.spec = spec
        self.cert = cert
        self._key = key
        self.membership = membership
        self.clock = clock
        self.costs = costs
        self.channels: set[str] = set()
        self.chaincodes = ChaincodeRegistry()
        self.instantiated: dict[str, InstantiationRecord] = {}
        self.config: Optional[NetworkConfig] = None
        self.ledger = Ledger(validator=self.validate_transaction)
        self._pending_blocks: dict[int, Block] = {}
        self.commit_events: list[CommitEvent] = []

    @property
    def peer_id(self) -> str:
        return self.spec.peer_id

    @property
    def org_id(self) -> str:
        return self.spec.org_id

    @property
    def endorsing(self) -> bool:
        return self.spec.endorsing

    @property
    def policy(self) -> EndorsementPolicy:
        for record in self.instantiated.values():
            return record.policy
        return self.config.default_policy() if self.config else EndorsementPolicy(())

    # joining ------------------------------------------------------------
    def join(self, channel: str, genesis: Block) -> None:
        if len(self.ledger) == 0:
            self.ledger.append(genesis)
        elif compute_header_hash(self.ledger.block(0).header) != compute_header_hash(genesis.header):
            raise NetworkError(f"{self.peer_id} already holds a different genesis")
        self.config = NetworkConfig.from_bytes(genesis.transactions[0].payload)
        self.channels.add(channel)

    # endorsement --------------------------------------------------------
    def authenticate(self, proposal: Proposal) -> None:
        cert = proposal.creator
        if cert.subject != proposal.actor_id or not self.membership.validate(cert):
            raise EndorsementRejected(EndorsementRejected.AUTHENTICATION,
                                      f"certificate of {proposal.actor_id!r} does not verify")
        if not verify(cert, proposal.body_bytes(), proposal.actor_signature):
            raise EndorsementRejected(EndorsementRejected.AUTHENTICATION,
                                      f"bad signature from {proposal.actor_id!r}")

    def endorse(self, proposal: Proposal) -> tuple[Endorsement, chaincode.WriteSet]:
        """Check the client, simulate the contract, sign the result digest."""
        if not self.endorsing:
            raise NetworkError(f"{self.peer_id} is not an endorsing peer")
        self.authenticate(proposal)
        if proposal.channel not in self.channels:
            raise EndorsementRejected(EndorsementRejected.WRONG_CHANNEL,
                                      f"{self.peer_id} is not on channel {proposal.channel!r}")
        record = self.instantiated.get(proposal.channel)
        package = self.chaincodes.latest(proposal.chaincode)
        if record is None or record.chaincode != proposal.chaincode or package is None:
            raise EndorsementRejected(EndorsementRejected.NOT_INSTANTIATED,
                                      f"{proposal.chaincode!r} not instantiated on {proposal.channel!r}")
        self.clock.charge(self.costs.endorse_ms)
        ctx = ExecutionContext(self.ledger.state, proposal.channel, proposal.tx_id)
        try:
            write_set = package.contract.invoke(ctx, proposal.record)
        except ValidationError as exc:
            raise EndorsementRejected(EndorsementRejected.VALIDATION, str(exc), exc.violations) from None
        result = write_set.digest()
        signature = sign(self._key, endorsement_message(proposal.digest, result, self.peer_id, self.org_id))
        return Endorsement(self.peer_id, self.org_id, result, signature), write_set

    # commit -------------------------------------------------------------
    def validate_transaction(self, tx: Transaction) -> TxStatus:
        proposal = tx.proposal
        cert = proposal.creator
        if (cert.subject != proposal.actor_id or not self.membership.validate(cert)
                or not verify(cert, proposal.body_bytes(), proposal.actor_signature)):
            return TxStatus.BAD_CREATOR_SIGNATURE
        if chaincode.validate_record(proposal.record):
            return TxStatus.BAD_PAYLOAD
        result = tx.write_set.digest()
        good = []
        for e in tx.endorsements:
            endorser = self.membership.certificate(e.peer_id)
            if endorser is None or endorser.org_id != e.org_id:
                continue
            if not verify(endorser, endorsement_message(proposal.digest, e.result_digest,
                                                        e.peer_id, e.org_id), e.signature):
                continue
            if e.result_digest != result:
                return TxStatus.DIGEST_MISMATCH
            good.append(e)
        if not self.policy.satisfied_by(good):
            return TxStatus.ENDORSEMENT_POLICY_FAILURE
        return TxStatus.VALID

    def commit(self, block: Block) -> list[CommitEvent]:
        """Append ``block`` (and any buffered successors); early blocks are buffered."""
        height = block.header.height
        if height < len(self.ledger):
            return []
        if height > len(self.ledger):
            self._pending_blocks[height] = block
            return []
        events = []
        while block is not None:
            self.clock.charge(self.costs.commit_ms)
            committed = self.ledger.append(block)
            statuses = committed.statuses()
            valid = sum(s is TxStatus.VALID for s in statuses)
            event = CommitEvent(self.peer_id, committed.height, valid, len(statuses) - valid)
            self.commit_events.append(event)
            events.append(event)
            block = self._pending_blocks.pop(len(self.ledger), None)
        return events

    # messages -----------------------------------------------------------
    def handle(self, src: str, frame: bytes) -> None:
        tag, payload = decode_frame(frame)
        if tag == MSG_PROPOSAL:
            self._on_proposal(src, payload)
        elif tag == MSG_BLOCK:
            try:
                self.commit(Block.from_bytes(payload))
            except (DecodeError, LinkageError) as exc:
                log.error("%s dropped block from %s: %s", self.peer_id, src, exc)
        elif tag == MSG_JOIN:
            channel, genesis = decode_all(payload, lambda r: (r.string(), Block.from_bytes(r.blob())))
            self.join(channel, genesis)
            self.send(src, MSG_ACK, _ack("join", self.peer_id))
        elif tag == MSG_INSTANTIATE:
            record = decode_instantiation(payload)
            self.instantiated[record.channel] = record
            self.send(src, MSG_ACK, _ack("instantiate", self.peer_id))

    def _on_proposal(self, src: str, payload: bytes) -> None:
        try:
            proposal = Proposal.from_bytes(payload)
        except (DecodeError, ValueError) as exc:
            rejection = Rejection(self.peer_id, EndorsementRejected.MALFORMED, f"malformed proposal: {exc}")
            self.send(src, MSG_REJECTION, encode_rejection(bytes(DIGEST_SIZE), rejection))
            return
        try:
            endorsement, write_set = self.endorse(proposal)
        except EndorsementRejected as exc:
            rejection = Rejection(self.peer_id, exc.reason, exc.detail, tuple(exc.violations))
            self.send(src, MSG_REJECTION, encode_rejection(proposal.digest, rejection))
            return
        w = Writer().fixed(proposal.digest, DIGEST_SIZE)
        endorsement.write(w)
        write_set.write(w)
        self.send(src, MSG_ENDORSEMENT, w.getvalue())


def encode_rejection(proposal_digest: bytes, rejection: Rejection) -> bytes:
    w = Writer().fixed(proposal_digest, DIGEST_SIZE).string(rejection.peer_id)
    w.u8(rejection.reason).string(rejection.detail).seq(rejection.violations, Writer.string)
    return w.getvalue()


def decode_rejection(payload: bytes) -> tuple[bytes, Rejection]:
    def read(r: Reader):
        ref = r.fixed(DIGEST_SIZE)
        return ref, Rejection(r.string(), r.u8(), r.string(), tuple(r.seq(Reader.string)))
    return decode_all(payload, read)


def encode_instantiation(record: InstantiationRecord) -> bytes:
    w = Writer().string(record.channel).string(record.chaincode)
    record.policy.write(w)
    return w.getvalue()


def decode_instantiation(payload: bytes) -> InstantiationRecord:
    return decode_all(payload, lambda r: InstantiationRecord(r.string(), r.string(), EndorsementPolicy.read(r)))


class AdminNode(Node):
    """Channel administrator: distributes genesis/instantiation and counts acks."""

    def __init__(self, node_id: str = "admin") -> None:
        super().__init__(node_id)
        self.acks: dict[str, set[str]] = {}

    def handle(self, src: str, frame: bytes) -> None:
        tag, payload = decode_frame(frame)
        if tag == MSG_ACK:
            kind, ref = _read_ack(payload)
            self.acks.setdefault(kind, set()).add(ref)


class OrdererNode(Node):
    """Single orderer: batches transactions into blocks by size or timeout."""

    def __init__(self, spec: OrdererSpec, cut: BlockCut, clock: Clock) -> None:
        super().__init__(spec.orderer_id)
        self.spec = spec
        self.cut_rule = cut
        self.clock = clock
        self.peers: list[str] = []
        self.pending: list[Transaction] = []
        self.blocks: list[Block] = []
        self._batch = 0
        self._height = 0
        self._prev_hash = bytes(DIGEST_SIZE)

    def start(self, genesis: Block, peers: Iterable[str]) -> None:
        self.blocks = [genesis]
        self._height = 1
        self._prev_hash = compute_header_hash(genesis.header)
        self.peers = list(peers)

    def handle(self, src: str, frame: bytes) -> None:
        tag, payload = decode_frame(frame)
        if tag != MSG_TRANSACTION:
            return
        try:
            tx = decode_all(payload, read_transaction)
        except DecodeError as exc:
            log.error("orderer dropped malformed transaction from %s: %s", src, exc)
            return
        self.enqueue(tx)

    def enqueue(self, tx: Transaction) -> None:
        self.pending.append(tx)
        if len(self.pending) == 1:
            batch = self._batch
            self.bus.call_later(self.cut_rule.max_wait_ms, lambda: self._on_timeout(batch))
        if len(self.pending) >= self.cut_rule.max_tx:
            self.cut()

    def _on_timeout(self, batch: int) -> None:
        if batch == self._batch and self.pending:
            self.cut()

    def cut(self) -> Block:
        batch, self.pending = self.pending[:self.cut_rule.max_tx], self.pending[self.cut_rule.max_tx:]
        self._batch += 1
        block = build_block(self._height, self._prev_hash, batch, self.clock.epoch_ms())
        self._height += 1
        self._prev_hash = compute_header_hash(block.header)
        self.blocks.append(block)
        raw = block.to_bytes()
        for peer in self.peers:
            self.send(peer, MSG_BLOCK, raw)
        if self.pending:
            batch_id = self._batch
            self.bus.call_later(self.cut_rule.max_wait_ms, lambda: self._on_timeout(batch_id))
        return block


@dataclass
class _InFlight:
    proposal: Proposal
    endorsers: tuple[str, ...]
    endorsements: dict[str, Endorsement] = field(default_factory=dict)
    write_sets: dict[str, chaincode.WriteSet] = field(default_factory=dict)
    rejections: dict[str, Rejection] = field(default_factory=dict)

    def complete(self) -> bool:
        return len(self.endorsements) + len(self.rejections) >= len(self.endorsers)


class ActorNode(Node):
    """Sensor gateway client: signs proposals and forwards endorsed transactions.

    Transactions leave in proposal order, so one actor's records are ordered
    (and committed) in the order they were submitted.
    """

    def __init__(self, actor_id: str, cert: Certificate, key: SigningKey, channel: str,
                 chaincode_name: str, endorsers: Iterable[str], orderer: str,
                 policy: EndorsementPolicy, rng: random.Random) -> None:
        super().__init__(actor_id)
        self.actor_id = actor_id
        self.cert = cert
        self._key = key
        self.channel = channel
        self.chaincode_name = chaincode_name
        self.endorsers = tuple(endorsers)
        self.orderer = orderer
        self.policy = policy
        self.rng = rng
        self.revoked = False
        self._inflight: "OrderedDict[bytes, _InFlight]" = OrderedDict()
        self.submitted: list[Proposal] = []
        self.forwarded: list[Transaction] = []
        self.rejected: dict[str, list[Rejection] | str] = {}

    def revoke(self) -> None:
        self.revoked = True

    def propose(self, record: chaincode.EmissionRecord) -> Proposal:
        if self.revoked:
            raise SigningError(f"signing key of {self.actor_id} is revoked")
        nonce = self.rng.getrandbits(8 * NONCE_SIZE).to_bytes(NONCE_SIZE, "big")
        return make_proposal(self.actor_id, self._key, self.cert, self.channel,
                             self.chaincode_name, record, nonce)

    def submit(self, record: chaincode.EmissionRecord) -> Proposal:
        proposal = self.propose(record)
        self.submit_proposal(proposal)
        return proposal

    def submit_proposal(self, proposal: Proposal) -> None:
        self.submitted.append(proposal)
        self._inflight[proposal.digest] = _InFlight(proposal, self.endorsers)
        raw = proposal.to_bytes()
        for peer in self.endorsers:
            self.send(peer, MSG_PROPOSAL, raw)

    def send_transaction(self, tx: Transaction) -> None:
        """Hand a transaction straight to the orderer (no policy check here)."""
        self.forwarded.append(tx)
        self.send(self.orderer, MSG_TRANSACTION, encode_transaction(tx))

    def handle(self, src: str, frame: bytes) -> None:
        tag, payload = decode_frame(frame)
        if tag == MSG_ENDORSEMENT:
            def read(r: Reader):
                return r.fixed(DIGEST_SIZE), Endorsement.read(r), chaincode.WriteSet.read(r)
            ref, endorsement, write_set = decode_all(payload, read)
            entry = self._inflight.get(ref)
            if entry is not None:
                entry.endorsements[src] = endorsement
                entry.write_sets[src] = write_set
        elif tag == MSG_REJECTION:
            ref, rejection = decode_rejection(payload)
            entry = self._inflight.get(ref)
            if entry is not None:
                entry.rejections[src] = rejection
        self._drain()

    def _drain(self) -> None:
        while self._inflight:
            ref, entry = next(iter(self._inflight.items()))
            if not entry.complete():
                return
            del self._inflight[ref]
            tx_id = entry.proposal.tx_id
            if entry.rejections:
                self.rejected[tx_id] = list(entry.rejections.values())
                continue
            write_set = next(iter(entry.write_sets.values()))
            try:
                tx = assemble_transaction(entry.proposal, list(entry.endorsements.values()),
                                          write_set, self.policy)
            except (PolicyUnsatisfied, DigestMismatch) as exc:
                self.rejected[tx_id] = str(exc)
                continue
            self.send_transaction(tx)

    def pending(self) -> int:
        return len(self._inflight)


def assemble_transaction(proposal: Proposal, endorsements: list[Endorsement],
                         write_set: chaincode.WriteSet, policy: EndorsementPolicy) -> Transaction:
    missing = policy.missing(endorsements)
    if missing:
        raise PolicyUnsatisfied(missing)
    expected = write_set.digest()
    if any(e.result_digest != expected for e in endorsements):
        raise DigestMismatch(f"endorsers disagree on the result of {proposal.tx_id[:16]}")
    return Transaction(proposal, write_set, tuple(endorsements))


def check_policy(policy: EndorsementPolicy, endorsements: Iterable[Endorsement]) -> list[tuple[str, str]]:
    return policy.missing(endorsements)


def structural_validator(policy: EndorsementPolicy) -> Callable[[Transaction], TxStatus]:
    """Validator for replicas re-read from disk, where node keys are unavailable.

    Checks the creator signature (the certificate travels with the proposal),
    payload validity, result digests and policy membership; endorsement
    signatures are not re-verified.
    """
    def validate(tx: Transaction) -> TxStatus:
        proposal = tx.proposal
        if (proposal.creator.subject != proposal.actor_id
                or not verify(proposal.creator, proposal.body_bytes(), proposal.actor_signature)):
            return TxStatus.BAD_CREATOR_SIGNATURE
        if chaincode.validate_record(proposal.record):
            return TxStatus.BAD_PAYLOAD
        result = tx.write_set.digest()
        if any(e.result_digest != result for e in tx.endorsements):
            return TxStatus.DIGEST_MISMATCH
        if not policy.satisfied_by(tx.endorsements):
            return TxStatus.ENDORSEMENT_POLICY_FAILURE
        return TxStatus.VALID
    return validate


def genesis_config(ledger: Ledger) -> NetworkConfig:
    return NetworkConfig.from_bytes(ledger.block(0).transactions[0].payload)


# network ---------------------------------------------------------------------


@dataclass
class ByteEdit:
    """Overwrite ``data`` at ``offset`` of one stored block; empty data is a no-op."""

    offset: int
    data: bytes = b""


class Network:
    """Handles to every node of one channel plus the bus that connects them."""

    def __init__(self, config: NetworkConfig, clock: Optional[Clock] = None,
                 seed: Optional[int] = None, costs: SimCosts = SimCosts()) -> None:
        config.validate()
        self.config = config
        self.clock = clock or RealClock()
        self.seed = seed
        self.costs = costs
        self.rng = random.Random(seed) if seed is not None else random.Random(os.urandom(16))
        self.bus = Bus(self.clock, config.latency_ms, config.jitter_ms, random.Random(self.rng.random()))
        self.cas: dict[str, CA] = {}
        self.certificates: dict[str, Certificate] = {}
        self._keys: dict[str, SigningKey] = {}
        self.membership = Membership()
        self.peers: dict[str, PeerNode] = {}
        self.orderer: Optional[OrdererNode] = None
        self.actors: dict[str, ActorNode] = {}
        self.genesis: Optional[Block] = None
        self.admin = AdminNode()
        self.bus.register(self.admin)
        self.instantiation: Optional[InstantiationRecord] = None

    # establishment sub-steps -------------------------------------------
    def _seed_bytes(self, label: str) -> Optional[bytes]:
        if self.seed is None:
            return None
        return f"{self.seed}|{label}".encode()

    def generate_certificates(self, cert_dir: Optional[Path] = None) -> None:
        org_ids = [org.org_id for org in self.config.orgs] + [self.config.orderer.org_id]
        for org_id in dict.fromkeys(org_ids):
            ca = create_ca(org_id, self._seed_bytes("ca"))
            self.cas[org_id] = ca
            self.membership.add_anchor(ca.anchor)
        nodes = [(p.peer_id, p.org_id) for p in self.config.peers]
        nodes.append((self.config.orderer.orderer_id, self.config.orderer.org_id))
        for node_id, org_id in nodes:
            self._issue(node_id, org_id)
        if cert_dir is not None:
            cert_dir.mkdir(parents=True, exist_ok=True)
            for node_id, cert in self.certificates.items():
                (cert_dir / f"{node_id}.cert").write_bytes(cert.to_bytes())

    def _issue(self, node_id: str, org_id: str) -> tuple[Certificate, SigningKey]:
        cert, key = issue_certificate(self.cas[org_id], node_id)
        self.clock.charge(self.costs.certificate_ms)
        self.certificates[node_id] = cert
        self._keys[node_id] = key
        self.membership.register(cert)
        return cert, key

    def establish_channel(self) -> Block:
        """Create the orderer and the channel's genesis block."""
        self.clock.charge(self.costs.channel_ms)
        spec = self.config.orderer
        self.orderer = OrdererNode(spec, self.config.block_cut, self.clock)
        self.bus.register(self.orderer)
        self.genesis = make_genesis(self.config, self.clock.epoch_ms())
        for p in self.config.peers:
            peer = PeerNode(p, self.certificates[p.peer_id], self._keys[p.peer_id],
                            self.membership.copy(), self.clock, self.costs)
            self.peers[p.peer_id] = peer
            self.bus.register(peer)
        self.orderer.start(self.genesis, self.peers)
        return self.genesis

    def join_peers(self) -> None:
        """Send the genesis block to every peer and wait for all join acks."""
        acks = self.admin.acks.setdefault("join", set())
        payload = Writer().string(self.config.channel).blob(self.genesis.to_bytes()).getvalue()
        for peer_id in self.peers:
            self.admin.send(peer_id, MSG_JOIN, payload)
        self.bus.run(until=lambda: acks >= set(self.peers))
        if not acks >= set(self.peers):
            raise NetworkError(f"peers failed to join: {sorted(set(self.peers) - acks)}")

    # lifecycle ----------------------------------------------------------
    def peer(self, peer_id: str) -> PeerNode:
        try:
            return self.peers[peer_id]
        except KeyError:
            raise NetworkError(f"unknown peer {peer_id!r}") from None

    @property
    def endorsing_peers(self) -> list[PeerNode]:
        return [p for p in self.peers.values() if p.endorsing]

    def install(self, package: ChaincodePackage, peer_ids: Optional[Iterable[str]] = None):
        receipts = []
        for peer_id in peer_ids if peer_ids is not None else list(self.peers):
            self.clock.charge(self.costs.install_ms)
            receipts.append(chaincode.install(self.peer(peer_id), package))
        return receipts

    def instantiate(self, name: str, policy: Optional[EndorsementPolicy] = None) -> InstantiateReceipt:
        return chaincode.instantiate(self, self.config.channel, name, policy or self.config.default_policy())

    def instantiate_on_channel(self, record: InstantiationRecord) -> InstantiateReceipt:
        """Announce the instantiation to every peer; block until all policy peers ack."""
        if record.channel != self.config.channel:
            raise NetworkError(f"unknown channel {record.channel!r}")
        acks = self.admin.acks.setdefault("instantiate", set())
        acks.clear()
        payload = encode_instantiation(record)
        for peer_id in self.peers:
            self.admin.send(peer_id, MSG_INSTANTIATE, payload)
        needed = {peer_id for _, peer_id in record.policy.required}
        self.bus.run(until=lambda: needed <= acks)
        if not needed <= acks:
            raise NetworkError(f"no instantiate ack from {sorted(needed - acks)}")
        self.instantiation = record
        for actor in self.actors.values():
            actor.policy = record.policy
            actor.endorsers = tuple(peer_id for _, peer_id in record.policy.required)
        return InstantiateReceipt(record, tuple(sorted(acks)))

    # actors -------------------------------------------------------------
    def add_actor(self, actor_id: str, org_id: Optional[str] = None,
                  chaincode_name: str = "aqms") -> ActorNode:
        org_id = org_id or self.config.orgs[0].org_id
        cert, key = self._issue(actor_id, org_id)
        for peer in self.peers.values():
            peer.membership.register(cert)
        policy = self.instantiation.policy if self.instantiation else self.config.default_policy()
        actor = ActorNode(actor_id, cert, key, self.config.channel, chaincode_name,
                          [peer_id for _, peer_id in policy.required], self.orderer.node_id,
                          policy, random.Random(self.rng.random()))
        self.actors[actor_id] = actor
        self.bus.register(actor)
        return actor

    def run_until_idle(self) -> None:
        self.bus.run()

    # observation --------------------------------------------------------
    def tip_digests(self) -> dict[str, bytes]:
        return {peer_id: p.ledger.tip_digest() for peer_id, p in self.peers.items()}

    def chain_lengths(self) -> dict[str, int]:
        return {peer_id: len(p.ledger) for peer_id, p in self.peers.items()}


def establish_network(config: NetworkConfig, clock: Optional[Clock] = None, seed: Optional[int] = None,
                      costs: SimCosts = SimCosts(), phase=None, cert_dir: Optional[Path] = None) -> Network:
    """Certificates, channel, genesis and peer joins, each wrapped in ``phase(name)`` if given."""
    from contextlib import nullcontext

    phase = phase or (lambda name: nullcontext())
    network = Network(config, clock, seed, costs)
    with phase("generate_certificates"):
        network.generate_certificates(cert_dir)
    with phase("establish_channel"):
        network.establish_channel()
    with phase("peer_join"):
        network.join_peers()
    return network


def submit_sensor_data(actor: ActorNode, record: chaincode.EmissionRecord) -> Proposal:
    return actor.submit(record)


def endorse(peer: PeerNode, proposal: Proposal):
    return peer.endorse(proposal)


def commit(peer: PeerNode, block: Block) -> list[CommitEvent]:
    return peer.commit(block)


def order(orderer: OrdererNode, incoming: Iterable[Transaction]) -> list[Block]:
    """Feed transactions to ``orderer`` and drain its timers; return the new blocks."""
    start = len(orderer.blocks)
    for tx in incoming:
        orderer.enqueue(tx)
    orderer.bus.run()
    return orderer.blocks[start:]


def tamper(peer: PeerNode, height: int, mutation: ByteEdit) -> None:
    """Test-only backdoor: edit one peer's stored block bytes in place."""
    if not 0 <= height < len(peer.ledger):
        raise IndexError(f"height {height} out of range for chain of length {len(peer.ledger)}")
    peer.ledger.tamper_raw(height, mutation.offset, mutation.data)
