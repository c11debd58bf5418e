"""Hash-chained block store with a versioned key-value world state.

Blocks are kept as their canonical bytes; the decoded view is derived. That
keeps the stored bytes the single source of truth, so a byte-level edit of a
replica is visible to :func:`verify_chain` exactly as it would be on disk.

Header bytes: ``height(u64) || prev_hash(32) || tx_root(32) || timestamp(u64)``.
``tx_root`` is the SHA-256 of the concatenated per-transaction digests (a flat
hash list). Block bytes append the transaction list and the commit-time
validation codes; the codes are not hashed but are re-derived on verification.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Iterator, Optional, Sequence

from .chaincode import Version
from .encoding import DIGEST_SIZE, ZERO_DIGEST, DecodeError, Reader, Writer, decode_all, digest
from .transaction import (
    AnyTransaction,
    ConfigTransaction,
    Transaction,
    encode_transaction,
    read_transaction,
)

DUMP_MAGIC = b"IBAQLDG1"


class LedgerError(Exception):
    pass


class LinkageError(LedgerError):
    """Height or prev_hash does not extend the current tip."""


class DumpError(LedgerError):
    pass


class TxStatus(IntEnum):
    VALID = 0
    ENDORSEMENT_POLICY_FAILURE = 1
    MVCC_READ_CONFLICT = 2
    BAD_CREATOR_SIGNATURE = 3
    DIGEST_MISMATCH = 4
    BAD_PAYLOAD = 5
    NOT_VALIDATED = 255


TxValidator = Callable[[Transaction], TxStatus]


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    tx_root: bytes
    timestamp: int

    def write(self, w: Writer) -> None:
        w.u64(self.height).fixed(self.prev_hash, DIGEST_SIZE)
        w.fixed(self.tx_root, DIGEST_SIZE).u64(self.timestamp)

    @classmethod
    def read(cls, r: Reader) -> "BlockHeader":
        return cls(r.u64(), r.fixed(DIGEST_SIZE), r.fixed(DIGEST_SIZE), r.u64())

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()


def compute_header_hash(header: BlockHeader) -> bytes:
    return digest(header.to_bytes())


def compute_tx_root(transactions: Sequence[AnyTransaction]) -> bytes:
    return digest(b"".join(digest(encode_transaction(tx)) for tx in transactions))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[AnyTransaction, ...]
    # one TxStatus per transaction, filled in by the committing peer
    metadata: tuple[int, ...] = ()

    @property
    def height(self) -> int:
        return self.header.height

    def write(self, w: Writer) -> None:
        self.header.write(w)
        w.seq(self.transactions, lambda w, tx: tx.write(w))
        w.seq(self.metadata, Writer.u8)

    @classmethod
    def read(cls, r: Reader) -> "Block":
        header = BlockHeader.read(r)
        txs = tuple(r.seq(read_transaction))
        metadata = tuple(r.seq(Reader.u8))
        return cls(header, txs, metadata)

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        return decode_all(data, cls.read)

    def statuses(self) -> list[TxStatus]:
        return [TxStatus(code) for code in self.metadata]


def build_block(height: int, prev_hash: bytes, transactions: Sequence[AnyTransaction],
                timestamp: int) -> Block:
    txs = tuple(transactions)
    return Block(BlockHeader(height, prev_hash, compute_tx_root(txs), timestamp), txs)


def make_genesis(config, timestamp: int = 0) -> Block:
    """Height-0 block carrying the canonical bytes of ``config``.

    ``config`` must provide ``validate()`` (raising on an invalid topology)
    and ``to_bytes()``.
    """
    config.validate()
    return build_block(0, ZERO_DIGEST, [ConfigTransaction(config.to_bytes())], timestamp)


class WorldState:
    def __init__(self) -> None:
        self.entries: dict[str, tuple[bytes, Version]] = {}

    def get(self, key: str) -> Optional[bytes]:
        entry = self.entries.get(key)
        return entry[0] if entry else None

    def get_versioned(self, key: str) -> Optional[tuple[bytes, Version]]:
        return self.entries.get(key)

    def version(self, key: str) -> Optional[Version]:
        entry = self.entries.get(key)
        return entry[1] if entry else None

    def put(self, key: str, value: bytes, version: Version) -> None:
        current = self.version(key)
        if current is not None and version < current:
            raise LedgerError(f"version of {key} would move backwards: {current} -> {version}")
        self.entries[key] = (value, version)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorldState) and self.entries == other.entries

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self):
        return self.entries.keys()


def _tx_status(tx: AnyTransaction, state: WorldState, validator: Optional[TxValidator]) -> TxStatus:
    if isinstance(tx, ConfigTransaction):
        return TxStatus.VALID
    if validator is not None:
        status = validator(tx)
        if status is not TxStatus.VALID:
            return status
    for key, version in tx.write_set.reads:
        if state.version(key) != version:
            return TxStatus.MVCC_READ_CONFLICT
    return TxStatus.VALID


def apply_block(state: WorldState, block: Block, validator: Optional[TxValidator]) -> list[TxStatus]:
    """Validate and apply ``block`` to ``state`` in place; return per-tx status."""
    statuses = []
    for index, tx in enumerate(block.transactions):
        status = _tx_status(tx, state, validator)
        statuses.append(status)
        if status is TxStatus.VALID and isinstance(tx, Transaction):
            for key, value in tx.write_set.writes:
                state.put(key, value, (block.height, index))
    return statuses


@dataclass
class Mismatch:
    index: int
    reason: str


@dataclass
class VerificationReport:
    mismatches: list[Mismatch] = field(default_factory=list)
    state_consistent: bool = True
    length: int = 0

    @property
    def valid(self) -> bool:
        return not self.mismatches and self.state_consistent

    @property
    def bad_indices(self) -> list[int]:
        return sorted({m.index for m in self.mismatches})


class Ledger:
    """One replica: the chain (as bytes), its world state and the tip digest.

    Single writer: only the owning committing peer calls :meth:`append`.
    """

    def __init__(self, validator: Optional[TxValidator] = None) -> None:
        self.validator = validator
        self.state = WorldState()
        self._raw: list[bytes] = []
        self._decoded: dict[int, Block] = {}
        self._tip_hash: bytes = ZERO_DIGEST

    def __len__(self) -> int:
        return len(self._raw)

    @property
    def tip_hash(self) -> bytes:
        return self._tip_hash

    def tip_digest(self) -> bytes:
        """Rolling digest over every stored block, used to compare replicas.

        Unlike :attr:`tip_hash` (the committed header hash of the last block),
        this is recomputed from the stored bytes, so an edit to any block of
        this replica changes it.
        """
        acc = ZERO_DIGEST
        for raw in self._raw:
            acc = digest(acc + digest(raw))
        return acc

    def raw_block(self, height: int) -> bytes:
        return self._raw[height]

    def block(self, height: int) -> Block:
        if height not in self._decoded:
            self._decoded[height] = Block.from_bytes(self._raw[height])
        return self._decoded[height]

    def blocks(self) -> Iterator[Block]:
        for height in range(len(self._raw)):
            yield self.block(height)

    @property
    def chain(self) -> list[Block]:
        return list(self.blocks())

    def append(self, block: Block) -> Block:
        expected_prev = self._tip_hash if self._raw else ZERO_DIGEST
        if block.header.height != len(self._raw):
            raise LinkageError(
                f"block height {block.header.height} does not follow chain length {len(self._raw)}"
            )
        if block.header.prev_hash != expected_prev:
            raise LinkageError(f"prev_hash mismatch at height {block.header.height}")
        if compute_tx_root(block.transactions) != block.header.tx_root:
            raise LedgerError(f"tx_root mismatch in block {block.header.height}")
        state = copy.deepcopy(self.state)
        statuses = apply_block(state, block, self.validator)
        committed = replace(block, metadata=tuple(int(s) for s in statuses))
        self._raw.append(committed.to_bytes())
        self._decoded[committed.height] = committed
        self.state = state
        self._tip_hash = compute_header_hash(committed.header)
        return committed

    def tamper_raw(self, height: int, offset: int, data: bytes) -> None:
        """Overwrite stored bytes of one block in place (test backdoor)."""
        if not 0 <= height < len(self._raw):
            raise IndexError(f"height {height} out of range for chain of length {len(self._raw)}")
        raw = bytearray(self._raw[height])
        if offset < 0 or offset + len(data) > len(raw):
            raise IndexError(f"edit [{offset}, {offset + len(data)}) outside block of {len(raw)} bytes")
        raw[offset:offset + len(data)] = data
        self._raw[height] = bytes(raw)
        self._decoded.pop(height, None)

    def overwrite_block(self, height: int, raw: bytes) -> None:
        """Replace the stored bytes of one block wholesale (tamper tooling only)."""
        if not 0 <= height < len(self._raw):
            raise IndexError(f"height {height} out of range for chain of length {len(self._raw)}")
        self._raw[height] = bytes(raw)
        self._decoded.pop(height, None)

    def dump_bytes(self) -> bytes:
        w = Writer().raw(DUMP_MAGIC)
        w.seq(self._raw, Writer.blob)
        w.fixed(self._tip_hash, DIGEST_SIZE)
        return w.getvalue()

    @classmethod
    def load_bytes(cls, data: bytes, validator: Optional[TxValidator] = None) -> "Ledger":
        """Rebuild a replica from a dump; content is not trusted, only framing."""
        if not data.startswith(DUMP_MAGIC):
            raise DumpError("not a ledger dump (bad magic)")
        try:
            def read(r: Reader):
                r.fixed(len(DUMP_MAGIC))
                return r.seq(Reader.blob), r.fixed(DIGEST_SIZE)
            raw_blocks, tip = decode_all(data, read)
        except DecodeError as exc:
            raise DumpError(f"corrupt dump framing: {exc}") from None
        ledger = cls(validator)
        ledger._raw = list(raw_blocks)
        ledger._tip_hash = tip
        ledger.rebuild_state()
        return ledger

    def rebuild_state(self) -> None:
        """Recompute the world state by replaying the stored chain."""
        self.state = _replay(self)[0]


def _replay(ledger: Ledger) -> tuple[WorldState, dict[int, list[TxStatus]]]:
    state = WorldState()
    derived: dict[int, list[TxStatus]] = {}
    for height in range(len(ledger)):
        try:
            block = ledger.block(height)
            derived[height] = apply_block(state, block, ledger.validator)
        except (DecodeError, LedgerError):
            continue
    return state, derived


def append_block(ledger: Ledger, block: Block) -> Ledger:
    ledger.append(block)
    return ledger


def query_state(ledger: Ledger, key: str) -> Optional[bytes]:
    return ledger.state.get(key)


def verify_chain(ledger: Ledger) -> VerificationReport:
    """Recompute every hash, link and validation code; never raises on corruption."""
    report = VerificationReport(length=len(ledger))
    replay_state = WorldState()
    prev_header: Optional[BlockHeader] = None
    for i in range(len(ledger)):
        raw = ledger.raw_block(i)
        try:
            block = ledger.block(i)
        except DecodeError as exc:
            report.mismatches.append(Mismatch(i, f"undecodable block: {exc}"))
            prev_header = None
            continue
        bad = report.mismatches
        if block.to_bytes() != raw:
            bad.append(Mismatch(i, "non-canonical block bytes"))
        header = block.header
        if header.height != i:
            bad.append(Mismatch(i, f"height {header.height} != index {i}"))
        if i == 0:
            if header.prev_hash != ZERO_DIGEST:
                bad.append(Mismatch(i, "genesis prev_hash is not zero"))
            if len(block.transactions) != 1 or not isinstance(block.transactions[0], ConfigTransaction):
                bad.append(Mismatch(i, "genesis must carry exactly one configuration transaction"))
        else:
            if prev_header is not None and header.prev_hash != compute_header_hash(prev_header):
                bad.append(Mismatch(i, "prev_hash does not match parent header"))
            if not block.transactions or any(isinstance(t, ConfigTransaction) for t in block.transactions):
                bad.append(Mismatch(i, "block must carry one or more endorsed transactions"))
        if compute_tx_root(block.transactions) != header.tx_root:
            bad.append(Mismatch(i, "tx_root does not match transactions"))
        try:
            statuses = apply_block(replay_state, block, ledger.validator)
        except LedgerError as exc:
            bad.append(Mismatch(i, f"replay failed: {exc}"))
        else:
            if tuple(int(s) for s in statuses) != block.metadata:
                bad.append(Mismatch(i, "stored validation codes differ from re-validation"))
        prev_header = header
    if len(ledger):
        if prev_header is None or compute_header_hash(prev_header) != ledger.tip_hash:
            report.mismatches.append(Mismatch(len(ledger) - 1, "tip hash does not match last header"))
    report.state_consistent = replay_state == ledger.state
    return report
