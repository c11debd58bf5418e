"""Proposal, endorsement and transaction envelopes with their canonical bytes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Union

from .chaincode import EmissionRecord, WriteSet
from .encoding import DIGEST_SIZE, DecodeError, Reader, Writer, decode_all, digest
from .identity import SIGNATURE_SIZE, Certificate, Signature, SigningKey, sign

NONCE_SIZE = 16

TX_CONFIG = 0
TX_ENDORSED = 1


@dataclass(frozen=True)
class Proposal:
    actor_id: str
    channel: str
    chaincode: str
    record: EmissionRecord
    nonce: bytes
    creator: Certificate
    actor_signature: Signature

    def body_bytes(self) -> bytes:
        """The bytes the actor signs."""
        return self._body

    # frozen instance, so the encoding can be cached
    @cached_property
    def _body(self) -> bytes:
        w = Writer()
        self._write_body(w)
        return w.getvalue()

    def _write_body(self, w: Writer) -> None:
        w.string(self.actor_id).string(self.channel).string(self.chaincode)
        self.record.write(w)
        w.fixed(self.nonce, NONCE_SIZE)
        self.creator.write(w)

    def write(self, w: Writer) -> None:
        self._write_body(w)
        w.fixed(self.actor_signature.value, SIGNATURE_SIZE)

    @classmethod
    def read(cls, r: Reader) -> "Proposal":
        return cls(
            actor_id=r.string(),
            channel=r.string(),
            chaincode=r.string(),
            record=EmissionRecord.read(r),
            nonce=r.fixed(NONCE_SIZE),
            creator=Certificate.read(r),
            actor_signature=Signature(r.fixed(SIGNATURE_SIZE)),
        )

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Proposal":
        return decode_all(data, cls.read)

    @cached_property
    def digest(self) -> bytes:
        return digest(self.body_bytes())

    @property
    def tx_id(self) -> str:
        return self.digest.hex()


def make_proposal(actor_id: str, key: SigningKey, creator: Certificate, channel: str,
                  chaincode: str, record: EmissionRecord, nonce: bytes) -> Proposal:
    unsigned = Proposal(actor_id, channel, chaincode, record, nonce, creator,
                        Signature(bytes(SIGNATURE_SIZE)))
    return Proposal(actor_id, channel, chaincode, record, nonce, creator,
                    sign(key, unsigned.body_bytes()))


def endorsement_message(proposal_digest: bytes, result_digest: bytes, peer_id: str, org_id: str) -> bytes:
    return (Writer().fixed(proposal_digest, DIGEST_SIZE).fixed(result_digest, DIGEST_SIZE)
            .string(peer_id).string(org_id).getvalue())


@dataclass(frozen=True)
class Endorsement:
    peer_id: str
    org_id: str
    result_digest: bytes
    signature: Signature

    def write(self, w: Writer) -> None:
        w.string(self.peer_id).string(self.org_id)
        w.fixed(self.result_digest, DIGEST_SIZE).fixed(self.signature.value, SIGNATURE_SIZE)

    @classmethod
    def read(cls, r: Reader) -> "Endorsement":
        return cls(r.string(), r.string(), r.fixed(DIGEST_SIZE), Signature(r.fixed(SIGNATURE_SIZE)))


@dataclass(frozen=True)
class Transaction:
    proposal: Proposal
    write_set: WriteSet
    endorsements: tuple[Endorsement, ...]

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    def write(self, w: Writer) -> None:
        w.u8(TX_ENDORSED)
        self.proposal.write(w)
        self.write_set.write(w)
        w.seq(self.endorsements, lambda w, e: e.write(w))


@dataclass(frozen=True)
class ConfigTransaction:
    """Genesis payload: the canonical bytes of the network configuration."""

    payload: bytes

    tx_id = "config"

    def write(self, w: Writer) -> None:
        w.u8(TX_CONFIG)
        w.blob(self.payload)


AnyTransaction = Union[Transaction, ConfigTransaction]


def read_transaction(r: Reader) -> AnyTransaction:
    kind = r.u8()
    if kind == TX_CONFIG:
        return ConfigTransaction(r.blob())
    if kind == TX_ENDORSED:
        proposal = Proposal.read(r)
        write_set = WriteSet.read(r)
        endorsements = tuple(r.seq(Endorsement.read))
        return Transaction(proposal, write_set, endorsements)
    raise DecodeError(f"unknown transaction kind {kind}")


def encode_transaction(tx: AnyTransaction) -> bytes:
    w = Writer()
    tx.write(w)
    return w.getvalue()


def decode_transaction(data: bytes) -> AnyTransaction:
    return decode_all(data, read_transaction)
