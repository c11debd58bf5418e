"""Toy certificate authority and Ed25519 signatures for node identities."""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field, replace

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .encoding import Reader, Writer, decode_all

SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32


class MalformedSignature(ValueError):
    pass


@dataclass(frozen=True)
class Signature:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != SIGNATURE_SIZE:
            raise MalformedSignature(
                f"signature must be {SIGNATURE_SIZE} bytes, got {len(self.value)}"
            )


class SigningKey:
    """Private half of a node keypair. Never serialized."""

    def __init__(self, private_key: Ed25519PrivateKey) -> None:
        self._key = private_key

    @classmethod
    def from_seed(cls, seed: bytes) -> "SigningKey":
        return cls(Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest()))

    @classmethod
    def generate(cls) -> "SigningKey":
        return cls(Ed25519PrivateKey.generate())

    def public_bytes(self) -> bytes:
        return self._key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def _sign(self, message: bytes) -> bytes:
        return self._key.sign(message)


@dataclass(frozen=True)
class Certificate:
    subject: str
    org_id: str
    public_key: bytes
    issuer: str
    issuer_signature: bytes

    def tbs_bytes(self) -> bytes:
        """Bytes covered by the issuer signature: subject, org and key."""
        return Writer().string(self.subject).string(self.org_id).blob(self.public_key).getvalue()

    def write(self, w: Writer) -> None:
        w.string(self.subject).string(self.org_id).blob(self.public_key)
        w.string(self.issuer).blob(self.issuer_signature)

    @classmethod
    def read(cls, r: Reader) -> "Certificate":
        return cls(
            subject=r.string(),
            org_id=r.string(),
            public_key=r.blob(),
            issuer=r.string(),
            issuer_signature=r.blob(),
        )

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        return decode_all(data, cls.read)


@dataclass
class CA:
    """Certificate authority of one organization.

    A seeded CA derives its root key and every issued key from the seed, so a
    whole network can be rebuilt bit-for-bit.
    """

    ca_id: str
    org_id: str
    root_public_key: bytes
    _root_key: SigningKey = field(repr=False)
    _seed: bytes | None = field(default=None, repr=False)
    _issued: int = field(default=0, repr=False)

    @property
    def anchor(self) -> "TrustAnchor":
        return TrustAnchor(self.ca_id, self.org_id, self.root_public_key)

    def verify_certificate(self, cert: Certificate) -> bool:
        return self.anchor.verify_certificate(cert)


def create_ca(org_id: str, seed: bytes | None = None) -> CA:
    ca_id = f"ca.{org_id}"
    if seed is None:
        root = SigningKey.generate()
        material = None
    else:
        material = hashlib.sha256(b"ca|" + seed + b"|" + org_id.encode()).digest()
        root = SigningKey.from_seed(material + b"|root")
    return CA(ca_id=ca_id, org_id=org_id, root_public_key=root.public_bytes(),
              _root_key=root, _seed=material)


def issue_certificate(ca: CA, subject: str, org: str | None = None) -> tuple[Certificate, SigningKey]:
    if not subject:
        raise ValueError("certificate subject must be non-empty")
    org = ca.org_id if org is None else org
    ca._issued += 1
    if ca._seed is None:
        key = SigningKey.generate()
    else:
        key = SigningKey.from_seed(ca._seed + b"|" + subject.encode() + b"|%d" % ca._issued)
    unsigned = Certificate(subject, org, key.public_bytes(), ca.ca_id, b"")
    cert = replace(unsigned, issuer_signature=ca._root_key._sign(unsigned.tbs_bytes()))
    return cert, key


def sign(key: SigningKey, message: bytes) -> Signature:
    return Signature(key._sign(message))


def verify(cert: Certificate, message: bytes, signature: Signature | bytes) -> bool:
    raw = signature.value if isinstance(signature, Signature) else signature
    if len(raw) != SIGNATURE_SIZE:
        raise MalformedSignature(f"signature must be {SIGNATURE_SIZE} bytes, got {len(raw)}")
    return _verify_raw(cert.public_key, message, raw)


@functools.lru_cache(maxsize=1 << 16)
def _verify_raw(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != PUBLIC_KEY_SIZE or len(signature) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class TrustAnchor:
    """Public part of a CA: what a node needs to check certificates."""

    ca_id: str
    org_id: str
    root_public_key: bytes

    def verify_certificate(self, cert: Certificate) -> bool:
        if cert.issuer != self.ca_id or cert.org_id != self.org_id:
            return False
        return _verify_raw(self.root_public_key, cert.tbs_bytes(), cert.issuer_signature)


class Membership:
    """Trust anchors and known certificates held by one node."""

    def __init__(self, anchors: list[TrustAnchor] | None = None) -> None:
        self._anchors: dict[str, TrustAnchor] = {a.org_id: a for a in anchors or []}
        self._certs: dict[str, Certificate] = {}

    def add_anchor(self, anchor: TrustAnchor) -> None:
        self._anchors[anchor.org_id] = anchor

    def register(self, cert: Certificate) -> None:
        self._certs[cert.subject] = cert

    def certificate(self, subject: str) -> Certificate | None:
        return self._certs.get(subject)

    def validate(self, cert: Certificate) -> bool:
        anchor = self._anchors.get(cert.org_id)
        return anchor is not None and anchor.verify_certificate(cert)

    def copy(self) -> "Membership":
        m = Membership(list(self._anchors.values()))
        m._certs = dict(self._certs)
        return m
