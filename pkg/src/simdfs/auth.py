"""Capability tickets issued by the metadata service and checked on the NIC.

A capability grants ``rights`` on the byte extent ``[offset, offset+length)``
of one object until ``expiry`` (simulation ns).  It is signed with a key
shared by all DFS services; clients hold it but cannot forge it.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field, replace
from typing import Callable

MAC_BYTES = 16
_BODY = struct.Struct("<IQQQBQ")
CAPABILITY_BYTES = _BODY.size + MAC_BYTES  # 53

MacFunction = Callable[[bytes, bytes], bytes]


class Rights(enum.IntFlag):
    READ = 1
    WRITE = 2


class DenyReason(enum.Enum):
    BAD_MAC = "BadMac"
    RIGHTS_MISMATCH = "RightsMismatch"
    WRONG_OBJECT = "WrongObject"
    RANGE_EXCEEDED = "RangeExceeded"
    EXPIRED = "Expired"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: DenyReason | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def deny(reason: DenyReason) -> Verdict:
    return Verdict(False, reason)


def keyed_blake2b(key: bytes, message: bytes) -> bytes:
    """Default MAC: keyed BLAKE2b truncated to 16 bytes (deterministic)."""
    return hashlib.blake2b(message, key=key[:64], digest_size=MAC_BYTES).digest()


def hmac_sha256(key: bytes, message: bytes) -> bytes:
    return hmac.new(key, message, hashlib.sha256).digest()[:MAC_BYTES]


@dataclass(frozen=True)
class KeyStore:
    shared_key: bytes
    mac: MacFunction = field(default=keyed_blake2b, compare=False)

    def __post_init__(self):
        if len(self.shared_key) != 32:
            raise ValueError("shared_key must be 32 bytes")

    def sign(self, body: bytes) -> bytes:
        out = self.mac(self.shared_key, body)
        if len(out) != MAC_BYTES:
            raise ValueError(f"MAC primitive returned {len(out)} bytes, expected {MAC_BYTES}")
        return out


@dataclass(frozen=True)
class Capability:
    client_id: int
    object_id: int
    offset: int
    length: int
    rights: int
    expiry: int
    mac: bytes = b"\x00" * MAC_BYTES

    def body(self) -> bytes:
        return _BODY.pack(self.client_id, self.object_id, self.offset,
                          self.length, int(self.rights), self.expiry)

    def to_bytes(self) -> bytes:
        return self.body() + self.mac

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Capability":
        if len(raw) < CAPABILITY_BYTES:
            raise ValueError(f"capability needs {CAPABILITY_BYTES} bytes, got {len(raw)}")
        fields = _BODY.unpack_from(raw)
        mac = bytes(raw[_BODY.size:CAPABILITY_BYTES])
        return cls(*fields, mac=mac)


def issue(ks: KeyStore, client_id: int, object_id: int, offset: int, length: int,
          rights: int, expiry: int) -> Capability:
    if length <= 0:
        raise ValueError("capability length must be positive")
    unsigned = Capability(client_id, object_id, offset, length, int(rights), expiry)
    return replace(unsigned, mac=ks.sign(unsigned.body()))


def validate(ks: KeyStore, cap: Capability, requested_op: int, target_object: int,
             target_range: tuple[int, int], now: float) -> Verdict:
    """Check a capability against a concrete request.  Never raises."""
    if not hmac.compare_digest(ks.sign(cap.body()), cap.mac):
        return deny(DenyReason.BAD_MAC)
    if target_object != cap.object_id:
        return deny(DenyReason.WRONG_OBJECT)
    if int(requested_op) & ~int(cap.rights) or not int(requested_op):
        return deny(DenyReason.RIGHTS_MISMATCH)
    off, n = target_range
    if off < cap.offset or off + n > cap.offset + cap.length:
        return deny(DenyReason.RANGE_EXCEEDED)
    if now >= cap.expiry:
        return deny(DenyReason.EXPIRED)
    return ACCEPT
