"""GF(2^8) arithmetic backed by a full 256x256 multiplication table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_POLY = 0x11D


class ReduciblePolynomial(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Gf256Tables:
    poly: int
    mul: np.ndarray  # (256, 256) uint8, 64 KiB
    inv: np.ndarray  # (256,) uint8; inv[0] is meaningless, see has_inverse
    has_inverse: np.ndarray  # (256,) bool

    def inverse(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("0 has no multiplicative inverse in GF(2^8)")
        return int(self.inv[a])


def build_tables(poly: int = DEFAULT_POLY) -> Gf256Tables:
    if not 0x100 <= poly <= 0x1FF:
        raise ReduciblePolynomial(f"poly {poly:#x} is not of degree 8")
    a = np.arange(256, dtype=np.uint16)[:, None]
    b = np.arange(256, dtype=np.uint16)[None, :]
    acc = np.zeros((256, 256), dtype=np.uint16)
    aa = np.broadcast_to(a, (256, 256)).copy()
    for bit in range(8):
        acc ^= np.where((b >> bit) & 1, aa, 0).astype(np.uint16)
        aa <<= 1
        aa = np.where(aa & 0x100, aa ^ poly, aa).astype(np.uint16)
    mul = acc.astype(np.uint8)

    ones = mul == 1
    has_inv = ones.any(axis=1)
    if not has_inv[1:].all():
        raise ReduciblePolynomial(f"poly {poly:#x} has zero divisors")
    inv = np.argmax(ones, axis=1).astype(np.uint8)
    inv[0] = 0
    mul.setflags(write=False)
    inv.setflags(write=False)
    return Gf256Tables(poly, mul, inv, has_inv)


def gf_mul(t: Gf256Tables, a: int, b: int) -> int:
    return int(t.mul[a, b])


def gf_add(a: int, b: int) -> int:
    return a ^ b


def gf_div(t: Gf256Tables, a: int, b: int) -> int:
    return int(t.mul[a, t.inverse(b)])


_DEFAULT: Gf256Tables | None = None


def default_tables() -> Gf256Tables:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = build_tables(DEFAULT_POLY)
    return _DEFAULT
