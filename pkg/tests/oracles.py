"""Reference implementations used only by the tests.

Deliberately slow and written without touching the package internals, so a
bug in the table builder or the vectorized codec cannot hide in both places.
"""

from __future__ import annotations

from itertools import combinations


def gf_mul_slow(a: int, b: int, poly: int = 0x11D) -> int:
    """Russian-peasant multiply with reduction after each shift."""
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= poly
    return out


def gf_inv_slow(a: int) -> int:
    for x in range(1, 256):
        if gf_mul_slow(a, x) == 1:
            return x
    raise ZeroDivisionError(a)


def naive_parity(coeffs: list[list[int]], chunks: list[bytes]) -> list[bytes]:
    """parity[p][i] = XOR_j coeffs[p][j] * chunks[j][i], one byte at a time."""
    n = len(chunks[0])
    out = []
    for row in coeffs:
        buf = bytearray(n)
        for j, chunk in enumerate(chunks):
            c = row[j]
            for i in range(n):
                buf[i] ^= gf_mul_slow(c, chunk[i])
        out.append(bytes(buf))
    return out


def gf_det(rows: list[list[int]]) -> int:
    """Determinant over GF(2^8) by Gaussian elimination (no tables)."""
    a = [list(r) for r in rows]
    n = len(a)
    det = 1
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col]), None)
        if piv is None:
            return 0
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        det = gf_mul_slow(det, p)
        inv = gf_inv_slow(p)
        for r in range(col + 1, n):
            f = gf_mul_slow(a[r][col], inv)
            if f:
                a[r] = [x ^ gf_mul_slow(f, y) for x, y in zip(a[r], a[col])]
    return det


def erasure_patterns(n: int, lost: int):
    return list(combinations(range(n), lost))


def packet_payload_sizes(data_len: int, first_cap: int, rest_cap: int) -> list[int]:
    """Brute-force packetization: fill byte by byte."""
    sizes = [0]
    cap = first_cap
    for _ in range(data_len):
        if sizes[-1] == cap:
            sizes.append(0)
            cap = rest_cap
        sizes[-1] += 1
    return sizes
