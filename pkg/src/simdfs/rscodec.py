"""Systematic Reed-Solomon RS(k, m) over GF(2^8).

Whole-block encoding, the per-packet streaming form used by storage-node
handlers (intermediate parity + XOR aggregation), and a decoder used only
to check stored data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .gf256 import Gf256Tables, default_tables

BytesLike = bytes | bytearray | memoryview | np.ndarray


class InvalidDims(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class SingularSelection(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class EncodingMatrix:
    k: int
    m: int
    rows: np.ndarray  # (k+m, k) uint8
    tables: Gf256Tables

    def coefficient(self, parity_index: int, data_index: int) -> int:
        return int(self.rows[self.k + parity_index, data_index])


def _as_u8(buf: BytesLike) -> np.ndarray:
    if isinstance(buf, np.ndarray):
        return buf.astype(np.uint8, copy=False)
    return np.frombuffer(bytes(buf), dtype=np.uint8)


def mat_mul(t: Gf256Tables, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    prods = t.mul[a[:, :, None], b[None, :, :]]
    return np.bitwise_xor.reduce(prods, axis=1).astype(np.uint8)


def mat_inv(t: Gf256Tables, a: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inversion; raises SingularSelection."""
    n = a.shape[0]
    aug = np.concatenate([a.astype(np.uint8), np.eye(n, dtype=np.uint8)], axis=1)
    for col in range(n):
        nz = np.nonzero(aug[col:, col])[0]
        if nz.size == 0:
            raise SingularSelection("matrix is singular over GF(2^8)")
        piv = col + int(nz[0])
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] = t.mul[t.inverse(int(aug[col, col]))][aug[col]]
        for r in range(n):
            if r != col and aug[r, col]:
                aug[r] ^= t.mul[int(aug[r, col])][aug[col]]
    return aug[:, n:].copy()


def build_matrix(k: int, m: int, tables: Gf256Tables | None = None) -> EncodingMatrix:
    """Extended Vandermonde made systematic, parity columns scaled so row k is all ones."""
    if k < 1 or m < 0 or k + m > 255:
        raise InvalidDims(f"RS({k},{m}) needs 1 <= k, 0 <= m, k + m <= 255")
    t = tables or default_tables()
    n = k + m
    vand = np.zeros((n, k), dtype=np.uint8)
    for i in range(n):
        x = 1
        for j in range(k):
            vand[i, j] = x
            x = int(t.mul[x, i])
    systematic = mat_mul(t, vand, mat_inv(t, vand[:k]))
    rows = systematic.copy()
    if m:
        scale = np.array([t.inverse(int(c)) for c in systematic[k]], dtype=np.uint8)
        rows[k:] = t.mul[systematic[k:], scale[None, :]]
    rows[:k] = np.eye(k, dtype=np.uint8)
    rows.setflags(write=False)
    return EncodingMatrix(k, m, rows, t)


def _check_lengths(chunks: Sequence[np.ndarray]) -> int:
    lengths = {c.size for c in chunks}
    if len(lengths) > 1:
        raise LengthMismatch(f"chunk lengths differ: {sorted(lengths)}")
    return lengths.pop() if lengths else 0


def encode_block(mat: EncodingMatrix, data: Sequence[BytesLike]) -> list[bytes]:
    if len(data) != mat.k:
        raise LengthMismatch(f"expected {mat.k} data chunks, got {len(data)}")
    arrs = [_as_u8(d) for d in data]
    length = _check_lengths(arrs)
    mul = mat.tables.mul
    out = []
    for p in range(mat.m):
        acc = np.zeros(length, dtype=np.uint8)
        for j, d in enumerate(arrs):
            acc ^= mul[mat.rows[mat.k + p, j]][d]
        out.append(acc.tobytes())
    return out


def intermediate_parity(mat: EncodingMatrix, data_node_index: int, parity_index: int,
                        payload: BytesLike) -> bytes:
    """Data node ``j``'s contribution to parity ``p`` for one packet payload."""
    if not 0 <= data_node_index < mat.k or not 0 <= parity_index < mat.m:
        raise IndexError(f"(j={data_node_index}, p={parity_index}) outside RS({mat.k},{mat.m})")
    coef = mat.rows[mat.k + parity_index, data_node_index]
    return mat.tables.mul[coef][_as_u8(payload)].tobytes()


def aggregate(acc: bytearray | np.ndarray, incoming: BytesLike):
    """XOR ``incoming`` into ``acc`` in place and return ``acc``."""
    view = acc if isinstance(acc, np.ndarray) else np.frombuffer(acc, dtype=np.uint8)
    inc = _as_u8(incoming)
    if view.size != inc.size:
        raise LengthMismatch(f"accumulator is {view.size} B, incoming is {inc.size} B")
    np.bitwise_xor(view, inc, out=view)
    return acc


def recover(mat: EncodingMatrix, available: Iterable[tuple[int, BytesLike]]) -> list[bytes]:
    """Rebuild the k data chunks from any k (row index, chunk) pairs."""
    pairs = list(available)
    idx = [r for r, _ in pairs]
    if len(idx) != mat.k or len(set(idx)) != mat.k:
        raise InvalidDims(f"need exactly {mat.k} distinct rows, got {idx}")
    if any(not 0 <= r < mat.k + mat.m for r in idx):
        raise InvalidDims(f"row index out of range in {idx}")
    arrs = [_as_u8(c) for _, c in pairs]
    length = _check_lengths(arrs)
    dec = mat_inv(mat.tables, np.asarray(mat.rows)[idx])
    mul = mat.tables.mul
    out = []
    for j in range(mat.k):
        acc = np.zeros(length, dtype=np.uint8)
        for r, c in enumerate(arrs):
            if dec[j, r]:
                acc ^= mul[dec[j, r]][c]
        out.append(acc.tobytes())
    return out


def split_block(data: bytes, k: int) -> list[bytes]:
    """Stripe a write into k zero-padded chunks of ceil(len/k) bytes."""
    length = -(-len(data) // k) if data else 0
    padded = data.ljust(length * k, b"\x00")
    return [padded[j * length:(j + 1) * length] for j in range(k)]
