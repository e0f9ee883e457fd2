"""Bit-exact request formats and MTU packetization.

Layout (all integers little-endian)::

    RdmaHeader   32 B  context_id u32 | message_id u64 | packet_seq u32 |
                       opcode u8 | flags u8 | payload_len u16 |
                       src_node u32 | dst_node u32 | reserved 4 B
    DfsHeader    62 B  op_type u8 | greq_id u64 | capability 53 B
    WRH                target_storage_addr u64 | write_len u64 | tag u8 | params
      REPLICATION        strategy u8 | virtual_rank u8 | replica_count u8 | 12 B coords
      EC                 k u8 | m u8 | role u8 | data_node_index u8 | m x 12 B coords
    RRH          16 B  source_storage_addr u64 | read_len u64
    Coordinate   12 B  node u32 | storage_addr u64

DFS headers follow the RDMA header only on the first packet of a DFS
request; the ``DFS`` flag bit marks their presence.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Union

from .auth import CAPABILITY_BYTES, Capability

DEFAULT_MTU = 2048

_RDMA = struct.Struct("<IQIBBHII4x")
_DFS = struct.Struct("<BQ")
_COORD = struct.Struct("<IQ")
_WRH_FIXED = struct.Struct("<QQB")
_REPL = struct.Struct("<BBB")
_EC = struct.Struct("<BBBB")
_RRH = struct.Struct("<QQ")

RDMA_HEADER_BYTES = _RDMA.size  # 32
DFS_HEADER_BYTES = _DFS.size + CAPABILITY_BYTES  # 62
COORD_BYTES = _COORD.size  # 12
RRH_BYTES = _RRH.size  # 16

MAX_REPLICAS = 16
MAX_EC_K = 32
MAX_EC_M = 8


class WireError(Exception):
    pass


class OversizedPacket(WireError):
    pass


class InvalidDescriptor(WireError):
    pass


class Truncated(WireError):
    pass


class UnknownOpcode(WireError):
    pass


class HeaderTooLarge(WireError):
    pass


class Opcode(enum.IntEnum):
    WRITE = 1
    READ = 2
    ACK = 3
    NACK = 4
    WQE_CONFIG = 5


class Flags(enum.IntFlag):
    NONE = 0
    FIRST = 1
    LAST = 2
    DFS = 4


class DfsOp(enum.IntEnum):
    WRITE = 1
    READ = 2


class Tag(enum.IntEnum):
    NONE = 0
    REPLICATION = 1
    EC = 2


class Strategy(enum.IntEnum):
    RING = 0
    PBT = 1


class EcRole(enum.IntEnum):
    DATA = 0
    PARITY = 1


@dataclass(frozen=True)
class ReplicaCoordinate:
    node: int
    storage_addr: int


@dataclass(frozen=True)
class NoResiliency:
    tag = Tag.NONE


@dataclass(frozen=True)
class ReplicationDescriptor:
    """``replicas[i]`` is the coordinate of virtual rank ``i + 1``."""

    strategy: Strategy
    virtual_rank: int
    replicas: tuple[ReplicaCoordinate, ...] = ()
    tag = Tag.REPLICATION

    @property
    def replica_count(self) -> int:
        return len(self.replicas)


@dataclass(frozen=True)
class EcDescriptor:
    k: int
    m: int
    role: EcRole
    data_node_index: int
    parity_coords: tuple[ReplicaCoordinate, ...] = ()
    tag = Tag.EC


ResiliencyDescriptor = Union[NoResiliency, ReplicationDescriptor, EcDescriptor]


@dataclass(frozen=True)
class RdmaHeader:
    context_id: int
    message_id: int
    packet_seq: int
    opcode: Opcode
    flags: Flags
    payload_len: int
    src_node: int
    dst_node: int


@dataclass(frozen=True)
class DfsHeader:
    op_type: DfsOp
    greq_id: int
    capability: Capability


@dataclass(frozen=True)
class WriteRequestHeader:
    target_storage_addr: int
    write_len: int
    resiliency: ResiliencyDescriptor = field(default_factory=NoResiliency)


@dataclass(frozen=True)
class ReadRequestHeader:
    source_storage_addr: int
    read_len: int


@dataclass(frozen=True)
class Packet:
    rdma: RdmaHeader
    dfs: DfsHeader | None = None
    wrh: WriteRequestHeader | None = None
    rrh: ReadRequestHeader | None = None
    payload: bytes = b""

    @property
    def first(self) -> bool:
        return bool(int.__and__(self.rdma.flags, 1))

    @property
    def last(self) -> bool:
        return bool(int.__and__(self.rdma.flags, 2))

    @property
    def size(self) -> int:
        return packet_size(self)


@dataclass(frozen=True)
class PacketDescriptor:
    seq: int
    flags: Flags
    payload_len: int
    carries_dfs_headers: bool


def check_descriptor(desc: ResiliencyDescriptor) -> None:
    if isinstance(desc, NoResiliency):
        return
    if isinstance(desc, ReplicationDescriptor):
        if desc.strategy not in (Strategy.RING, Strategy.PBT):
            raise InvalidDescriptor(f"unknown replication strategy {desc.strategy!r}")
        if desc.replica_count > MAX_REPLICAS:
            raise InvalidDescriptor(f"{desc.replica_count} replicas exceeds {MAX_REPLICAS}")
        if not 0 <= desc.virtual_rank < desc.replica_count + 1:
            raise InvalidDescriptor(f"virtual rank {desc.virtual_rank} out of range")
        return
    if isinstance(desc, EcDescriptor):
        if not 1 <= desc.k <= MAX_EC_K or not 0 <= desc.m <= MAX_EC_M or desc.k + desc.m > 255:
            raise InvalidDescriptor(f"invalid RS({desc.k},{desc.m})")
        if len(desc.parity_coords) != desc.m:
            raise InvalidDescriptor("parity coordinate count must equal m")
        if desc.role not in (EcRole.DATA, EcRole.PARITY):
            raise InvalidDescriptor(f"unknown EC role {desc.role!r}")
        if not 0 <= desc.data_node_index < desc.k:
            raise InvalidDescriptor(f"data node index {desc.data_node_index} out of range")
        return
    raise InvalidDescriptor(f"not a resiliency descriptor: {desc!r}")


def wrh_size(wrh: WriteRequestHeader) -> int:
    desc = wrh.resiliency
    size = _WRH_FIXED.size
    if isinstance(desc, ReplicationDescriptor):
        size += _REPL.size + COORD_BYTES * desc.replica_count
    elif isinstance(desc, EcDescriptor):
        size += _EC.size + COORD_BYTES * len(desc.parity_coords)
    return size


def header_size(pkt: Packet) -> int:
    size = RDMA_HEADER_BYTES
    if pkt.dfs is not None:
        size += DFS_HEADER_BYTES
        if pkt.wrh is not None:
            size += wrh_size(pkt.wrh)
        elif pkt.rrh is not None:
            size += RRH_BYTES
    return size


def packet_size(pkt: Packet) -> int:
    return header_size(pkt) + len(pkt.payload)


def _check_packet(pkt: Packet) -> None:
    has_dfs = pkt.dfs is not None
    if has_dfs != bool(pkt.rdma.flags & Flags.DFS):
        raise InvalidDescriptor("DFS flag must match presence of the DFS header")
    if (pkt.wrh is not None or pkt.rrh is not None) and not has_dfs:
        raise InvalidDescriptor("request headers require a DFS header")
    if has_dfs:
        if not pkt.first:
            raise InvalidDescriptor("DFS headers are carried on FIRST packets only")
        if pkt.dfs.op_type == DfsOp.WRITE:
            if pkt.wrh is None or pkt.rrh is not None or pkt.rdma.opcode != Opcode.WRITE:
                raise InvalidDescriptor("DFS write needs WRITE opcode and a WRH")
            check_descriptor(pkt.wrh.resiliency)
        elif pkt.dfs.op_type == DfsOp.READ:
            if pkt.rrh is None or pkt.wrh is not None or pkt.rdma.opcode != Opcode.READ:
                raise InvalidDescriptor("DFS read needs READ opcode and an RRH")
        else:
            raise InvalidDescriptor(f"unknown DFS op {pkt.dfs.op_type!r}")
    if pkt.rdma.payload_len != len(pkt.payload):
        raise InvalidDescriptor("payload_len does not match payload")


def _encode_wrh(wrh: WriteRequestHeader) -> bytes:
    desc = wrh.resiliency
    out = [_WRH_FIXED.pack(wrh.target_storage_addr, wrh.write_len, int(desc.tag))]
    if isinstance(desc, ReplicationDescriptor):
        out.append(_REPL.pack(int(desc.strategy), desc.virtual_rank, desc.replica_count))
        out.extend(_COORD.pack(c.node, c.storage_addr) for c in desc.replicas)
    elif isinstance(desc, EcDescriptor):
        out.append(_EC.pack(desc.k, desc.m, int(desc.role), desc.data_node_index))
        out.extend(_COORD.pack(c.node, c.storage_addr) for c in desc.parity_coords)
    return b"".join(out)


def encode_packet(pkt: Packet, mtu: int = DEFAULT_MTU) -> bytes:
    _check_packet(pkt)
    r = pkt.rdma
    parts = [_RDMA.pack(r.context_id, r.message_id, r.packet_seq, int(r.opcode), int(r.flags),
                        r.payload_len, r.src_node, r.dst_node)]
    if pkt.dfs is not None:
        parts.append(_DFS.pack(int(pkt.dfs.op_type), pkt.dfs.greq_id))
        parts.append(pkt.dfs.capability.to_bytes())
        if pkt.wrh is not None:
            parts.append(_encode_wrh(pkt.wrh))
        else:
            parts.append(_RRH.pack(pkt.rrh.source_storage_addr, pkt.rrh.read_len))
    parts.append(pkt.payload)
    raw = b"".join(parts)
    if len(raw) > mtu:
        raise OversizedPacket(f"packet is {len(raw)} B, MTU is {mtu} B")
    return raw


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = memoryview(raw)
        self.pos = 0

    def take(self, st: struct.Struct) -> tuple:
        if self.pos + st.size > len(self.raw):
            raise Truncated(f"need {st.size} B at offset {self.pos}, have {len(self.raw) - self.pos}")
        vals = st.unpack_from(self.raw, self.pos)
        self.pos += st.size
        return vals

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise Truncated(f"need {n} B at offset {self.pos}, have {len(self.raw) - self.pos}")
        out = bytes(self.raw[self.pos:self.pos + n])
        self.pos += n
        return out


def _decode_coords(rd: _Reader, n: int) -> tuple[ReplicaCoordinate, ...]:
    return tuple(ReplicaCoordinate(*rd.take(_COORD)) for _ in range(n))


def _decode_wrh(rd: _Reader) -> WriteRequestHeader:
    addr, length, tag = rd.take(_WRH_FIXED)
    if tag == Tag.NONE:
        desc: ResiliencyDescriptor = NoResiliency()
    elif tag == Tag.REPLICATION:
        strategy, rank, count = rd.take(_REPL)
        if strategy not in (Strategy.RING, Strategy.PBT):
            raise InvalidDescriptor(f"unknown replication strategy {strategy}")
        desc = ReplicationDescriptor(Strategy(strategy), rank, _decode_coords(rd, count))
    elif tag == Tag.EC:
        k, m, role, j = rd.take(_EC)
        if role not in (EcRole.DATA, EcRole.PARITY):
            raise InvalidDescriptor(f"unknown EC role {role}")
        desc = EcDescriptor(k, m, EcRole(role), j, _decode_coords(rd, m))
    else:
        raise InvalidDescriptor(f"unknown resiliency tag {tag}")
    check_descriptor(desc)
    return WriteRequestHeader(addr, length, desc)


def decode_packet(raw: bytes) -> Packet:
    rd = _Reader(raw)
    ctx, msg, seq, opcode, flags, plen, src, dst = rd.take(_RDMA)
    try:
        opcode = Opcode(opcode)
    except ValueError:
        raise UnknownOpcode(f"opcode {opcode}") from None
    flags = Flags(flags & 0x07)
    rdma = RdmaHeader(ctx, msg, seq, opcode, flags, plen, src, dst)
    dfs = wrh = rrh = None
    if flags & Flags.DFS:
        op, greq = rd.take(_DFS)
        cap = Capability.from_bytes(rd.take_bytes(CAPABILITY_BYTES))
        if op == DfsOp.WRITE:
            wrh = _decode_wrh(rd)
        elif op == DfsOp.READ:
            rrh = ReadRequestHeader(*rd.take(_RRH))
        else:
            raise InvalidDescriptor(f"unknown DFS op {op}")
        dfs = DfsHeader(DfsOp(op), greq, cap)
    payload = rd.take_bytes(plen)
    pkt = Packet(rdma, dfs, wrh, rrh, payload)
    _check_packet(pkt)
    return pkt


def first_payload_capacity(wrh: WriteRequestHeader | None, mtu: int) -> int:
    hdr = RDMA_HEADER_BYTES
    if wrh is not None:
        hdr += DFS_HEADER_BYTES + wrh_size(wrh)
    return mtu - hdr


def packetize(headers: tuple[DfsHeader, WriteRequestHeader] | None, data_len: int,
              mtu: int = DEFAULT_MTU) -> list[PacketDescriptor]:
    """Split a write of ``data_len`` bytes into per-packet descriptors.

    ``headers=None`` packetizes a plain RDMA write (no DFS headers).
    """
    wrh = headers[1] if headers is not None else None
    first_cap = first_payload_capacity(wrh, mtu)
    if first_cap < 0:
        raise HeaderTooLarge(f"headers need {mtu - first_cap} B, MTU is {mtu} B")
    rest_cap = mtu - RDMA_HEADER_BYTES
    sizes = [min(data_len, first_cap)]
    remaining = data_len - sizes[0]
    while remaining > 0:
        sizes.append(min(remaining, rest_cap))
        remaining -= sizes[-1]
    descs = []
    for seq, n in enumerate(sizes):
        flags = Flags.NONE
        if seq == 0:
            flags |= Flags.FIRST
            if headers is not None:
                flags |= Flags.DFS
        if seq == len(sizes) - 1:
            flags |= Flags.LAST
        descs.append(PacketDescriptor(seq, flags, n, seq == 0 and headers is not None))
    return descs


def build_write_packets(data: bytes, *, src: int, dst: int, message_id: int,
                        headers: tuple[DfsHeader, WriteRequestHeader] | None = None,
                        context_id: int = 0, mtu: int = DEFAULT_MTU,
                        sizes: list[int] | None = None) -> list[Packet]:
    """Materialize a message.  ``sizes`` overrides the payload split (EC alignment)."""
    if sizes is None:
        descs = packetize(headers, len(data), mtu)
        sizes = [d.payload_len for d in descs]
    pkts = []
    off = 0
    n = len(sizes)
    for seq, plen in enumerate(sizes):
        flags = Flags.NONE
        if seq == 0:
            flags |= Flags.FIRST
        if seq == n - 1:
            flags |= Flags.LAST
        dfs = wrh = None
        if seq == 0 and headers is not None:
            flags |= Flags.DFS
            dfs, wrh = headers
        payload = bytes(data[off:off + plen])
        off += plen
        hdr = RdmaHeader(context_id, message_id, seq, Opcode.WRITE, flags, len(payload), src, dst)
        pkts.append(Packet(hdr, dfs, wrh, None, payload))
    return pkts


def control_packet(opcode: Opcode, *, src: int, dst: int, message_id: int,
                   context_id: int = 0, payload: bytes = b"") -> Packet:
    """Single-packet message without DFS headers (ACK, NACK, WQE_CONFIG, small RPC)."""
    hdr = RdmaHeader(context_id, message_id, 0, opcode, Flags.FIRST | Flags.LAST,
                     len(payload), src, dst)
    return Packet(hdr, payload=payload)
