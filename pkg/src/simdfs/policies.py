"""DFS data-plane handlers running on the storage-node NICs.

One handler set covers the plain authenticated write, ring and
pipelined-binary-tree replication, and streaming erasure coding (data and
parity roles).  Storage nodes, clients and a cluster builder live here too
since every scenario needs them.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import auth
from .gf256 import Gf256Tables, default_tables
from .netsim import Host, HostModel, Link, Network, Simulator, Storage
from .pspin import (AccumulatorPool, HandlerCostTable, HandlerKind, MessageState, PipelineCosts,
                    PspinConfig, PspinNic, RequestDenied, RequestEntry)
from .rscodec import EncodingMatrix, aggregate, build_matrix, intermediate_parity, split_block
from .wire import (RDMA_HEADER_BYTES, DfsHeader, DfsOp, EcDescriptor, EcRole, NoResiliency,
                   Opcode, Packet, RdmaHeader, ReplicaCoordinate, ReplicationDescriptor,
                   Strategy, WriteRequestHeader, build_write_packets, control_packet,
                   first_payload_capacity)

RAW_CONTEXT = 0
DFS_CONTEXT = 1
PARITY_ACK_SLOT = 32
NO_EXPIRY = (1 << 64) - 1


class InvalidRank(ValueError):
    pass


class AckMode(enum.Enum):
    PRIMARY = "primary"
    FULL_CHAIN = "full_chain"


def ack_message_id(greq_id: int, slot: int) -> int:
    """Client-side message ids: one slot per data chunk, parity ACKs from slot 32."""
    return greq_id * 64 + slot


def greq_of_message(message_id: int) -> int:
    return message_id // 64


@dataclass(frozen=True)
class Child:
    rank: int
    coord: ReplicaCoordinate


def compute_children(strategy: Strategy, virtual_rank: int,
                     replicas: Sequence[ReplicaCoordinate], k: int) -> tuple[Child, ...]:
    """Downstream neighbours of ``virtual_rank``; ``replicas[i]`` is rank ``i + 1``."""
    if not 0 <= virtual_rank < k:
        raise InvalidRank(f"virtual rank {virtual_rank} outside [0, {k})")
    if len(replicas) != k - 1:
        raise InvalidRank(f"{len(replicas)} replica coordinates for k={k}")
    if strategy == Strategy.RING:
        ranks = [virtual_rank + 1]
    elif strategy == Strategy.PBT:
        ranks = [2 * virtual_rank + 1, 2 * virtual_rank + 2]
    else:
        raise InvalidRank(f"unknown strategy {strategy!r}")
    return tuple(Child(c, replicas[c - 1]) for c in ranks if c < k)


@dataclass
class DfsState:
    """NIC-resident state shared by every handler on one storage node."""

    keystore: auth.KeyStore
    pool: AccumulatorPool
    tables: Gf256Tables = field(default_factory=default_tables)
    matrices: dict[tuple[int, int], EncodingMatrix] = field(default_factory=dict)
    trusted_nodes: frozenset[int] = frozenset()
    mtu: int = 2048
    ack_mode: AckMode = AckMode.PRIMARY

    def matrix(self, k: int, m: int) -> EncodingMatrix:
        mat = self.matrices.get((k, m))
        if mat is None:
            mat = self.matrices[(k, m)] = build_matrix(k, m, self.tables)
        return mat

    @property
    def resident_bytes(self) -> int:
        gf = self.tables.mul.nbytes + self.tables.inv.nbytes
        mats = sum(m.rows.nbytes for m in self.matrices.values())
        return gf + mats + self.pool.size * self.pool.payload_bytes


class _Stream:
    """Outgoing message produced by a handler set; holds packets until FIRST is out."""

    __slots__ = ("dst", "message_id", "first_sent", "held")

    def __init__(self, dst: int, message_id: int):
        self.dst = dst
        self.message_id = message_id
        self.first_sent = False
        self.held: list[tuple[int, Packet]] = []

    def emit(self, pkt: Packet) -> list[tuple[int, Packet]]:
        if pkt.first:
            self.first_sent = True
            out = [(self.dst, pkt)] + self.held
            self.held = []
            return out
        if self.first_sent:
            return [(self.dst, pkt)]
        self.held.append((self.dst, pkt))
        return []


@dataclass
class _ParityGroup:
    """The k intermediate-parity streams converging on one parity node for one write."""

    client: int
    greq_id: int
    parity_index: int
    k: int
    streams_done: int = 0
    pending_flush: int = 0
    acked: bool = False


def _retarget(h: RdmaHeader, message_id: int, src: int, dst: int) -> RdmaHeader:
    return RdmaHeader(h.context_id, message_id, h.packet_seq, h.opcode, h.flags, h.payload_len,
                      src, dst)


def policy_name(wrh: WriteRequestHeader | None) -> str:
    desc = wrh.resiliency if wrh is not None else NoResiliency()
    if isinstance(desc, ReplicationDescriptor):
        if desc.replica_count == 0:
            return "write"
        return "pbt" if desc.strategy == Strategy.PBT else "ring"
    if isinstance(desc, EcDescriptor):
        if desc.role == EcRole.PARITY:
            return "ec_parity"
        return f"ec_data:{desc.k},{desc.m}"
    return "write"


class SpinDfsHandlers:
    """Header / payload / completion handlers for all DFS policies."""

    def __init__(self, node: "StorageNode", state: DfsState, costs: HandlerCostTable):
        self.node = node
        self.state = state
        self.costs = costs
        self.nic = node.nic
        self.sim = node.sim
        self._msg_ids = itertools.count(1)
        self.fwd_parents: dict[int, MessageState] = {}
        self.groups: dict[tuple[int, int, int], _ParityGroup] = {}
        self.host_acc: dict[Any, list] = {}
        self.host_events: list[tuple[float, str, Any]] = node.nic.host_events
        self.forwarded_packets = 0

    # -- cost model -----------------------------------------------------
    def duration(self, kind: HandlerKind, msg: MessageState, pkt: Packet) -> float:
        clock = self.nic.cfg.clock_hz
        if kind is HandlerKind.HH:
            return self.costs.duration_ns(policy_name(pkt.wrh), kind, pkt.rdma.payload_len, clock)
        if not msg.accept:
            return self.costs.duration_ns("write", HandlerKind.PH, 0, clock)
        payload = pkt.rdma.payload_len if kind is HandlerKind.PH else 0
        return self.costs.duration_ns(msg.ctx["policy"], kind, payload, clock)

    def run(self, kind: HandlerKind, msg: MessageState, pkt: Packet) -> list[tuple[int, Packet]]:
        if kind is HandlerKind.HH:
            return self.request_init(msg, pkt)
        if not msg.accept:
            return []
        if kind is HandlerKind.PH:
            return self.process_pkt(msg, pkt)
        return self.request_fini(msg, pkt)

    # -- header handler -------------------------------------------------
    def _nack(self, msg: MessageState, pkt: Packet, reason: str) -> list[tuple[int, Packet]]:
        msg.accept = False
        self.sim.record("nack", self.node.node, msg.greq_id, detail=reason)
        nack = control_packet(Opcode.NACK, src=self.node.node, dst=pkt.rdma.src_node,
                              message_id=pkt.rdma.message_id, context_id=DFS_CONTEXT)
        return [(pkt.rdma.src_node, nack)]

    def request_init(self, msg: MessageState, pkt: Packet) -> list[tuple[int, Packet]]:
        dfs, wrh = pkt.dfs, pkt.wrh
        if dfs is None or wrh is None or dfs.op_type != DfsOp.WRITE:
            return self._nack(msg, pkt, "not_a_dfs_write")
        msg.greq_id = dfs.greq_id
        src = pkt.rdma.src_node
        if src not in self.state.trusted_nodes:
            verdict = auth.validate(self.state.keystore, dfs.capability, auth.Rights.WRITE,
                                    self.node.node, (wrh.target_storage_addr, wrh.write_len),
                                    int(self.sim.now))
            if not verdict:
                return self._nack(msg, pkt, verdict.reason.name)
        try:
            entry = self.nic.alloc_request_entry(msg.flow, dfs.greq_id)
        except RequestDenied:
            return self._nack(msg, pkt, "table_full")
        msg.accept = True
        entry.resiliency = wrh.resiliency
        entry.storage_cursor = wrh.target_storage_addr
        policy = policy_name(wrh)
        ctx = msg.ctx
        ctx.update(policy=policy, entry=entry, wrh=wrh, dfs=dfs, pending_flush=0,
                   ch_done=False, acked=False, children_pending=0, streams=[],
                   cap0=first_payload_capacity(wrh, self.state.mtu))
        desc = wrh.resiliency
        if isinstance(desc, ReplicationDescriptor) and desc.replica_count:
            children = compute_children(desc.strategy, desc.virtual_rank, desc.replicas,
                                        desc.replica_count + 1)
            entry.coord_array = children
            for child in children:
                stream = _Stream(child.coord.node, next(self._msg_ids))
                ctx["streams"].append((child, stream))
                self.fwd_parents[stream.message_id] = msg
            if self.state.ack_mode is AckMode.FULL_CHAIN:
                ctx["children_pending"] = len(children)
        elif isinstance(desc, EcDescriptor) and desc.role == EcRole.DATA:
            ctx["matrix"] = self.state.matrix(desc.k, desc.m)
            for p, coord in enumerate(desc.parity_coords):
                ctx["streams"].append((p, _Stream(coord.node, next(self._msg_ids))))
        elif isinstance(desc, EcDescriptor):
            p = next(i for i, c in enumerate(desc.parity_coords) if c.node == self.node.node)
            client = dfs.capability.client_id
            key = (client, dfs.greq_id, p)
            group = self.groups.get(key)
            if group is None:
                group = self.groups[key] = _ParityGroup(client, dfs.greq_id, p, desc.k)
            ctx.update(group=group, parity_index=p)
            # the pool is checked here; each aggregation sequence binds its own buffer
            entry.accumulator_fallback = self.state.pool.available == 0
        return []

    # -- payload handler ------------------------------------------------
    def _offset(self, msg: MessageState, seq: int) -> int:
        if seq == 0:
            return 0
        return msg.ctx["cap0"] + (seq - 1) * (self.state.mtu - RDMA_HEADER_BYTES)

    def _store(self, msg: MessageState, addr: int, data: bytes) -> None:
        self.node.storage.write(addr, data)
        msg.ctx["pending_flush"] += 1
        self.node.host.host_write(len(data), self._flushed, msg)

    def _flushed(self, msg: MessageState) -> None:
        msg.ctx["pending_flush"] -= 1
        self._maybe_ack(msg)

    def process_pkt(self, msg: MessageState, pkt: Packet) -> list[tuple[int, Packet]]:
        ctx = msg.ctx
        entry: RequestEntry = ctx["entry"]
        if self.nic.req_table.get(msg.flow) is not entry:
            self.host_events.append((self.sim.now, "unknown_request", msg.greq_id))
            self.sim.record("drop", self.node.node, msg.greq_id, detail="unknown_request")
            return []
        self.nic.touch(entry)
        seq = pkt.rdma.packet_seq
        offset = self._offset(msg, seq)
        payload = pkt.payload
        entry.bytes_received += len(payload)
        policy = ctx["policy"]
        if policy == "ec_parity":
            self._aggregate(msg, seq, offset, payload)
            return []
        self._store(msg, entry.storage_cursor + offset, payload)
        out: list[tuple[int, Packet]] = []
        if policy in ("ring", "pbt"):
            for child, stream in ctx["streams"]:
                out += stream.emit(self._forwarded(msg, pkt, child, stream))
                self.forwarded_packets += 1
        elif policy.startswith("ec_data"):
            desc: EcDescriptor = ctx["wrh"].resiliency
            mat = ctx["matrix"]
            for p, stream in ctx["streams"]:
                ip = intermediate_parity(mat, desc.data_node_index, p, payload)
                out += stream.emit(self._parity_packet(msg, pkt, p, stream, ip))
        return out

    def _forwarded(self, msg: MessageState, pkt: Packet, child: Child, stream: _Stream) -> Packet:
        hdr = _retarget(pkt.rdma, stream.message_id, self.node.node, child.coord.node)
        if not pkt.first:
            return Packet(hdr, payload=pkt.payload)
        wrh: WriteRequestHeader = msg.ctx["wrh"]
        desc = replace(wrh.resiliency, virtual_rank=child.rank)
        new_wrh = WriteRequestHeader(child.coord.storage_addr, wrh.write_len, desc)
        return Packet(hdr, pkt.dfs, new_wrh, None, pkt.payload)

    def _parity_packet(self, msg: MessageState, pkt: Packet, p: int, stream: _Stream,
                       payload: bytes) -> Packet:
        hdr = _retarget(pkt.rdma, stream.message_id, self.node.node, stream.dst)
        if not pkt.first:
            return Packet(hdr, payload=payload)
        wrh: WriteRequestHeader = msg.ctx["wrh"]
        desc: EcDescriptor = wrh.resiliency
        pdesc = replace(desc, role=EcRole.PARITY)
        pwrh = WriteRequestHeader(desc.parity_coords[p].storage_addr, wrh.write_len, pdesc)
        return Packet(hdr, pkt.dfs, pwrh, None, payload)

    def _aggregate(self, msg: MessageState, seq: int, offset: int, payload: bytes) -> None:
        ctx = msg.ctx
        group: _ParityGroup = ctx["group"]
        key = (group.client, group.greq_id, group.parity_index, seq)
        addr = ctx["entry"].storage_cursor + offset
        pool = self.state.pool
        acc = None if key in self.host_acc else pool.acquire(key, len(payload))
        if acc is None:
            self._aggregate_on_host(group, key, addr, payload)
            return
        view = acc.buf[:acc.length]
        aggregate(view, payload)
        acc.arrivals += 1
        if acc.arrivals == group.k:
            data = view.tobytes()
            pool.release(key)
            self.node.storage.write(addr, data)
            group.pending_flush += 1
            self.node.host.host_write(len(data), self._group_flushed, group)

    def _aggregate_on_host(self, group: _ParityGroup, key: Any, addr: int, payload: bytes) -> None:
        """Pool exhausted: intermediate parity is DMA'd to host memory and XORed by the CPU."""
        host = self.node.host
        slot = self.host_acc.get(key)
        if slot is None:
            slot = self.host_acc[key] = [np.zeros(len(payload), dtype=np.uint8), 0]
            self.sim.record("acc_fallback", self.node.node, group.greq_id, detail=f"seq={key[3]}")
        landed = host.write_completion(len(payload), flush=False)
        _, xor_done = host.cpu.acquire(landed, host.model.rpc_sw_overhead_ns
                                       + host.model.copy_ns(len(payload)))
        aggregate(slot[0], payload)
        slot[1] += 1
        group.pending_flush += 1
        if slot[1] == group.k:
            self.node.storage.write(addr, slot[0].tobytes())
            del self.host_acc[key]
            xor_done += host.model.pcie_rtt_ns
        self.sim.schedule(xor_done, self._group_flushed, group, kind="host_xor")

    def _group_flushed(self, group: _ParityGroup) -> None:
        group.pending_flush -= 1
        self._maybe_ack_group(group)

    # -- completion handler ---------------------------------------------
    def request_fini(self, msg: MessageState, pkt: Packet) -> list[tuple[int, Packet]]:
        ctx = msg.ctx
        ctx["ch_done"] = True
        if ctx["policy"] == "ec_parity":
            group: _ParityGroup = ctx["group"]
            group.streams_done += 1
            self.nic.free_request_entry(msg.flow)
            self._maybe_ack_group(group)
        else:
            self._maybe_ack(msg)
        return []

    def _maybe_ack(self, msg: MessageState) -> None:
        ctx = msg.ctx
        if not ctx["ch_done"] or ctx["acked"] or ctx["pending_flush"] or ctx["children_pending"]:
            return
        ctx["acked"] = True
        self.nic.free_request_entry(msg.flow)
        for _, stream in ctx["streams"]:
            self.fwd_parents.pop(stream.message_id, None)
        upstream, message_id = msg.flow
        ack = control_packet(Opcode.ACK, src=self.node.node, dst=upstream, message_id=message_id,
                             context_id=DFS_CONTEXT)
        self.node.net.send(self.node.node, upstream, ack)
        self.sim.record("ack", self.node.node, msg.greq_id)

    def _maybe_ack_group(self, group: _ParityGroup) -> None:
        if group.acked or group.streams_done < group.k or group.pending_flush:
            return
        group.acked = True
        del self.groups[(group.client, group.greq_id, group.parity_index)]
        ack = control_packet(Opcode.ACK, src=self.node.node, dst=group.client,
                             message_id=ack_message_id(group.greq_id,
                                                       PARITY_ACK_SLOT + group.parity_index),
                             context_id=DFS_CONTEXT)
        self.node.net.send(self.node.node, group.client, ack)
        self.sim.record("ack", self.node.node, group.greq_id, detail="parity")

    # -- control traffic and cleanup ----------------------------------------
    def on_control(self, pkt: Packet) -> None:
        parent = self.fwd_parents.get(pkt.rdma.message_id)
        if pkt.rdma.opcode == Opcode.NACK:
            self.host_events.append((self.sim.now, "downstream_nack", pkt.rdma.message_id))
            return
        if parent is None or self.state.ack_mode is not AckMode.FULL_CHAIN:
            return
        parent.ctx["children_pending"] -= 1
        self._maybe_ack(parent)

    def on_cleanup(self, entry: RequestEntry) -> None:
        pool = self.state.pool
        for key in [k for k in pool.mapping if k[1] == entry.greq_id]:
            pool.release(key)
        for key in [k for k in self.groups if k[1] == entry.greq_id]:
            del self.groups[key]


class StorageNode:
    def __init__(self, sim: Simulator, net: Network, node: int, keystore: auth.KeyStore, *,
                 host_model: HostModel = HostModel(), cfg: PspinConfig = PspinConfig(),
                 pipeline: PipelineCosts = PipelineCosts(),
                 costs: HandlerCostTable | None = None, trusted_nodes: frozenset[int] = frozenset(),
                 ack_mode: AckMode = AckMode.PRIMARY,
                 host_path: Callable[["StorageNode", Packet], Any] | None = None):
        self.sim = sim
        self.net = net
        self.node = node
        self.host = Host(sim, node, host_model)
        self.storage = Storage()
        self._host_path = host_path
        self.nic = PspinNic(sim, net, node, cfg, pipeline, host_path=self._steer_to_host)
        mtu = net.link.mtu_bytes
        pool = AccumulatorPool(cfg.accumulator_pool_entries, mtu - RDMA_HEADER_BYTES, self.nic.memory)
        self.state = DfsState(keystore, pool, trusted_nodes=trusted_nodes, mtu=mtu,
                              ack_mode=ack_mode)
        self.handlers = SpinDfsHandlers(self, self.state, costs or HandlerCostTable())
        self.nic.install(DFS_CONTEXT, self.handlers)
        net.attach(node, self.receive)

    def receive(self, pkt: Packet) -> None:
        if pkt.rdma.opcode in (Opcode.ACK, Opcode.NACK) and pkt.rdma.context_id == DFS_CONTEXT:
            self.handlers.on_control(pkt)
        else:
            self.nic.ingest_packet(pkt)

    def _steer_to_host(self, pkt: Packet) -> None:
        if self._host_path is None:
            self.sim.record("drop", self.node, detail="no_context")
            return
        self._host_path(self, pkt)


@dataclass
class WriteRecord:
    greq_id: int
    issued_ns: float
    data_len: int
    expected_acks: int
    acks: int = 0
    nacks: int = 0
    completed_ns: float | None = None
    last_injected_ns: float = 0.0

    @property
    def latency_ns(self) -> float | None:
        if self.completed_ns is None:
            return None
        return self.completed_ns - self.issued_ns

    @property
    def failed(self) -> bool:
        return self.nacks > 0


class Client:
    def __init__(self, sim: Simulator, net: Network, node: int, keystore: auth.KeyStore,
                 context_id: int = DFS_CONTEXT):
        self.sim = sim
        self.net = net
        self.node = node
        self.keystore = keystore
        self.context_id = context_id
        self.writes: dict[int, WriteRecord] = {}
        self.on_complete: Callable[[WriteRecord], Any] | None = None
        # minimum spacing between consecutive packet injections; 0 means line rate
        self.packet_gap_ns = 0.0
        self._greq = itertools.count(node << 32)
        net.attach(node, self.receive)

    @property
    def mtu(self) -> int:
        return self.net.link.mtu_bytes

    def capability_for(self, target: ReplicaCoordinate, length: int,
                       rights: auth.Rights = auth.Rights.WRITE, expiry: int = NO_EXPIRY) -> auth.Capability:
        return auth.issue(self.keystore, self.node, target.node, target.storage_addr,
                          max(length, 1), rights, expiry)

    def receive(self, pkt: Packet) -> None:
        rec = self.writes.get(greq_of_message(pkt.rdma.message_id))
        if rec is None:
            return
        if pkt.rdma.opcode == Opcode.NACK:
            rec.nacks += 1
            self.sim.record("client_nack", self.node, rec.greq_id)
        elif pkt.rdma.opcode == Opcode.ACK:
            rec.acks += 1
            if rec.acks == rec.expected_acks and rec.completed_ns is None:
                rec.completed_ns = self.sim.now
                self.sim.record("complete", self.node, rec.greq_id)
                if self.on_complete is not None:
                    self.on_complete(rec)

    def _send(self, streams: list[list[Packet]], interleave: bool, stop_after: int | None) -> float:
        if interleave:
            order = [p for group in itertools.zip_longest(*streams) for p in group if p is not None]
        else:
            order = [p for s in streams for p in s]
        if stop_after is not None:
            order = order[:stop_after]
        last = self.sim.now
        earliest = None
        for pkt in order:
            last, _ = self.net.send(self.node, pkt.rdma.dst_node, pkt, earliest)
            if self.packet_gap_ns:
                earliest = last + self.packet_gap_ns
        return last

    def _request(self, greq: int, slot: int, target: ReplicaCoordinate, data: bytes,
                 desc, capability: auth.Capability | None) -> list[Packet]:
        cap = capability or self.capability_for(target, len(data))
        headers = (DfsHeader(DfsOp.WRITE, greq, cap),
                   WriteRequestHeader(target.storage_addr, len(data), desc))
        return build_write_packets(data, src=self.node, dst=target.node,
                                   message_id=ack_message_id(greq, slot), headers=headers,
                                   context_id=self.context_id, mtu=self.mtu)

    def _record(self, greq: int, size: int, acks: int) -> WriteRecord:
        rec = WriteRecord(greq, self.sim.now, size, acks)
        self.writes[greq] = rec
        return rec

    def write(self, target: ReplicaCoordinate, data: bytes, *,
              capability: auth.Capability | None = None, stop_after: int | None = None) -> int:
        greq = next(self._greq)
        rec = self._record(greq, len(data), 1)
        pkts = self._request(greq, 0, target, data, NoResiliency(), capability)
        rec.last_injected_ns = self._send([pkts], False, stop_after)
        return greq

    def write_replicated(self, coords: Sequence[ReplicaCoordinate], data: bytes,
                         strategy: Strategy = Strategy.RING, *,
                         capability: auth.Capability | None = None,
                         stop_after: int | None = None) -> int:
        """One message to the primary ``coords[0]``; the NICs fan it out."""
        greq = next(self._greq)
        rec = self._record(greq, len(data), 1)
        desc = ReplicationDescriptor(strategy, 0, tuple(coords[1:]))
        pkts = self._request(greq, 0, coords[0], data, desc, capability)
        rec.last_injected_ns = self._send([pkts], False, stop_after)
        return greq

    def write_ec(self, data_coords: Sequence[ReplicaCoordinate],
                 parity_coords: Sequence[ReplicaCoordinate], data: bytes, *,
                 interleave: bool = True, stop_after: int | None = None) -> int:
        k, m = len(data_coords), len(parity_coords)
        greq = next(self._greq)
        rec = self._record(greq, len(data), k + m)
        chunks = split_block(data, k)
        streams = []
        for j, (coord, chunk) in enumerate(zip(data_coords, chunks)):
            desc = EcDescriptor(k, m, EcRole.DATA, j, tuple(parity_coords))
            streams.append(self._request(greq, j, coord, chunk, desc, None))
        rec.last_injected_ns = self._send(streams, interleave, stop_after)
        return greq


def client_issue_write(client: Client, targets: Sequence[ReplicaCoordinate], data: bytes,
                       resiliency=None, interleave: bool = True) -> int:
    if resiliency is None or isinstance(resiliency, NoResiliency):
        return client.write(targets[0], data)
    if isinstance(resiliency, ReplicationDescriptor):
        return client.write_replicated(targets, data, resiliency.strategy)
    if isinstance(resiliency, EcDescriptor):
        return client.write_ec(targets[:resiliency.k], resiliency.parity_coords, data,
                               interleave=interleave)
    raise TypeError(f"unsupported resiliency {resiliency!r}")


@dataclass
class SpinCluster:
    sim: Simulator
    net: Network
    keystore: auth.KeyStore
    clients: list[Client]
    nodes: list[StorageNode]

    @property
    def client(self) -> Client:
        return self.clients[0]

    def coord(self, i: int, addr: int = 0) -> ReplicaCoordinate:
        return ReplicaCoordinate(self.nodes[i].node, addr)

    def coords(self, n: int, addr: int = 0, start: int = 0) -> list[ReplicaCoordinate]:
        return [self.coord(i, addr) for i in range(start, start + n)]

    def run(self) -> float:
        return self.sim.run_until_idle()


def build_cluster(n_storage: int, *, n_clients: int = 1, link: Link = Link(nic_latency_ns=200.0),
                  host_model: HostModel | None = None, cfg: PspinConfig = PspinConfig(),
                  pipeline: PipelineCosts = PipelineCosts(), costs: HandlerCostTable | None = None,
                  ack_mode: AckMode = AckMode.PRIMARY, record_trace: bool = True,
                  keystore: auth.KeyStore | None = None,
                  host_path: Callable[[StorageNode, Packet], Any] | None = None) -> SpinCluster:
    """Clients get node ids 0..n_clients-1, storage nodes follow."""
    sim = Simulator(record_trace=record_trace)
    net = Network(sim, link)
    ks = keystore or auth.KeyStore(bytes(range(32)))
    hm = host_model or HostModel(memcpy_bandwidth_bps=link.bandwidth_bps)
    storage_ids = frozenset(range(n_clients, n_clients + n_storage))
    clients = [Client(sim, net, i, ks) for i in range(n_clients)]
    nodes = [StorageNode(sim, net, n, ks, host_model=hm, cfg=cfg, pipeline=pipeline, costs=costs,
                         trusted_nodes=storage_ids, ack_mode=ack_mode, host_path=host_path)
             for n in sorted(storage_ids)]
    return SpinCluster(sim, net, ks, clients, nodes)
