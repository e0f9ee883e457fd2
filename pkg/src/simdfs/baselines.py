"""Host- and RDMA-based write strategies used as comparison points.

Each ``run_*`` function builds an isolated testbed (client node 0, storage
nodes 1..n), replays one write and returns its latency together with the
testbed so callers can inspect stored bytes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .netsim import Host, HostModel, Link, Network, Simulator, Storage
from .rscodec import aggregate, build_matrix, encode_block, intermediate_parity, split_block
from .wire import RDMA_HEADER_BYTES, Opcode, Packet, build_write_packets, control_packet

CLIENT = 0
WQE_CONFIG_BYTES = 64
CHUNK_SWEEP = tuple(1 << s for s in range(11, 17))  # 2 KiB .. 64 KiB


class Kind(enum.Enum):
    RAW = "raw"
    RPC = "rpc"
    RPC_RDMA = "rpc_rdma"
    RDMA_FLAT = "rdma_flat"
    HYPERLOOP = "hyperloop"
    CPU_RING = "cpu_ring"
    CPU_PBT = "cpu_pbt"
    INEC_TRIEC = "inec_triec"


@dataclass(frozen=True)
class StrategyConfig:
    kind: Kind
    k: int = 1
    m: int = 0
    chunk_bytes: int | None = None
    host: HostModel | None = None
    # EC accelerator throughput for INEC; ``None`` means line rate
    accel_rate_bps: float | None = None

    def __post_init__(self):
        if self.k < 1 or self.m < 0:
            raise ValueError(f"invalid k={self.k}, m={self.m}")
        if self.kind is Kind.INEC_TRIEC and self.m < 1:
            raise ValueError("INEC-TriEC needs m >= 1")
        if self.chunk_bytes is not None and self.chunk_bytes <= 0:
            raise ValueError("chunk_bytes must be positive")


class Testbed:
    """Client 0 plus ``n_storage`` storage nodes, each with a host model and a store."""

    def __init__(self, n_storage: int, link: Link = Link(nic_latency_ns=200.0),
                 host_model: HostModel | None = None, record_trace: bool = True):
        self.sim = Simulator(record_trace=record_trace)
        self.net = Network(self.sim, link)
        hm = host_model or HostModel(memcpy_bandwidth_bps=link.bandwidth_bps)
        self.hosts = {n: Host(self.sim, n, hm) for n in range(n_storage + 1)}
        self.storage = {n: Storage() for n in range(1, n_storage + 1)}
        self.handlers: dict[int, Callable[[Packet], None]] = {}
        self.msg_addr: dict[tuple[int, int, int], int] = {}
        self._landed: dict[tuple[int, int, int], list] = {}
        self._ids = iter(range(1, 1 << 62))
        self.acks_expected = 0
        self.acks = 0
        self.completed_ns: float | None = None
        for n in range(n_storage + 1):
            self.net.attach(n, lambda pkt, n=n: self.handlers[n](pkt))
        self.handlers[CLIENT] = self._client_rx

    @property
    def model(self) -> HostModel:
        return self.hosts[CLIENT].model

    @property
    def mtu(self) -> int:
        return self.net.link.mtu_bytes

    def new_id(self) -> int:
        return next(self._ids)

    # -- client side --------------------------------------------------------
    def _client_rx(self, pkt: Packet) -> None:
        if pkt.rdma.opcode == Opcode.ACK:
            self.acks += 1
            if self.acks == self.acks_expected:
                self.completed_ns = self.sim.now
                self.sim.record("complete", CLIENT)
        else:
            self.on_client_packet(pkt)

    def on_client_packet(self, pkt: Packet) -> None:
        pass

    def send_write(self, src: int, dst: int, data: bytes, addr: int, at: float | None = None,
                   message_id: int | None = None) -> list[Packet]:
        """Raw one-sided write of ``data`` to ``dst:addr``."""
        mid = self.new_id() if message_id is None else message_id
        self.msg_addr[(src, dst, mid)] = addr
        pkts = build_write_packets(data, src=src, dst=dst, message_id=mid, mtu=self.mtu)
        for p in pkts:
            self.net.send(src, dst, p, earliest=at)
        return pkts

    def ack(self, src: int, dst: int, message_id: int = 0, at: float | None = None) -> None:
        pkt = control_packet(Opcode.ACK, src=src, dst=dst, message_id=message_id)
        if at is None or at <= self.sim.now:
            self.net.send(src, dst, pkt)
        else:
            self.sim.schedule(at, self.net.send, src, dst, pkt, kind="ack_post")

    # -- storage side -------------------------------------------------------
    def land(self, node: int, pkt: Packet, done: Callable[[int, int, int], None],
             flush: bool = True) -> None:
        """DMA one packet into host memory; ``done(src, msg_id, nbytes)`` once the message is in."""
        key = (pkt.rdma.src_node, node, pkt.rdma.message_id)
        st = self._landed.setdefault(key, [0, None, 0])
        addr = self.msg_addr[key] + pkt.rdma.packet_seq * (self.mtu - RDMA_HEADER_BYTES)
        self.storage[node].write(addr, pkt.payload)
        if pkt.last:
            st[1] = pkt.rdma.packet_seq + 1
        t = self.hosts[node].write_completion(len(pkt.payload), flush)
        self.sim.schedule(t, self._landed_one, key, len(pkt.payload), done, kind="host_write")

    def _landed_one(self, key, nbytes: int, done) -> None:
        st = self._landed[key]
        st[0] += 1
        st[2] += nbytes
        if st[1] is not None and st[0] == st[1]:
            del self._landed[key]
            done(key[0], key[2], st[2])


def _zip_all(streams):
    longest = max((len(s) for s in streams), default=0)
    for i in range(longest):
        for s in streams:
            if i < len(s):
                yield s[i]


@dataclass
class BaselineResult:
    latency_ns: float
    testbed: Testbed
    chunk_bytes: int | None = None
    extra: dict = field(default_factory=dict)

    def stored(self, node: int, addr: int, length: int) -> bytes:
        return self.testbed.storage[node].read(addr, length)


def _payload(size: int, seed: int) -> bytes:
    return np.random.default_rng(seed).bytes(size)


def _finish(tb: Testbed, **extra) -> BaselineResult:
    tb.sim.run_until_idle()
    if tb.completed_ns is None:
        raise RuntimeError("write never completed")
    return BaselineResult(tb.completed_ns, tb, extra=extra)


def _chunks(data: bytes, chunk: int | None) -> list[tuple[int, bytes]]:
    chunk = chunk or max(len(data), 1)
    if not data:
        return [(0, b"")]
    return [(off, data[off:off + chunk]) for off in range(0, len(data), chunk)]


def run_raw_write(size: int, *, seed: int = 0, **tb_kw) -> BaselineResult:
    """Single one-sided write; ACK once the data is flushed to host memory."""
    tb = Testbed(1, **tb_kw)
    tb.acks_expected = 1
    tb.handlers[1] = lambda pkt: tb.land(1, pkt, lambda src, mid, n: tb.ack(1, src))
    data = _payload(size, seed)
    tb.send_write(CLIENT, 1, data, 0)
    return _finish(tb, data=data)


def run_rpc_write(size: int, *, seed: int = 0, **tb_kw) -> BaselineResult:
    """Request and data in one send; CPU validates and copies into place."""
    tb = Testbed(1, **tb_kw)
    tb.acks_expected = 1
    m = tb.model
    host = tb.hosts[1]

    def landed(src, mid, nbytes):
        _, end = host.cpu.acquire(tb.sim.now, m.rpc_sw_overhead_ns + m.validate_ns + m.copy_ns(nbytes))
        tb.ack(1, src, at=end + m.dma_setup_ns + m.pcie_rtt_ns)

    tb.handlers[1] = lambda pkt: tb.land(1, pkt, landed, flush=False)
    data = _payload(size, seed)
    tb.send_write(CLIENT, 1, data, 0)
    return _finish(tb, data=data)


def run_rpc_rdma_write(size: int, *, seed: int = 0, **tb_kw) -> BaselineResult:
    """Small request; the storage node validates, then pulls the data with an RDMA read."""
    tb = Testbed(1, **tb_kw)
    tb.acks_expected = 1
    m = tb.model
    host = tb.hosts[1]
    client_host = tb.hosts[CLIENT]
    data = _payload(size, seed)
    read_id = tb.new_id()

    def data_landed(src, mid, nbytes):
        _, end = host.cpu.acquire(tb.sim.now, m.rpc_sw_overhead_ns)
        tb.ack(1, CLIENT, at=end + m.dma_setup_ns + m.pcie_rtt_ns)

    def storage_rx(pkt):
        if pkt.rdma.message_id == read_id:
            tb.land(1, pkt, data_landed)
            return
        # request: lands in a receive buffer, CPU validates and posts the read
        t = host.write_completion(pkt.rdma.payload_len, flush=False)
        _, end = host.cpu.acquire(t, m.rpc_sw_overhead_ns + m.validate_ns)
        req = control_packet(Opcode.READ, src=1, dst=CLIENT, message_id=read_id)
        tb.net.send(1, CLIENT, req, earliest=end + m.dma_setup_ns + m.pcie_rtt_ns)

    def client_rx(pkt):
        if pkt.rdma.opcode == Opcode.READ:
            ready = client_host.read_completion(len(data))
            tb.send_write(CLIENT, 1, data, 0, at=ready, message_id=read_id)

    tb.handlers[1] = storage_rx
    tb.on_client_packet = client_rx
    request = control_packet(Opcode.WRITE, src=CLIENT, dst=1, message_id=tb.new_id(),
                             payload=bytes(RDMA_HEADER_BYTES))
    tb.net.send(CLIENT, 1, request)
    return _finish(tb, data=data)


def run_rdma_flat(size: int, k: int, *, seed: int = 0, **tb_kw) -> BaselineResult:
    """k raw writes issued back-to-back from the client's single egress port."""
    tb = Testbed(k, **tb_kw)
    tb.acks_expected = k
    for n in range(1, k + 1):
        tb.handlers[n] = lambda pkt, n=n: tb.land(n, pkt, lambda src, mid, b, n=n: tb.ack(n, src))
    data = _payload(size, seed)
    for n in range(1, k + 1):
        tb.send_write(CLIENT, n, data, 0)
    return _finish(tb, data=data)


class _BroadcastNode:
    """Per-node state for chunked store-and-forward strategies."""

    def __init__(self, tb: Testbed, node: int, children: list[int], n_chunks: int, parent: int):
        self.tb = tb
        self.node = node
        self.children = children
        self.parent = parent
        self.n_chunks = n_chunks
        self.chunks_done = 0
        self.child_acks = 0
        self.acked = False

    def chunk_done(self, at: float) -> None:
        self.chunks_done += 1
        self.last_done = at
        self._maybe_ack()

    def on_ack(self) -> None:
        self.child_acks += 1
        self._maybe_ack()

    def _maybe_ack(self) -> None:
        if self.acked or self.chunks_done < self.n_chunks or self.child_acks < len(self.children):
            return
        self.acked = True
        self.tb.ack(self.node, self.parent, at=max(self.tb.sim.now, self.last_done))


def _ring_children(n: int, k: int) -> list[int]:
    return [n + 1] if n < k else []


def _tree_children(n: int, k: int) -> list[int]:
    r = n - 1
    return [c + 1 for c in (2 * r + 1, 2 * r + 2) if c < k]


def _parent(n: int, k: int, children_fn) -> int:
    for p in range(1, k + 1):
        if n in children_fn(p, k):
            return p
    return CLIENT


def run_hyperloop(size: int, k: int, chunk_bytes: int | None = None, *, seed: int = 0,
                  **tb_kw) -> BaselineResult:
    """WQE configuration round, then a NIC-level ring in ``chunk_bytes`` units."""
    tb = Testbed(k, **tb_kw)
    tb.acks_expected = 1
    m = tb.model
    data = _payload(size, seed)
    chunks = _chunks(data, chunk_bytes)
    chunk_at = {}
    nodes = {n: _BroadcastNode(tb, n, _ring_children(n, k), len(chunks), n - 1 if n > 1 else CLIENT)
             for n in range(1, k + 1)}
    qp_free = {n: 0.0 for n in nodes}
    config_acks = [0]

    def start_data_phase():
        for off, chunk in chunks:
            mid = tb.new_id()
            chunk_at[(CLIENT, 1, mid)] = off
            tb.send_write(CLIENT, 1, chunk, off, message_id=mid)

    def chunk_landed(node, src, mid, nbytes):
        off = chunk_at.pop((src, node, mid))
        nodes[node].chunk_done(tb.sim.now)
        for child in nodes[node].children:
            # pre-posted WQE fetch, then the NIC reads the chunk back from host memory
            wqe = max(tb.sim.now, qp_free[node]) + m.pcie_rtt_ns
            ready = tb.hosts[node].read_completion(nbytes, at=wqe)
            qp_free[node] = ready
            cmid = tb.new_id()
            chunk_at[(node, child, cmid)] = off
            tb.send_write(node, child, data[off:off + nbytes], off, at=ready, message_id=cmid)

    def rx(node, pkt):
        op = pkt.rdma.opcode
        if op == Opcode.ACK:
            nodes[node].on_ack()
        elif op == Opcode.WQE_CONFIG:
            t = tb.hosts[node].write_completion(len(pkt.payload), True)
            tb.ack(node, CLIENT, message_id=pkt.rdma.message_id, at=t)
        else:
            tb.land(node, pkt, lambda src, mid, b: chunk_landed(node, src, mid, b))

    for n in nodes:
        tb.handlers[n] = lambda pkt, n=n: rx(n, pkt)
    data_phase_rx = tb._client_rx

    def client_rx(pkt):
        if pkt.rdma.opcode == Opcode.ACK and config_acks[0] < k:
            config_acks[0] += 1
            if config_acks[0] == k:
                start_data_phase()
        else:
            data_phase_rx(pkt)

    tb.handlers[CLIENT] = client_rx
    for n in nodes:
        cfg = control_packet(Opcode.WQE_CONFIG, src=CLIENT, dst=n, message_id=tb.new_id(),
                             payload=bytes(WQE_CONFIG_BYTES))
        tb.net.send(CLIENT, n, cfg)
    res = _finish(tb, data=data)
    res.chunk_bytes = chunk_bytes
    return res


def run_cpu_broadcast(size: int, k: int, topology: str = "ring", chunk_bytes: int | None = None,
                      *, seed: int = 0, **tb_kw) -> BaselineResult:
    """Host CPUs receive each chunk, copy it into place and re-inject it downstream."""
    if topology not in ("ring", "pbt"):
        raise ValueError(f"unknown topology {topology!r}")
    children_fn = _ring_children if topology == "ring" else _tree_children
    tb = Testbed(k, **tb_kw)
    tb.acks_expected = 1
    m = tb.model
    data = _payload(size, seed)
    chunks = _chunks(data, chunk_bytes)
    chunk_at = {}
    nodes = {n: _BroadcastNode(tb, n, children_fn(n, k), len(chunks), _parent(n, k, children_fn))
             for n in range(1, k + 1)}
    validated = set()

    def chunk_landed(node, src, mid, nbytes):
        off = chunk_at.pop((src, node, mid))
        host = tb.hosts[node]
        work = m.rpc_sw_overhead_ns + m.copy_ns(nbytes)
        if node not in validated:
            validated.add(node)
            work += m.validate_ns
        _, cpu_done = host.cpu.acquire(tb.sim.now, work)
        for child in nodes[node].children:
            ready = host.read_completion(nbytes, at=cpu_done) if nbytes else cpu_done + m.dma_setup_ns + m.pcie_rtt_ns
            cmid = tb.new_id()
            chunk_at[(node, child, cmid)] = off
            tb.send_write(node, child, data[off:off + nbytes], off, at=ready, message_id=cmid)
        tb.sim.schedule(cpu_done, nodes[node].chunk_done, cpu_done + m.dma_setup_ns + m.pcie_rtt_ns,
                        kind="cpu_copy")

    def rx(node, pkt):
        if pkt.rdma.opcode == Opcode.ACK:
            nodes[node].on_ack()
        else:
            tb.land(node, pkt, lambda src, mid, b: chunk_landed(node, src, mid, b), flush=False)

    for n in nodes:
        tb.handlers[n] = lambda pkt, n=n: rx(n, pkt)
    for off, chunk in chunks:
        mid = tb.new_id()
        chunk_at[(CLIENT, 1, mid)] = off
        tb.send_write(CLIENT, 1, chunk, off, message_id=mid)
    res = _finish(tb, data=data)
    res.chunk_bytes = chunk_bytes
    return res


def run_inec_triec(size: int, k: int, m: int, chunk_bytes: int | None = None, *, seed: int = 0,
                   accel_rate_bps: float | None = None, writes: int = 1, **tb_kw) -> BaselineResult:
    """Per-chunk EC: chunks land in host memory, the NIC accelerator reads them back and encodes.

    ``size`` is the per-data-node chunk; ``chunk_bytes`` is accepted for a
    uniform signature but the encoding granularity is always the whole chunk.
    ``writes`` > 1 issues that many blocks back-to-back (window benchmark).
    Write ``w`` lives at offset ``w * (k + 1) * size`` on every node; parity
    nodes keep the k intermediate parities first and the final parity after them.
    """
    tb = Testbed(k + m, **tb_kw)
    rate = accel_rate_bps or tb.net.link.bandwidth_bps
    mat = build_matrix(k, m)
    data_nodes = list(range(1, k + 1))
    parity_nodes = list(range(k + 1, k + m + 1))
    tb.acks_expected = (k + m) * writes
    blocks = [_payload(size * k, seed + w) for w in range(writes)]
    chunks = [split_block(b, k) for b in blocks]
    length = len(chunks[0][0])
    region = (k + 1) * length
    msg_write: dict[tuple[int, int], int] = {}
    parity_in: dict[tuple[int, int], int] = {}

    def accel_ns(nbytes):
        return nbytes * 8 * 1e9 / rate

    def data_landed(node, src, mid, nbytes):
        w = msg_write[(node, mid)]
        j = node - 1
        tb.ack(node, CLIENT)
        ready = tb.hosts[node].read_completion(length) + accel_ns(length) * m
        for p, pnode in enumerate(parity_nodes):
            ip = intermediate_parity(mat, j, p, chunks[w][j])
            pmid = tb.new_id()
            msg_write[(pnode, pmid)] = w
            tb.send_write(node, pnode, ip, w * region + j * length, at=ready, message_id=pmid)

    def parity_landed(node, src, mid, nbytes):
        w = msg_write[(node, mid)]
        got = parity_in[(node, w)] = parity_in.get((node, w), 0) + 1
        if got < k:
            return
        host = tb.hosts[node]
        st = tb.storage[node]
        acc = np.zeros(length, dtype=np.uint8)
        for j in range(k):
            aggregate(acc, st.read(w * region + j * length, length))
        xored = host.read_completion(k * length) + accel_ns(k * length)
        st.write(w * region + k * length, acc.tobytes())
        tb.ack(node, CLIENT, at=host.write_completion(length, True, at=xored))

    for n in data_nodes:
        tb.handlers[n] = lambda pkt, n=n: tb.land(n, pkt, lambda s, mid, b, n=n: data_landed(n, s, mid, b))
    for n in parity_nodes:
        tb.handlers[n] = lambda pkt, n=n: tb.land(n, pkt, lambda s, mid, b, n=n: parity_landed(n, s, mid, b))
    for w in range(writes):
        streams = []
        for n in data_nodes:
            mid = tb.new_id()
            msg_write[(n, mid)] = w
            tb.msg_addr[(CLIENT, n, mid)] = w * region
            streams.append(build_write_packets(chunks[w][n - 1], src=CLIENT, dst=n,
                                               message_id=mid, mtu=tb.mtu))
        for pkt in _zip_all(streams):
            tb.net.send(CLIENT, pkt.rdma.dst_node, pkt)
    return _finish(tb, data=blocks[0], chunks=chunks[0], parity_offset=k * length,
                   chunk_length=length, region=region,
                   expected_parity=[encode_block(mat, c) for c in chunks])


def run_inec_triec_window(size: int, k: int, m: int, writes: int, **kw) -> float:
    return run_inec_triec(size, k, m, writes=writes, **kw).latency_ns


def run_strategy(cfg: StrategyConfig, size: int, *, seed: int = 0, **tb_kw) -> BaselineResult:
    if cfg.host is not None:
        tb_kw.setdefault("host_model", cfg.host)
    kind = cfg.kind
    if kind is Kind.RAW:
        return run_raw_write(size, seed=seed, **tb_kw)
    if kind is Kind.RPC:
        return run_rpc_write(size, seed=seed, **tb_kw)
    if kind is Kind.RPC_RDMA:
        return run_rpc_rdma_write(size, seed=seed, **tb_kw)
    if kind is Kind.RDMA_FLAT:
        return run_rdma_flat(size, cfg.k, seed=seed, **tb_kw)
    if kind is Kind.HYPERLOOP:
        return run_hyperloop(size, cfg.k, cfg.chunk_bytes, seed=seed, **tb_kw)
    if kind in (Kind.CPU_RING, Kind.CPU_PBT):
        topo = "ring" if kind is Kind.CPU_RING else "pbt"
        return run_cpu_broadcast(size, cfg.k, topo, cfg.chunk_bytes, seed=seed, **tb_kw)
    return run_inec_triec(size, cfg.k, cfg.m, cfg.chunk_bytes, seed=seed,
                          accel_rate_bps=cfg.accel_rate_bps, **tb_kw)


@dataclass
class ChunkSweep:
    best_chunk: int | None
    best_latency_ns: float
    curve: list[tuple[int, float]]

    @property
    def unimodal(self) -> bool:
        return is_unimodal([lat for _, lat in self.curve])


def is_unimodal(values: Sequence[float], rel_tol: float = 1e-9) -> bool:
    """Non-increasing then non-decreasing (flat stretches allowed)."""
    i, n = 0, len(values)
    while i + 1 < n and values[i + 1] <= values[i] * (1 + rel_tol):
        i += 1
    while i + 1 < n and values[i + 1] >= values[i] * (1 - rel_tol):
        i += 1
    return i >= n - 1


def sweep_chunks(run: Callable[[int | None], BaselineResult], size: int,
                 candidates: Sequence[int] = CHUNK_SWEEP) -> ChunkSweep:
    """Pick the latency-minimising chunk; ties go to the larger chunk.

    Candidates larger than the write collapse onto the write size.
    """
    if size <= 0:
        return ChunkSweep(None, run(None).latency_ns, [])
    usable = sorted({min(c, size) for c in candidates})
    curve = [(c, run(c).latency_ns) for c in usable]
    best_chunk, best = curve[0]
    for c, lat in curve[1:]:
        if lat <= best:
            best_chunk, best = c, lat
    return ChunkSweep(best_chunk, best, curve)


def best_chunked(kind: Kind, size: int, k: int, *, seed: int = 0,
                 **tb_kw) -> tuple[BaselineResult, ChunkSweep]:
    def run(chunk):
        return run_strategy(StrategyConfig(kind, k, chunk_bytes=chunk), size, seed=seed, **tb_kw)

    sweep = sweep_chunks(run, size)
    return run(sweep.best_chunk), sweep
