"""Deterministic discrete-event engine, links, host-side cost model.

Time is kept in (float) nanoseconds.  Events are ordered by ``(time, seq)``
with ``seq`` assigned at schedule time, so equal-time events run in the
order they were scheduled and repeated runs produce identical traces.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import heapq
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

from .wire import OversizedPacket, Packet


class TimeTravel(RuntimeError):
    pass


class LivelockGuard(RuntimeError):
    pass


@dataclass(eq=False)
class Event:
    time: float
    seq: int
    kind: str
    callback: Callable[..., Any] = field(repr=False)
    args: tuple = field(default=(), repr=False)
    cancelled: bool = False


@dataclass(frozen=True)
class TraceRecord:
    time_ns: float
    kind: str
    node: int
    greq_id: int | None = None
    hpu: int | None = None
    duration_ns: float | None = None
    detail: str = ""


TRACE_COLUMNS = ("time_ns", "kind", "node", "greq_id", "hpu", "duration_ns", "detail")


class Simulator:
    def __init__(self, max_events: int = 20_000_000, record_trace: bool = True):
        self.now = 0.0
        self.max_events = max_events
        self.record_trace = record_trace
        self.trace: list[TraceRecord] = []
        self.events_processed = 0
        self._queue: list[tuple[float, int, Event]] = []
        self._seq = 0

    def schedule(self, time: float, callback: Callable[..., Any], *args, kind: str = "timer") -> Event:
        if time < self.now:
            raise TimeTravel(f"event at {time} ns scheduled while clock is {self.now} ns")
        ev = Event(time, self._seq, kind, callback, args)
        self._seq += 1
        heapq.heappush(self._queue, (time, ev.seq, ev))
        return ev

    def after(self, delay: float, callback: Callable[..., Any], *args, kind: str = "timer") -> Event:
        return self.schedule(self.now + delay, callback, *args, kind=kind)

    @staticmethod
    def cancel(ev: Event) -> None:
        ev.cancelled = True

    def run_until_idle(self) -> float:
        q = self._queue
        pop = heapq.heappop
        while q:
            t, _, ev = pop(q)
            if ev.cancelled:
                continue
            self.events_processed += 1
            if self.events_processed > self.max_events:
                raise LivelockGuard(f"more than {self.max_events} events processed")
            self.now = t
            ev.callback(*ev.args)
        return self.now

    def record(self, kind: str, node: int, greq_id: int | None = None, hpu: int | None = None,
               duration_ns: float | None = None, detail: str = "") -> None:
        if self.record_trace:
            self.trace.append(TraceRecord(self.now, kind, node, greq_id, hpu, duration_ns, detail))


def trace_to_csv(trace: list[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                    for v in (getattr(r, c) for c in TRACE_COLUMNS)])
    return buf.getvalue()


def trace_to_jsonl(trace: list[TraceRecord]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in trace)


def trace_hash(trace: list[TraceRecord]) -> str:
    return hashlib.sha256(trace_to_csv(trace).encode()).hexdigest()


class SerialResource:
    """A FIFO resource serving one job at a time (egress port, DMA engine, CPU core)."""

    def __init__(self):
        self.free_at = 0.0
        self.busy_ns = 0.0

    def acquire(self, earliest: float, duration: float) -> tuple[float, float]:
        start = max(earliest, self.free_at)
        self.free_at = start + duration
        self.busy_ns += duration
        return start, self.free_at


@dataclass(frozen=True)
class Link:
    bandwidth_bps: float = 400e9
    latency_ns: float = 20.0
    mtu_bytes: int = 2048
    # fixed NIC traversal latency, paid once on transmit and once on receive
    nic_latency_ns: float = 0.0

    def serialization_ns(self, nbytes: int) -> float:
        return nbytes * 8 * 1e9 / self.bandwidth_bps

    @property
    def packet_interarrival_ns(self) -> float:
        return self.serialization_ns(self.mtu_bytes)


@dataclass(frozen=True)
class HostModel:
    pcie_rtt_ns: float = 400.0
    memcpy_bandwidth_bps: float = 400e9
    rpc_sw_overhead_ns: float = 500.0
    dma_setup_ns: float = 100.0
    validate_ns: float = 200.0

    def copy_ns(self, nbytes: int) -> float:
        return nbytes * 8 * 1e9 / self.memcpy_bandwidth_bps


class Host:
    """Host memory as seen over PCIe.

    PCIe is full duplex: NIC-to-host writes and host-to-NIC reads each have
    their own serial DMA engine.
    """

    def __init__(self, sim: Simulator, node: int, model: HostModel):
        self.sim = sim
        self.node = node
        self.model = model
        self.dma = SerialResource()
        self.dma_read = SerialResource()
        self.cpu = SerialResource()
        self.bytes_written = 0

    def write_completion(self, nbytes: int, flush: bool = True, at: float | None = None) -> float:
        m = self.model
        t0 = self.sim.now if at is None else at
        _, end = self.dma.acquire(t0 + m.dma_setup_ns, m.copy_ns(nbytes))
        self.bytes_written += nbytes
        return end + (m.pcie_rtt_ns if flush else 0.0)

    def read_completion(self, nbytes: int, at: float | None = None) -> float:
        """NIC-initiated read of host memory (data available on the NIC)."""
        m = self.model
        t0 = self.sim.now if at is None else at
        _, end = self.dma_read.acquire(t0 + m.dma_setup_ns, m.copy_ns(nbytes))
        return end + m.pcie_rtt_ns

    def host_write(self, nbytes: int, callback: Callable[..., Any] | None = None, *args,
                   flush: bool = True) -> float:
        done = self.write_completion(nbytes, flush)
        if callback is not None:
            self.sim.schedule(done, callback, *args, kind="host_write")
        return done


class Storage:
    """Sparse byte-addressed storage target."""

    def __init__(self):
        self._segments: dict[int, bytes] = {}
        self._bases: list[int] = []
        self._longest = 0

    def write(self, addr: int, data: bytes) -> None:
        if data:
            if addr not in self._segments:
                bisect.insort(self._bases, addr)
            self._segments[addr] = bytes(data)
            self._longest = max(self._longest, len(data))

    def read(self, addr: int, length: int) -> bytes:
        out = bytearray(length)
        bases = self._bases
        i = bisect.bisect_left(bases, addr - self._longest + 1)
        for base in bases[i:bisect.bisect_left(bases, addr + length)]:
            seg = self._segments[base]
            lo, hi = max(base, addr), min(base + len(seg), addr + length)
            if lo < hi:
                out[lo - addr:hi - addr] = seg[lo - base:hi - base]
        return bytes(out)

    @property
    def nbytes(self) -> int:
        return sum(len(s) for s in self._segments.values())


Receiver = Callable[[Packet], Any]


@dataclass
class LinkStats:
    bytes_injected: int = 0
    bytes_delivered: int = 0
    packets: int = 0
    last_delivered_seq: int = -1
    next_send_seq: int = 0


class Network:
    """Single-switch network; every node has one serial egress port."""

    def __init__(self, sim: Simulator, link: Link = Link()):
        self.sim = sim
        self.link = link
        self.receivers: dict[int, Receiver] = {}
        self.egress: dict[int, SerialResource] = {}
        self.stats: dict[tuple[int, int], LinkStats] = {}
        self.packets_sent = 0

    def attach(self, node: int, receiver: Receiver) -> None:
        self.receivers[node] = receiver
        self.egress.setdefault(node, SerialResource())

    def port(self, node: int) -> SerialResource:
        return self.egress.setdefault(node, SerialResource())

    def send(self, src: int, dst: int, pkt: Packet, earliest: float | None = None) -> tuple[float, float]:
        """Queue ``pkt`` on ``src``'s egress; returns (egress start, arrival at dst)."""
        size = pkt.size
        if size > self.link.mtu_bytes:
            raise OversizedPacket(f"{size} B packet exceeds MTU {self.link.mtu_bytes}")
        t0 = self.sim.now if earliest is None else max(earliest, self.sim.now)
        ser = self.link.serialization_ns(size)
        start, end = self.port(src).acquire(t0, ser)
        arrival = end + self.link.latency_ns + 2 * self.link.nic_latency_ns
        st = self.stats.setdefault((src, dst), LinkStats())
        st.bytes_injected += size
        st.packets += 1
        seq = st.next_send_seq
        st.next_send_seq += 1
        self.packets_sent += 1
        self.sim.schedule(arrival, self._deliver, src, dst, pkt, seq, size, kind="packet_arrival")
        return start, arrival

    def send_message(self, src: int, dst: int, packets: list[Packet]) -> list[float]:
        return [self.send(src, dst, p)[1] for p in packets]

    def _deliver(self, src: int, dst: int, pkt: Packet, seq: int, size: int) -> None:
        st = self.stats[(src, dst)]
        assert seq == st.last_delivered_seq + 1, "link reordered packets"
        st.last_delivered_seq = seq
        st.bytes_delivered += size
        self.receivers[dst](pkt)
