import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simdfs.netsim import Link, Network, Simulator
from simdfs.pspin import (HandlerCost, HandlerCostTable, HandlerKind, MemoryAccountant,
                          AccumulatorPool, NoContext, PipelineCosts, PspinConfig, PspinNic,
                          RequestDenied, RequestTable, capacity, handler_budget_ns, hpus_needed,
                          required_memory)
from simdfs.wire import build_write_packets

HH, PH, CH = HandlerKind.HH, HandlerKind.PH, HandlerKind.CH


class FixedCost:
    """Handler set with constant durations that logs (kind, msg flow, seq, start, end)."""

    def __init__(self, sim, durations):
        self.sim = sim
        self.durations = durations
        self.log = []

    def duration(self, kind, msg, pkt):
        if kind is HH:
            msg.greq_id = msg.flow[1]
        return self.durations[kind]

    def run(self, kind, msg, pkt):
        d = self.durations[kind]
        self.log.append((kind, msg.flow[1], pkt.rdma.packet_seq, self.sim.now - d, self.sim.now))
        return []


def nic_with(durations, cfg=PspinConfig()):
    sim = Simulator()
    net = Network(sim, Link())
    nic = PspinNic(sim, net, 1, cfg)
    hs = FixedCost(sim, durations)
    nic.install(0, hs)
    return sim, nic, hs


def full_packet(mid=0):
    (p,) = build_write_packets(bytes(2016), src=0, dst=1, message_id=mid)
    assert p.size == 2048
    return p


class TestPipeline:
    def test_full_mtu_handler_starts_78ns_after_arrival(self):
        assert PipelineCosts().ready_ns(2048, 1e9) + PipelineCosts().hpu_dispatch_ns == 78
        sim, nic, hs = nic_with({HH: 10, PH: 10, CH: 10})
        sim.schedule(500, nic.ingest_packet, full_packet())
        sim.run_until_idle()
        assert [(k, s) for k, _, _, s, _ in hs.log] == [(HH, 578), (PH, 589), (CH, 600)]

    def test_33rd_packet_waits_for_an_hpu(self):
        sim, nic, hs = nic_with({HH: 1000, PH: 0, CH: 0})
        for i in range(33):
            nic.ingest_packet(full_packet(i))
        sim.run_until_idle()
        starts = {mid: s for k, mid, _, s, _ in hs.log if k is HH}
        assert all(starts[i] == 78 for i in range(32))
        assert starts[32] >= 78 + 1000
        assert nic.max_running == 32

    def test_ingress_is_fifo(self):
        sim, nic, hs = nic_with({HH: 5, PH: 5, CH: 5})
        big = full_packet(0)
        (small,) = build_write_packets(b"x", src=0, dst=1, message_id=1)
        nic.ingest_packet(big)
        assert nic.ingest_packet(small) >= 77

    def test_unknown_context(self):
        sim, nic, _ = nic_with({HH: 1, PH: 1, CH: 1})
        (p,) = build_write_packets(b"", src=0, dst=1, message_id=0, context_id=5)
        with pytest.raises(NoContext):
            nic.ingest_packet(p)
        seen = []
        nic.host_path = seen.append
        nic.ingest_packet(p)
        assert seen == [p]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=12), st.randoms(use_true_random=False),
       st.integers(1, 8))
def test_handler_ordering_per_message(lengths, rng, hpus):
    """HH before every PH; CH after every PH; each packet's PH runs once."""
    cfg = PspinConfig(clusters=1, hpus_per_cluster=hpus)
    sim, nic, hs = nic_with({HH: 50, PH: 20, CH: 30}, cfg)
    streams = [build_write_packets(bytes(100 * n), src=0, dst=1, message_id=mid,
                                   sizes=[100] * n) for mid, n in enumerate(lengths)]
    t = 0.0
    cursors = [0] * len(streams)
    while any(c < len(s) for c, s in zip(cursors, streams)):
        i = rng.choice([i for i, s in enumerate(streams) if cursors[i] < len(s)])
        sim.schedule(t, nic.ingest_packet, streams[i][cursors[i]])
        cursors[i] += 1
        t += rng.choice([0.0, 5.0, 40.0])
    sim.run_until_idle()
    for mid, n in enumerate(lengths):
        ev = [e for e in hs.log if e[1] == mid]
        hh = [e for e in ev if e[0] is HH]
        ph = [e for e in ev if e[0] is PH]
        ch = [e for e in ev if e[0] is CH]
        assert len(hh) == 1 and len(ch) == 1
        assert sorted(e[2] for e in ph) == list(range(n))
        assert all(p[3] >= hh[0][4] for p in ph)
        assert all(ch[0][3] >= p[4] for p in ph)
    assert nic.max_running <= hpus
    assert not nic.messages


class TestCapacity:
    def test_defaults(self):
        assert capacity() == 6 * (1 << 20) // 77 == 81_707

    def test_small_examples(self):
        cfg = PspinConfig(clusters=1, l1_bytes_per_cluster=100, l2_bytes=0,
                          dfs_state_reserved_bytes=0, descriptor_bytes=1)
        assert capacity(cfg) == 100
        full = PspinConfig(dfs_state_reserved_bytes=8 * (1 << 20))
        assert capacity(full) == 0

    def test_required_memory(self):
        assert required_memory(0) == 0
        assert required_memory(81_707) == 6_291_439 <= 6 * (1 << 20)
        assert required_memory(100_000) == 7_700_000 > 6 * (1 << 20)

    def test_budget(self):
        assert handler_budget_ns(2048, 400e9, 32) == pytest.approx(1310.72)
        assert handler_budget_ns(2048, 400e9, 1) == pytest.approx(40.96)
        assert handler_budget_ns(2048, 200e9, 32) == pytest.approx(2621.44)

    def test_hpus_needed(self):
        assert hpus_needed(1310, 2048, 400e9) == 32
        assert hpus_needed(40, 2048, 400e9) == 1
        assert hpus_needed(23_018, 2048, 400e9) == 562

    def test_budget_inverse(self):
        rng = random.Random(7)
        for _ in range(20):
            mtu = rng.choice([1500, 2048, 4096, 9000])
            rate = rng.choice([100e9, 200e9, 400e9, 800e9])
            n = rng.randint(1, 1024)
            assert hpus_needed(handler_budget_ns(mtu, rate, n), mtu, rate) == n


class TestRequestTable:
    def test_alloc_charges_and_reuses_lowest_index(self):
        mem = MemoryAccountant()
        t = RequestTable(PspinConfig(), mem)
        a = t.alloc("a", 1)
        assert a.index == 0 and mem.charged == 77
        t.alloc("b", 2)
        t.alloc("c", 3)
        t.free("a")
        t.free("b")
        assert t.alloc("d", 4).index == 0
        assert mem.charged == 2 * 77

    def test_full_table_denies(self):
        cfg = PspinConfig(clusters=1, l1_bytes_per_cluster=77 * 3, l2_bytes=0,
                          dfs_state_reserved_bytes=0)
        t = RequestTable(cfg)
        for i in range(3):
            t.alloc(i, i)
        with pytest.raises(RequestDenied):
            t.alloc(9, 9)
        t.free(0)
        assert t.alloc(9, 9).index == 0

    def test_full_default_table(self):
        t = RequestTable(PspinConfig())
        for i in range(capacity()):
            t.alloc(i, i)
        with pytest.raises(RequestDenied):
            t.alloc("x", 0)
        assert t.memory.charged == 6_291_439

    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 30)), max_size=200))
    def test_memory_conservation(self, ops):
        mem = MemoryAccountant()
        t = RequestTable(PspinConfig(), mem)
        pool = AccumulatorPool(4, 2016, mem)
        for is_alloc, key in ops:
            if is_alloc:
                if t.get(key) is None:
                    t.alloc(key, key)
                pool.acquire(key, 100)
            else:
                t.free(key)
                pool.release(key)
            assert mem.charged == 77 * len(t) + 2016 * pool.in_use
            assert pool.in_use + pool.available == 4
            assert len({e.index for e in t.entries.values()}) == len(t)


class TestAccumulatorPool:
    def test_exhaustion_and_zeroing(self):
        pool = AccumulatorPool(1, 16)
        a = pool.acquire("x", 8)
        a.buf[:] = 7
        assert pool.acquire("y", 8) is None
        assert pool.acquire("x", 8) is a
        pool.release("x")
        assert pool.acquire("y", 8).buf.sum() == 0
        assert pool.acquire("z", 32) is None


class TestCleanup:
    def _nic(self, timeout=1000.0):
        return nic_with({HH: 1, PH: 1, CH: 1}, PspinConfig(cleanup_timeout_ns=timeout))

    def test_scan_boundaries(self):
        sim, nic, _ = self._nic()
        nic.alloc_request_entry(("c", 1), 11)
        assert nic.cleanup_scan(now=999) == []
        assert nic.cleanup_scan(now=1000) == []
        assert nic.cleanup_scan(now=1000.5) == [11]
        assert nic.cleanup_scan(now=5000) == []
        assert nic.host_events == [(0.0, "write_interrupted", 11)]
        assert nic.memory.charged == 0

    def test_completed_request_not_reported(self):
        sim, nic, _ = self._nic()
        nic.alloc_request_entry(("c", 1), 11)
        nic.free_request_entry(("c", 1))
        sim.run_until_idle()
        assert nic.cleanup_scan(now=10**9) == [] and nic.host_events == []

    def test_timer_fires_once_after_idle_timeout(self):
        sim, nic, _ = self._nic()
        e = nic.alloc_request_entry(("c", 1), 11)
        sim.schedule(600, nic.touch, e)
        sim.run_until_idle()
        assert nic.host_events == [(1601.0, "write_interrupted", 11)]
        assert len(nic.req_table) == 0 and nic.memory.charged == 0


class TestCosts:
    TABLE = HandlerCostTable()

    @pytest.mark.parametrize("policy,want", [
        ("write", (211, 92, 107)), ("ring", (212, 193, 146)),
        ("ec_data:3,2", (215, 16681, 105)), ("ec_data:6,3", (215, 23018, 82))])
    def test_calibration_reproduces_measured_durations(self, policy, want):
        got = tuple(self.TABLE.duration_ns(policy, k, 2016) for k in (HH, PH, CH))
        assert got == want

    def test_ec_per_byte_scales_with_payload(self):
        full = self.TABLE.duration_ns("ec_data:3,2", PH, 2016)
        half = self.TABLE.duration_ns("ec_data:3,2", PH, 1008)
        assert half < full and self.TABLE.duration_ns("ec_data:3,2", PH, 0) > 0

    def test_unknown_ec_scheme_extrapolates(self):
        assert self.TABLE.lookup("ec_data:4,2", PH).per_byte_instructions == 5
        with pytest.raises(KeyError):
            self.TABLE.lookup("nope", HH)

    def test_with_entry_is_copy(self):
        t2 = self.TABLE.with_entry("write", HH, HandlerCost(10, 0, 1.0))
        assert t2.duration_ns("write", HH, 0) == 10
        assert self.TABLE.duration_ns("write", HH, 0) == 211
