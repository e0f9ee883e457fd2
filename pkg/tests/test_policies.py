import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simdfs.netsim import Link
from simdfs.policies import (DFS_CONTEXT, AckMode, InvalidRank, ack_message_id, build_cluster,
                             client_issue_write, compute_children, greq_of_message)
from simdfs.pspin import HandlerKind, PspinConfig, capacity
from simdfs.rscodec import build_matrix, encode_block, recover, split_block
from simdfs.wire import (EcDescriptor, EcRole, Opcode, ReplicaCoordinate, ReplicationDescriptor,
                         Strategy)


def spy_sends(net):
    log = []
    orig = net.send

    def send(src, dst, pkt, earliest=None):
        log.append((src, dst, pkt))
        return orig(src, dst, pkt, earliest)
    net.send = send
    return log


def data_of(n, salt=0):
    return bytes((i * 131 + salt * 7 + (i >> 8)) & 0xFF for i in range(n))


def coords(n):
    return [ReplicaCoordinate(i, 0) for i in range(1, n)]


class TestChildren:
    def test_examples(self):
        c = coords(4)
        assert [ch.rank for ch in compute_children(Strategy.PBT, 0, c, 4)] == [1, 2]
        assert [ch.rank for ch in compute_children(Strategy.PBT, 1, c, 4)] == [3]
        assert compute_children(Strategy.RING, 3, c, 4) == ()
        assert [ch.rank for ch in compute_children(Strategy.RING, 0, coords(2), 2)] == [1]
        assert compute_children(Strategy.RING, 0, c, 4)[0].coord == c[0]

    def test_errors(self):
        with pytest.raises(InvalidRank):
            compute_children(Strategy.RING, 4, coords(4), 4)
        with pytest.raises(InvalidRank):
            compute_children(Strategy.RING, 0, coords(3), 4)

    @pytest.mark.parametrize("strategy", list(Strategy))
    @pytest.mark.parametrize("k", range(1, 20))
    def test_every_rank_has_one_parent_and_bounded_depth(self, strategy, k):
        parents = {}
        for r in range(k):
            for ch in compute_children(strategy, r, coords(k), k):
                assert ch.rank not in parents
                parents[ch.rank] = r
        assert sorted(parents) == list(range(1, k))
        depth = 0
        for r in range(1, k):
            d, x = 0, r
            while x:
                x, d = parents[x], d + 1
            depth = max(depth, d)
        if strategy == Strategy.PBT:
            assert depth <= (k + 1).bit_length()
        else:
            assert depth == k - 1


def test_message_id_slots():
    assert greq_of_message(ack_message_id(12345, 0)) == 12345
    assert greq_of_message(ack_message_id(12345, 63)) == 12345


class TestPlainWrite:
    def test_five_packet_write_stores_contiguously(self):
        c = build_cluster(1)
        node = c.nodes[0]
        calls = []
        orig = node.host.host_write
        node.host.host_write = lambda n, *a, **kw: calls.append(n) or orig(n, *a, **kw)
        data = data_of(8192)
        g = c.client.write(c.coord(0, 4096), data)
        c.run()
        assert calls == [1937, 2016, 2016, 2016, 207]
        assert node.storage.read(4096, 8192) == data
        assert sorted(node.storage._segments) == [4096 + o for o in (0, 1937, 3953, 5969, 7985)]
        assert c.client.writes[g].completed_ns is not None
        assert len(node.nic.req_table) == 0 and node.nic.memory.charged == 0

    def test_ack_after_flush(self):
        c = build_cluster(1)
        node = c.nodes[0]
        flushed = []
        orig = node.host.host_write
        node.host.host_write = lambda n, *a, **kw: flushed.append(orig(n, *a, **kw)) or flushed[-1]
        log = spy_sends(c.net)
        c.client.write(c.coord(0), data_of(1024))
        c.run()
        acks = [r.time_ns for r in c.sim.trace if r.kind == "ack"]
        assert len(acks) == 1 and acks[0] >= flushed[0]
        ack_pkts = [p for _, _, p in log if p.rdma.opcode == Opcode.ACK]
        assert ack_pkts[0].rdma.context_id == DFS_CONTEXT

    def test_tampered_mac_nacked_and_dropped(self):
        c = build_cluster(1)
        target = c.coord(0)
        cap = c.client.capability_for(target, 10_000)
        bad = dataclasses.replace(cap, mac=bytes([cap.mac[0] ^ 1]) + cap.mac[1:])
        log = spy_sends(c.net)
        g = c.client.write(target, data_of(10_000), capability=bad)
        c.run()
        rec = c.client.writes[g]
        assert rec.nacks == 1 and rec.acks == 0 and rec.completed_ns is None
        node = c.nodes[0]
        assert node.storage.nbytes == 0
        assert node.nic.stats[HandlerKind.PH].count == 5
        assert [p.rdma.opcode for s, _, p in log if s == node.node] == [Opcode.NACK]
        assert len(node.nic.req_table) == 0

    def test_out_of_range_write_denied(self):
        c = build_cluster(1)
        cap = c.client.capability_for(c.coord(0), 100)
        g = c.client.write(c.coord(0), data_of(200), capability=cap)
        c.run()
        assert c.client.writes[g].failed

    def test_table_full_nacks(self):
        cfg = PspinConfig(clusters=1, hpus_per_cluster=8, l1_bytes_per_cluster=77 * 2, l2_bytes=0,
                          dfs_state_reserved_bytes=0)
        assert capacity(cfg) == 2
        c = build_cluster(1, cfg=cfg)
        gs = [c.client.write(c.coord(0, i * 10_000), data_of(6000, i), stop_after=1 if i < 2 else None)
              for i in range(3)]
        c.run()
        assert [c.client.writes[g].nacks for g in gs] == [0, 0, 1]


def test_client_packet_gap_spaces_injections():
    c = build_cluster(1)
    c.client.packet_gap_ns = 500.0
    log = []
    orig = c.net.send
    c.net.send = lambda s, d, p, e=None: log.append(orig(s, d, p, e)[0]) or (log[-1], 0.0)
    c.client.write(c.coord(0), data_of(6000))
    assert log == [0.0, 500.0, 1000.0, 1500.0]


class TestReplication:
    @pytest.mark.parametrize("strategy", list(Strategy))
    @pytest.mark.parametrize("k", [2, 3, 4, 8])
    @pytest.mark.parametrize("size", [0, 1, 2000, 9000])
    @pytest.mark.parametrize("mode", list(AckMode))
    def test_every_replica_stores_the_data(self, strategy, k, size, mode):
        c = build_cluster(k, ack_mode=mode)
        data = data_of(size, k)
        g = c.client.write_replicated(c.coords(k, 512), data, strategy)
        c.run()
        assert c.client.writes[g].completed_ns is not None
        for n in c.nodes:
            assert n.storage.read(512, size) == data
            assert len(n.nic.req_table) == 0 and n.nic.memory.charged == 0

    def test_ring_forwards_each_packet_once_per_hop(self):
        c = build_cluster(4)
        log = spy_sends(c.net)
        c.client.write_replicated(c.coords(4), data_of(20_000), Strategy.RING)
        c.run()
        writes = [(s, d) for s, d, p in log if p.rdma.opcode == Opcode.WRITE]
        client_pkts = sum(1 for s, _ in writes if s == c.client.node)
        assert client_pkts == 10
        assert len(writes) == 4 * client_pkts
        for hop in range(1, 4):
            assert sum(1 for s, d in writes if (s, d) == (hop, hop + 1)) == client_pkts
        assert sum(n.handlers.forwarded_packets for n in c.nodes) == 3 * client_pkts

    def test_client_sends_only_to_primary(self):
        c = build_cluster(3)
        log = spy_sends(c.net)
        c.client.write_replicated(c.coords(3), data_of(5000), Strategy.PBT)
        c.run()
        assert {d for s, d, _ in log if s == c.client.node} == {c.nodes[0].node}

    def test_primary_ack_does_not_wait_for_downstream(self):
        c = build_cluster(4, ack_mode=AckMode.PRIMARY)
        g = c.client.write_replicated(c.coords(4), data_of(4000), Strategy.RING)
        c.run()
        acks = {r.node: r.time_ns for r in c.sim.trace if r.kind == "ack"}
        assert acks[c.nodes[0].node] < acks[c.nodes[-1].node]
        assert c.client.writes[g].completed_ns < acks[c.nodes[-1].node]

    def test_full_chain_waits_for_tail(self):
        c = build_cluster(4, ack_mode=AckMode.FULL_CHAIN)
        g = c.client.write_replicated(c.coords(4), data_of(4000), Strategy.RING)
        c.run()
        acks = {r.node: r.time_ns for r in c.sim.trace if r.kind == "ack"}
        assert acks[c.nodes[0].node] > acks[c.nodes[-1].node]
        assert c.client.writes[g].completed_ns > acks[c.nodes[0].node]


def check_ec(c, data, k, m, addr=0):
    chunks = split_block(data, k)
    length = len(chunks[0])
    parity = encode_block(build_matrix(k, m), chunks)
    for j in range(k):
        assert c.nodes[j].storage.read(addr, length) == chunks[j]
    for p in range(m):
        assert c.nodes[k + p].storage.read(addr, length) == parity[p]
    stored = [(i, c.nodes[i].storage.read(addr, length)) for i in range(k + m)]
    assert recover(build_matrix(k, m), stored[m:]) == chunks


class TestErasureCoding:
    @pytest.mark.parametrize("km", [(2, 1), (3, 2), (6, 3)])
    @pytest.mark.parametrize("mtu", [1500, 2048, 9000])
    @pytest.mark.parametrize("interleave", [True, False])
    def test_streamed_parity_equals_batch(self, km, mtu, interleave):
        k, m = km
        c = build_cluster(k + m, link=Link(mtu_bytes=mtu, nic_latency_ns=200))
        data = data_of(k * 5000 + 3, mtu)
        g = c.client.write_ec(c.coords(k), c.coords(m, 0, k), data, interleave=interleave)
        c.run()
        rec = c.client.writes[g]
        assert rec.acks == k + m and rec.completed_ns is not None
        check_ec(c, data, k, m)
        for n in c.nodes:
            assert n.nic.memory.charged == 0 and not n.handlers.groups

    def test_rs21_parity_is_xor_of_streams(self):
        c = build_cluster(3)
        data = data_of(4000)
        c.client.write_ec(c.coords(2), c.coords(1, 0, 2), data)
        c.run()
        a, b = split_block(data, 2)
        assert c.nodes[2].storage.read(0, 2000) == bytes(x ^ y for x, y in zip(a, b))

    def test_empty_pool_falls_back_to_host(self):
        c = build_cluster(5, cfg=PspinConfig(accumulator_pool_entries=0))
        data = data_of(3 * 3000)
        g = c.client.write_ec(c.coords(3), c.coords(2, 0, 3), data)
        c.run()
        check_ec(c, data, 3, 2)
        assert any(r.kind == "acc_fallback" for r in c.sim.trace)
        assert c.client.writes[g].completed_ns is not None

    def test_fallback_is_slower(self):
        lat = []
        for entries in (256, 0):
            c = build_cluster(5, cfg=PspinConfig(accumulator_pool_entries=entries))
            g = c.client.write_ec(c.coords(3), c.coords(2, 0, 3), data_of(3 * 3000))
            c.run()
            lat.append(c.client.writes[g].latency_ns)
        assert lat[1] > lat[0]

    @pytest.mark.parametrize("interleave,want", [
        (True, [(1, 0), (2, 0), (1, 1), (2, 1), (1, 2), (2, 2), (1, 3), (2, 3)]),
        (False, [(1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1), (2, 2), (2, 3)])])
    def test_emission_order(self, interleave, want):
        c = build_cluster(3)
        log = spy_sends(c.net)
        chunk = (2048 - 32 - 62 - (17 + 4 + 12)) + 3 * 2016
        c.client.write_ec(c.coords(2), c.coords(1, 0, 2), data_of(2 * chunk), interleave=interleave)
        sent = [(d, p.rdma.packet_seq) for s, d, p in log if s == c.client.node]
        assert sent == want


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 30_000), st.sampled_from(["plain", "ring", "pbt", "ec"]), st.integers(1, 5))
def test_integrity_property(size, kind, k):
    data = data_of(size, k)
    if kind == "plain":
        c = build_cluster(1)
        client_issue_write(c.client, c.coords(1), data)
        c.run()
        assert c.nodes[0].storage.read(0, size) == data
    elif kind in ("ring", "pbt"):
        strat = Strategy.RING if kind == "ring" else Strategy.PBT
        c = build_cluster(k)
        desc = ReplicationDescriptor(strat, 0, tuple(c.coords(k)[1:]))
        client_issue_write(c.client, c.coords(k), data, desc)
        c.run()
        assert all(n.storage.read(0, size) == data for n in c.nodes)
    else:
        m = 1 + k % 3
        c = build_cluster(k + m)
        desc = EcDescriptor(k, m, EcRole.DATA, 0, tuple(c.coords(m, 0, k)))
        client_issue_write(c.client, c.coords(k + m), data, desc)
        c.run()
        check_ec(c, data, k, m)


class TestCleanup:
    def test_stopped_client_entry_freed_once(self):
        c = build_cluster(1, cfg=PspinConfig(cleanup_timeout_ns=50_000))
        node = c.nodes[0]
        baseline = node.nic.memory.charged
        g = c.client.write(c.coord(0), data_of(10_000), stop_after=2)
        c.run()
        assert c.client.writes[g].completed_ns is None
        assert [(e[1], e[2]) for e in node.nic.host_events] == [("write_interrupted", g)]
        assert [r.greq_id for r in c.sim.trace if r.kind == "cleanup"] == [g]
        assert node.nic.memory.charged == baseline and len(node.nic.req_table) == 0
        assert node.nic.cleanup_scan(now=c.sim.now + 10**9) == []

    def test_stopped_ec_write_releases_accumulators(self):
        c = build_cluster(5, cfg=PspinConfig(cleanup_timeout_ns=50_000))
        c.client.write_ec(c.coords(3), c.coords(2, 0, 3), data_of(3 * 6000), stop_after=4)
        c.run()
        for n in c.nodes:
            assert n.nic.memory.charged == 0 and n.state.pool.in_use == 0
