"""Scenario runner: builds simulations, collects result rows, evaluates trend checks."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import baselines
from .baselines import Kind, StrategyConfig
from .netsim import HostModel, Link
from .policies import AckMode, build_cluster
from .pspin import HandlerCost, HandlerCostTable, HandlerKind, PspinConfig, handler_budget_ns, hpus_needed
from .wire import Strategy

KiB = 1024
MiB = 1 << 20

SPIN_STRATEGIES = ("spin", "spin_ring", "spin_pbt", "spin_triec")
BASELINE_KINDS = {k.value: k for k in Kind}
STRATEGIES = SPIN_STRATEGIES + tuple(BASELINE_KINDS) + ("model",)
CHUNKED = {"hyperloop", "cpu_ring", "cpu_pbt"}
METRICS = ("latency", "goodput", "ec_bandwidth", "hpus")

COLUMNS = ("preset", "strategy", "metric", "size_bytes", "k", "m", "chunk_bytes", "line_rate_bps",
           "latency_ns", "goodput_bps", "achievable_goodput_bps", "bandwidth_bps", "packets",
           "hh_count", "hh_mean_ns", "hh_max_ns", "ph_count", "ph_mean_ns", "ph_max_ns",
           "ch_count", "ch_mean_ns", "ch_max_ns", "denials", "avg_handler_ns", "hpus_needed")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Scenario:
    strategy: str = "spin"
    write_size_bytes: int = 4 * KiB
    k: int = 1
    m: int = 0
    metric: str = "latency"
    mtu: int = 2048
    line_rate_bps: float = 400e9
    link_latency_ns: float = 20.0
    nic_latency_ns: float = 200.0
    pcie_rtt_ns: float = 400.0
    rpc_sw_overhead_ns: float = 500.0
    dma_setup_ns: float = 100.0
    validate_ns: float = 200.0
    memcpy_bandwidth_bps: float | None = None
    chunk_bytes: int | None = None
    hpus: int = 32
    accumulator_pool_entries: int = 256
    cost_overrides: tuple[tuple[str, str, str, float], ...] = ()
    ack_mode: str = "full_chain"
    interleave: bool = True
    accel_rate_bps: float | None = None
    avg_handler_ns: float | None = None
    stream_bytes: int = 16 * MiB
    max_stream_writes: int = 2048
    seed: int = 0
    repetitions: int = 1
    preset: str = ""

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.write_size_bytes < 0 or self.k < 1 or self.m < 0:
            raise ConfigError("write_size_bytes >= 0, k >= 1, m >= 0 required")
        if self.strategy in ("spin_triec", "inec_triec") and self.m < 1:
            raise ConfigError(f"{self.strategy} needs m >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.ack_mode not in ("full_chain", "primary"):
            raise ConfigError(f"unknown ack_mode {self.ack_mode!r}")

    @property
    def link(self) -> Link:
        return Link(self.line_rate_bps, self.link_latency_ns, self.mtu, self.nic_latency_ns)

    @property
    def host_model(self) -> HostModel:
        return HostModel(self.pcie_rtt_ns, self.memcpy_bandwidth_bps or self.line_rate_bps,
                         self.rpc_sw_overhead_ns, self.dma_setup_ns, self.validate_ns)

    @property
    def pspin_config(self) -> PspinConfig:
        clusters = 4 if self.hpus % 4 == 0 else 1
        return PspinConfig(clusters=clusters, hpus_per_cluster=self.hpus // clusters,
                           accumulator_pool_entries=self.accumulator_pool_entries)

    @property
    def cost_table(self) -> HandlerCostTable:
        table = HandlerCostTable()
        for policy, kind, attr, value in self.cost_overrides:
            hk = HandlerKind(kind)
            cur = table.lookup(policy, hk)
            name = {"fixed": "fixed_instructions", "per_byte": "per_byte_instructions",
                    "ipc": "base_ipc"}[attr]
            table = table.with_entry(policy, hk, dataclasses.replace(cur, **{name: value}))
        return table


# -- single runs -----------------------------------------------------------

def _spin_cluster(sc: Scenario, n_storage: int, record_trace: bool = False):
    return build_cluster(n_storage, link=sc.link, host_model=sc.host_model, cfg=sc.pspin_config,
                         costs=sc.cost_table, ack_mode=AckMode(sc.ack_mode),
                         record_trace=record_trace)


def _data(size: int, seed: int) -> bytes:
    return np.random.default_rng(seed).bytes(size)


def _issue_spin(sc: Scenario, cluster, data: bytes, addr: int = 0) -> int:
    client = cluster.client
    if sc.strategy == "spin":
        return client.write(cluster.coord(0, addr), data)
    if sc.strategy in ("spin_ring", "spin_pbt"):
        strat = Strategy.RING if sc.strategy == "spin_ring" else Strategy.PBT
        return client.write_replicated(cluster.coords(sc.k, addr), data, strat)
    return client.write_ec(cluster.coords(sc.k, addr), cluster.coords(sc.m, addr, sc.k), data,
                           interleave=sc.interleave)


def _n_storage(sc: Scenario) -> int:
    if sc.strategy == "spin":
        return 1
    if sc.strategy == "spin_triec":
        return sc.k + sc.m
    return sc.k


def _write_bytes(sc: Scenario) -> int:
    # EC block sizes are per data node
    return sc.write_size_bytes * sc.k if sc.strategy == "spin_triec" else sc.write_size_bytes


def _handler_stats(cluster) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for kind in HandlerKind:
        count = sum(n.nic.stats[kind].count for n in cluster.nodes)
        total = sum(n.nic.stats[kind].total_ns for n in cluster.nodes)
        mx = max((n.nic.stats[kind].max_ns for n in cluster.nodes), default=0.0)
        key = kind.value.lower()
        out[f"{key}_count"] = count
        out[f"{key}_mean_ns"] = total / count if count else 0.0
        out[f"{key}_max_ns"] = mx
    return out


def _denials(cluster) -> int:
    return sum(w.nacks for c in cluster.clients for w in c.writes.values())


def _spin_latency(sc: Scenario, seed: int) -> dict[str, Any]:
    cluster = _spin_cluster(sc, _n_storage(sc))
    greq = _issue_spin(sc, cluster, _data(_write_bytes(sc), seed))
    cluster.run()
    rec = cluster.client.writes[greq]
    row = dict(latency_ns=rec.latency_ns, packets=cluster.net.packets_sent, denials=_denials(cluster))
    row.update(_handler_stats(cluster))
    return row


def _spin_stream(sc: Scenario, seed: int, n_writes: int) -> tuple[Any, list[float]]:
    """Issue ``n_writes`` back-to-back; returns the cluster and sorted completion times."""
    cluster = _spin_cluster(sc, _n_storage(sc))
    size = _write_bytes(sc)
    data = _data(size, seed)
    for i in range(n_writes):
        _issue_spin(sc, cluster, data, addr=i * size)
    cluster.run()
    done = sorted(w.completed_ns for w in cluster.client.writes.values() if w.completed_ns is not None)
    return cluster, done


def _spin_goodput(sc: Scenario, seed: int) -> dict[str, Any]:
    """Back-to-back writes from t=0; elapsed ends at the last completion."""
    size = max(sc.write_size_bytes, 1)
    n = min(sc.max_stream_writes, max(64, math.ceil(sc.stream_bytes / size)))
    cluster, done = _spin_stream(sc, seed, n)
    primary = cluster.nodes[0].node
    st = cluster.net.stats[(cluster.client.node, primary)]
    framing = (n * sc.write_size_bytes) / st.bytes_injected if st.bytes_injected else 0.0
    row = dict(goodput_bps=len(done) * sc.write_size_bytes * 8e9 / done[-1] if done else 0.0,
               achievable_goodput_bps=sc.line_rate_bps * framing,
               latency_ns=done[-1] / len(done) if done else None, packets=cluster.net.packets_sent,
               denials=_denials(cluster))
    row.update(_handler_stats(cluster))
    return row


def ec_window(block_bytes: int) -> int:
    return max(2, math.ceil(MiB / max(block_bytes, 1)))


def _spin_ec_bandwidth(sc: Scenario, seed: int) -> dict[str, Any]:
    w = ec_window(sc.write_size_bytes)
    cluster, done = _spin_stream(sc, seed, w)
    elapsed = done[-1]
    generated = len(done) * sc.write_size_bytes * (sc.k + sc.m)
    row = dict(bandwidth_bps=generated * 8e9 / elapsed, latency_ns=elapsed,
               packets=cluster.net.packets_sent, denials=_denials(cluster))
    row.update(_handler_stats(cluster))
    return row


def _inec_ec_bandwidth(sc: Scenario, seed: int) -> dict[str, Any]:
    """Window of back-to-back INEC-TriEC writes on one testbed."""
    w = ec_window(sc.write_size_bytes)
    lat = baselines.run_inec_triec_window(sc.write_size_bytes, sc.k, sc.m, w, seed=seed,
                                          accel_rate_bps=sc.accel_rate_bps, link=sc.link,
                                          host_model=sc.host_model, record_trace=False)
    generated = w * sc.write_size_bytes * (sc.k + sc.m)
    return dict(bandwidth_bps=generated * 8e9 / lat, latency_ns=lat)


def _baseline_latency(sc: Scenario, seed: int) -> dict[str, Any]:
    kind = BASELINE_KINDS[sc.strategy]
    tb_kw = dict(link=sc.link, host_model=sc.host_model, record_trace=False)
    if sc.strategy in CHUNKED and sc.chunk_bytes is None:
        res, sweep = baselines.best_chunked(kind, sc.write_size_bytes, sc.k, seed=seed, **tb_kw)
        chunk = sweep.best_chunk
    else:
        cfg = StrategyConfig(kind, sc.k, sc.m, sc.chunk_bytes, accel_rate_bps=sc.accel_rate_bps)
        res = baselines.run_strategy(cfg, sc.write_size_bytes, seed=seed, **tb_kw)
        chunk = sc.chunk_bytes
    return dict(latency_ns=res.latency_ns, chunk_bytes=chunk, packets=res.testbed.net.packets_sent)


def _model_row(sc: Scenario) -> dict[str, Any]:
    avg = sc.avg_handler_ns if sc.avg_handler_ns is not None else handler_budget_ns(
        sc.mtu, sc.line_rate_bps, sc.hpus)
    return dict(avg_handler_ns=avg, hpus_needed=hpus_needed(avg, sc.mtu, sc.line_rate_bps))


def _mean_rows(rows: list[dict[str, Any]]) -> dict[str, Any]:
    if len(rows) == 1:
        return rows[0]
    out = {}
    for key in rows[0]:
        vals = [r[key] for r in rows]
        out[key] = sum(vals) / len(vals) if all(isinstance(v, (int, float)) and v is not None
                                                for v in vals) else vals[0]
    return out


def run_scenario(sc: Scenario) -> dict[str, Any]:
    if sc.metric == "hpus" or sc.strategy == "model":
        body = _model_row(sc)
    else:
        reps = []
        for rep in range(sc.repetitions):
            seed = sc.seed + rep
            if sc.strategy in SPIN_STRATEGIES:
                fn = {"latency": _spin_latency, "goodput": _spin_goodput,
                      "ec_bandwidth": _spin_ec_bandwidth}[sc.metric]
            elif sc.metric == "ec_bandwidth" and sc.strategy == "inec_triec":
                fn = _inec_ec_bandwidth
            elif sc.metric == "latency":
                fn = _baseline_latency
            else:
                raise ConfigError(f"metric {sc.metric!r} not supported for {sc.strategy!r}")
            reps.append(fn(sc, seed))
        body = _mean_rows(reps)
    row = {c: None for c in COLUMNS}
    row.update(preset=sc.preset, strategy=sc.strategy, metric=sc.metric,
               size_bytes=sc.write_size_bytes, k=sc.k, m=sc.m, chunk_bytes=sc.chunk_bytes,
               line_rate_bps=sc.line_rate_bps)
    row.update(body)
    return row


SWEEP_DIMENSIONS = {"write_size": "write_size_bytes", "k": "k", "m": "m",
                    "chunk_bytes": "chunk_bytes", "hpus": "hpus"}


def sweep(sc: Scenario, dimension: str, values: Iterable[Any]) -> list[dict[str, Any]]:
    if dimension not in SWEEP_DIMENSIONS:
        raise ConfigError(f"cannot sweep over {dimension!r}")
    attr = SWEEP_DIMENSIONS[dimension]
    return [run_scenario(dataclasses.replace(sc, **{attr: v})) for v in values]


# -- presets ------------------------------------------------------------------

REPLICATION_STRATEGIES = ("rdma_flat", "hyperloop", "cpu_ring", "cpu_pbt", "spin_ring", "spin_pbt")


def preset_scenarios(name: str, seed: int = 0) -> list[Scenario]:
    S = lambda **kw: Scenario(preset=name, seed=seed, **kw)  # noqa: E731
    out: list[Scenario] = []
    if name == "fig6":
        for st in ("raw", "rpc", "rpc_rdma", "spin"):
            for kib in (1, 4, 16, 64, 256, 512, 1024):
                out.append(S(strategy=st, write_size_bytes=kib * KiB))
    elif name == "fig10":
        for k in (2, 4):
            for st in REPLICATION_STRATEGIES:
                for kib in (1, 4, 16, 64, 256, 512):
                    out.append(S(strategy=st, k=k, write_size_bytes=kib * KiB))
        for st in ("spin_ring", "spin_pbt"):
            for kib in (1, 2, 4, 8, 16, 64, 256, 512):
                out.append(S(strategy=st, k=4, write_size_bytes=kib * KiB, metric="goodput"))
    elif name == "fig11":
        for kib in (4, 512):
            for st in REPLICATION_STRATEGIES:
                for k in range(2, 9):
                    out.append(S(strategy=st, k=k, write_size_bytes=kib * KiB))
    elif name == "fig13":
        for k, m in ((3, 2), (6, 3)):
            for st in ("spin_triec", "inec_triec"):
                for kib in (1, 4, 16, 64, 256, 512):
                    out.append(S(strategy=st, k=k, m=m, write_size_bytes=kib * KiB,
                                 line_rate_bps=100e9))
        for k, m, st in ((3, 2, "spin_triec"), (6, 3, "spin_triec"), (6, 3, "inec_triec")):
            for kib in (1, 4, 16, 64, 256, 512):
                out.append(S(strategy=st, k=k, m=m, write_size_bytes=kib * KiB,
                             line_rate_bps=100e9, metric="ec_bandwidth"))
    elif name == "fig14":
        for k, m in ((3, 2), (6, 3)):
            out.append(S(strategy="spin_triec", k=k, m=m, write_size_bytes=64 * KiB))
        for rate in (200e9, 400e9):
            for avg in _log_grid(40.0, 25_000.0, 25):
                out.append(S(strategy="model", metric="hpus", line_rate_bps=rate,
                             avg_handler_ns=avg))
    else:
        raise ConfigError(f"unknown preset {name!r}")
    return out


PRESETS = ("fig6", "fig10", "fig11", "fig13", "fig14")


def _log_grid(lo: float, hi: float, n: int) -> list[float]:
    return [round(float(v), 3) for v in np.geomspace(lo, hi, n)]


def run_preset(name: str, seed: int = 0) -> list[dict[str, Any]]:
    return [run_scenario(sc) for sc in preset_scenarios(name, seed)]


# -- output -----------------------------------------------------------------

def _fmt(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 3))
    return v


def rows_to_csv(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


def rows_to_jsonl(rows: Sequence[dict[str, Any]]) -> str:
    def clean(v):
        return round(v, 3) if isinstance(v, float) else v
    return "".join(json.dumps({c: clean(r.get(c)) for c in COLUMNS}) + "\n" for r in rows)


def output_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# -- trend checks ---------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _pick(rows, **match) -> list[dict[str, Any]]:
    return [r for r in rows if all(r.get(k) == v for k, v in match.items())]


def _one(rows, **match) -> dict[str, Any]:
    found = _pick(rows, **match)
    if len(found) != 1:
        raise LookupError(f"expected one row for {match}, found {len(found)}")
    return found[0]


def check_fig6(rows) -> list[CheckResult]:
    lat = lambda st, size: _one(rows, strategy=st, size_bytes=size, metric="latency")["latency_ns"]  # noqa: E731
    small = lat("spin", KiB) / lat("raw", KiB) - 1
    large = [lat("spin", s) / lat("raw", s) - 1 for s in (512 * KiB, 1024 * KiB)]
    return [
        CheckResult("auth_overhead_1KiB", small <= 0.30, f"sPIN/raw - 1 = {small:.3f} (<= 0.30)"),
        CheckResult("auth_overhead_large", max(large) <= 0.05,
                    "sPIN/raw - 1 at 512 KiB, 1 MiB = " + ", ".join(f"{g:.3f}" for g in large)
                    + " (<= 0.05)"),
    ]


def check_fig10(rows) -> list[CheckResult]:
    out = []
    worst = []
    for kib in (1, 4, 16):
        cand = _pick(rows, k=2, size_bytes=kib * KiB, metric="latency")
        best = min(cand, key=lambda r: r["latency_ns"])
        worst.append(f"{kib}KiB:{best['strategy']}")
        if best["strategy"] != "rdma_flat":
            out.append(False)
    out_ok = not out
    results = [CheckResult("flat_min_small_k2", out_ok, "fastest " + ", ".join(worst))]
    ring = {r["size_bytes"]: r for r in _pick(rows, strategy="spin_ring", metric="goodput")}
    pbt = {r["size_bytes"]: r for r in _pick(rows, strategy="spin_pbt", metric="goodput")}
    eff = {s: r["goodput_bps"] / r["achievable_goodput_bps"] for s, r in ring.items() if s >= 8 * KiB}
    results.append(CheckResult("ring_goodput_line_rate", min(eff.values()) >= 0.95,
                               "ring goodput / achievable: "
                               + ", ".join(f"{s // KiB}KiB={v:.3f}" for s, v in sorted(eff.items()))))
    large = [s for s in ring if s >= 256 * KiB]
    ratios = {s: pbt[s]["goodput_bps"] / ring[s]["goodput_bps"] for s in large}
    results.append(CheckResult("pbt_half_goodput", all(0.4 <= v <= 0.6 for v in ratios.values()),
                               "pbt/ring: " + ", ".join(f"{s // KiB}KiB={v:.3f}"
                                                        for s, v in sorted(ratios.items()))))
    return results


def check_fig11(rows) -> list[CheckResult]:
    size = 512 * KiB
    details, ok = [], True
    for k in (2, 4):
        cand = _pick(rows, k=k, size_bytes=size, metric="latency")
        spin = _one(cand, strategy="spin_ring")["latency_ns"]
        alt = min((r for r in cand if not r["strategy"].startswith("spin")),
                  key=lambda r: r["latency_ns"])
        ratio = alt["latency_ns"] / spin
        ok &= ratio >= 1.5
        details.append(f"k={k}: {alt['strategy']}/spin_ring={ratio:.2f}")
    res = [CheckResult("ring_beats_alternatives_512KiB", ok, "; ".join(details) + " (>= 1.5)")]
    flat = sorted((r["k"], r["latency_ns"]) for r in _pick(rows, strategy="rdma_flat", size_bytes=size))
    ks = np.array([k for k, _ in flat], dtype=float)
    lats = np.array([l for _, l in flat])
    slope, icpt = np.polyfit(ks, lats, 1)
    dev = np.abs(lats - (slope * ks + icpt)) / (slope * ks + icpt)
    res.append(CheckResult("flat_linear_in_k", bool(dev.max() <= 0.15 and slope > 0),
                           f"max deviation from linear fit {dev.max():.4f} (<= 0.15)"))
    return res


def check_fig13(rows) -> list[CheckResult]:
    res = []
    details, ok = [], True
    for k, m in ((3, 2), (6, 3)):
        sizes = sorted({r["size_bytes"] for r in _pick(rows, k=k, m=m, metric="latency")})
        s0 = sizes[0]
        spin = _one(rows, strategy="spin_triec", k=k, m=m, size_bytes=s0, metric="latency")["latency_ns"]
        inec = _one(rows, strategy="inec_triec", k=k, m=m, size_bytes=s0, metric="latency")["latency_ns"]
        ok &= spin / inec <= 0.6
        details.append(f"RS({k},{m}) {s0 // KiB}KiB spin/inec={spin / inec:.2f}")
    res.append(CheckResult("triec_latency_small_block", ok, "; ".join(details) + " (<= 0.6)"))
    details, ok = [], True
    for k, m in ((3, 2), (6, 3)):
        bw = sorted((r["size_bytes"], r["bandwidth_bps"])
                    for r in _pick(rows, strategy="spin_triec", k=k, m=m, metric="ec_bandwidth"))
        vals = [b for _, b in bw]
        var = (max(vals) - min(vals)) / max(vals)
        ok &= var <= 0.15
        details.append(f"RS({k},{m}) spread={var:.3f}")
    res.append(CheckResult("triec_bandwidth_flat", ok, "; ".join(details) + " (<= 0.15)"))
    return res


def check_fig14(rows) -> list[CheckResult]:
    res = []
    targets = {(3, 2): 16681.0, (6, 3): 23018.0}
    details, ok = [], True
    for (k, m), want in targets.items():
        r = _one(rows, strategy="spin_triec", k=k, m=m, metric="latency")
        err = abs(r["ph_max_ns"] - want) / want
        ok &= err <= 0.02
        details.append(f"RS({k},{m}) full-MTU PH={r['ph_max_ns']:.0f} ns (target {want:.0f})")
    res.append(CheckResult("ec_handler_durations", ok, "; ".join(details)))
    budget = handler_budget_ns(2048, 400e9, 32)
    n = hpus_needed(budget, 2048, 400e9)
    res.append(CheckResult("budget_inverse", n == 32 and abs(budget - 1310.72) < 1e-9,
                           f"budget={budget} ns, hpus_needed(budget)={n}"))
    return res


CHECKS: dict[str, Callable[[list], list[CheckResult]]] = {
    "fig6": check_fig6, "fig10": check_fig10, "fig11": check_fig11,
    "fig13": check_fig13, "fig14": check_fig14,
}


# -- config files -----------------------------------------------------------

_SIZE_SUFFIX = {"kib": KiB, "k": KiB, "mib": MiB, "m": MiB, "b": 1}


def parse_value(raw: str, target: Any) -> Any:
    text = raw.strip()
    if target is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if target is int:
        low = text.lower().replace("_", "")
        for suffix in sorted(_SIZE_SUFFIX, key=len, reverse=True):
            if low.endswith(suffix) and low[:-len(suffix)].strip().replace(".", "", 1).isdigit():
                return int(float(low[:-len(suffix)]) * _SIZE_SUFFIX[suffix])
        return int(float(low)) if "e" in low or "." in low else int(low, 0)
    if target is float:
        return float(text)
    return text


_FIELD_TYPES = {"strategy": str, "metric": str, "ack_mode": str, "preset": str,
                "write_size_bytes": int, "k": int, "m": int, "mtu": int, "chunk_bytes": int,
                "hpus": int, "accumulator_pool_entries": int, "seed": int, "repetitions": int,
                "stream_bytes": int, "max_stream_writes": int, "interleave": bool,
                "line_rate_bps": float, "link_latency_ns": float, "nic_latency_ns": float,
                "pcie_rtt_ns": float, "rpc_sw_overhead_ns": float, "dma_setup_ns": float,
                "validate_ns": float, "memcpy_bandwidth_bps": float, "accel_rate_bps": float,
                "avg_handler_ns": float}


@dataclass
class CustomConfig:
    scenario: Scenario
    sweep_dimension: str | None = None
    sweep_values: list[Any] = field(default_factory=list)


def parse_config(text: str) -> CustomConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment.

    Scenario fields use their own names.  ``sweep = <dimension>`` with
    ``values = a, b, c`` runs a sweep; ``cost.<policy>.<HH|PH|CH>.<fixed|per_byte|ipc>``
    overrides one handler-cost entry.
    """
    kw: dict[str, Any] = {}
    costs: list[tuple[str, str, str, float]] = []
    dim, values_raw, values_line = None, None, None
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected key = value, got {body!r}", lineno)
        key, _, val = (s.strip() for s in body.partition("="))
        try:
            if key == "sweep":
                if val not in SWEEP_DIMENSIONS:
                    raise ValueError(f"cannot sweep over {val!r}")
                dim = val
            elif key == "values":
                values_raw, values_line = val, lineno
            elif key.startswith("cost."):
                parts = key.split(".")
                if len(parts) != 4 or parts[2] not in ("HH", "PH", "CH") \
                        or parts[3] not in ("fixed", "per_byte", "ipc"):
                    raise ValueError(f"malformed cost key {key!r}")
                costs.append((parts[1], parts[2], parts[3], float(val)))
            elif key in _FIELD_TYPES:
                if key in kw:
                    raise ValueError(f"duplicate key {key!r}")
                kw[key] = parse_value(val, _FIELD_TYPES[key])
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from None
    if costs:
        kw["cost_overrides"] = tuple(costs)
    try:
        sc = Scenario(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    values: list[Any] = []
    if values_raw is not None:
        if dim is None:
            raise ConfigError("values given without sweep", values_line)
        target = _FIELD_TYPES[SWEEP_DIMENSIONS[dim]]
        try:
            values = [parse_value(v, target) for v in values_raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(str(exc), values_line) from None
    return CustomConfig(sc, dim, values)


def run_custom(cfg: CustomConfig) -> list[dict[str, Any]]:
    if cfg.sweep_dimension is None:
        return [run_scenario(cfg.scenario)]
    return sweep(cfg.scenario, cfg.sweep_dimension, cfg.sweep_values)
