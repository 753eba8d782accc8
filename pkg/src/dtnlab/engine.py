"""Slotted-time simulation of the cell-partitioned network.

Slot order: arrivals, per-cell decisions on the position snapshot, simultaneous
execution (all sends are popped before any receive is pushed, so nothing is
forwarded in the slot it arrives), statistics, then one mobility step.

Randomness comes from independent named substreams of the root seed, drawn
in fixed-size chunks, so a run is a pure function of (config, seed).
"""

from __future__ import annotations

import concurrent.futures as cf
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .analysis import CapacityReport, RadioParams, capacity
from .mobility import MobilityModel, sample_stationary
from .scheduler import Kind, SchedulerParams, decide_core, occupancy
from .topology import CellTopology

CHUNK = 4096
DEFAULT_WARMUP_FRACTION = 0.1
DEFAULT_BLOCKS = 20

STREAM_PLACEMENT = 0
STREAM_ARRIVALS = 1
STREAM_MOBILITY = 2
STREAM_SCHEDULING = 3

ERR_NONE = 0
ERR_HOPS = 1
ERR_OWN_PACKET = 2
ERR_POOL = 3
ERR_WRONG_DESTINATION = 4
ERR_CONSERVATION = 5
ERROR_TEXT = {
    ERR_HOPS: "packet delivered after more than two hops",
    ERR_OWN_PACKET: "a source received its own packet",
    ERR_POOL: "packet pool exhausted",
    ERR_WRONG_DESTINATION: "packet delivered to a node other than its destination",
    ERR_CONSERVATION: "created != queued + delivered",
}

# indices into the scalar counter vector
C_CREATED, C_DELIVERED, C_LIVE = 0, 1, 2
C_M_ARRIVALS, C_M_DELIVERED, C_M_DELAY, C_M_ENERGY, C_M_ENERGY_SCHED, C_M_BACKLOG = 3, 4, 5, 6, 7, 8
C_M_HOP1, C_M_HOP2 = 9, 10
N_COUNTERS = 11


def substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


@njit(cache=True)
def _push(pid, key, nxt, qhead, qtail, qlen):
    nxt[pid] = -1
    if qtail[key] < 0:
        qhead[key] = pid
    else:
        nxt[qtail[key]] = pid
    qtail[key] = pid
    qlen[key] += 1


@njit(cache=True)
def _pop(key, nxt, qhead, qtail, qlen):
    pid = qhead[key]
    qhead[key] = nxt[pid]
    if qhead[key] < 0:
        qtail[key] = -1
    qlen[key] -= 1
    return pid


@njit(cache=True)
def _simulate_chunk(
    t0, n_slots, warmup, measured, n_blocks, trace_interval,
    pos, partner, adj_ptr, adj_idx, cdf, last,
    arrivals, u_sched, u_move,
    delta, g_relay, g_adj_direct, g_adj_relay, adjacent_first, r1, r2, saturated,
    birth, hops, src, nxt, free_stack, free_top,
    qhead, qtail, qlen,
    counters, kind_sched, kind_active, kind_packets,
    relay_deliver, delivered_by_src,
    blk_arrivals, blk_delivered, blk_delay, blk_energy, blk_backlog,
    trace,
):
    N = pos.size
    C = adj_ptr.size - 1
    occ_start = np.zeros(C + 1, dtype=np.int64)
    occ = np.zeros(N, dtype=np.int64)
    pop_pid = np.empty(C * max(r1, 1), dtype=np.int64)
    pop_rx = np.empty(C * max(r1, 1), dtype=np.int64)
    pop_kind = np.empty(C * max(r1, 1), dtype=np.int64)
    pop_tx = np.empty(C * max(r1, 1), dtype=np.int64)
    u = np.empty(4)
    for s in range(n_slots):
        t = t0 + s
        meas = t >= warmup
        blk = (t - warmup) * n_blocks // measured if meas else 0
        # 1. arrivals
        for i in range(N):
            key = i * N + partner[i]
            a = arrivals[s, i]
            if saturated:
                a = r1 - qlen[key]
                if a < 0:
                    a = 0
            for _ in range(a):
                if free_top[0] == 0:
                    return ERR_POOL
                free_top[0] -= 1
                pid = free_stack[free_top[0]]
                birth[pid] = t
                hops[pid] = 0
                src[pid] = i
                _push(pid, key, nxt, qhead, qtail, qlen)
            counters[C_CREATED] += a
            counters[C_LIVE] += a
            if meas:
                counters[C_M_ARRIVALS] += a
                blk_arrivals[blk] += a
        # 2. decisions on the snapshot, and the send half of execution
        occupancy(pos, C, occ_start, occ)
        n_pop = 0
        for c in range(C):
            for k in range(4):
                u[k] = u_sched[s, c, k]
            kind, tx, rx, rate = decide_core(
                c, occ_start, occ, pos, partner, adj_ptr, adj_idx, u,
                delta, g_relay, g_adj_direct, g_adj_relay, adjacent_first, r1, r2,
            )
            if kind == 0:
                continue
            if kind == 3 or kind == 6:
                key = tx * N + rx
            else:
                key = tx * N + partner[tx]
            sent = qlen[key]
            if sent > rate:
                sent = rate
            for _ in range(sent):
                pop_pid[n_pop] = _pop(key, nxt, qhead, qtail, qlen)
                pop_rx[n_pop] = rx
                pop_tx[n_pop] = tx
                pop_kind[n_pop] = kind
                n_pop += 1
            if meas:
                kind_sched[kind] += 1
                counters[C_M_ENERGY_SCHED] += 1
                if sent > 0:
                    kind_active[kind] += 1
                    kind_packets[kind] += sent
                    counters[C_M_ENERGY] += 1
                    blk_energy[blk] += 1
        # 3. the receive half
        for k in range(n_pop):
            pid = pop_pid[k]
            rx = pop_rx[k]
            kind = pop_kind[k]
            hops[pid] += 1
            dst = partner[src[pid]]
            if kind == 2 or kind == 5:
                if rx == src[pid]:
                    return ERR_OWN_PACKET
                _push(pid, rx * N + dst, nxt, qhead, qtail, qlen)
                continue
            if rx != dst:
                return ERR_WRONG_DESTINATION
            if hops[pid] > 2:
                return ERR_HOPS
            counters[C_DELIVERED] += 1
            counters[C_LIVE] -= 1
            if meas:
                counters[C_M_DELIVERED] += 1
                counters[C_M_DELAY] += t - birth[pid]
                blk_delivered[blk] += 1
                blk_delay[blk] += t - birth[pid]
                delivered_by_src[src[pid]] += 1
                if hops[pid] == 1:
                    counters[C_M_HOP1] += 1
                else:
                    counters[C_M_HOP2] += 1
                if kind == 3 or kind == 6:
                    relay_deliver[pop_tx[k], rx] += 1
            free_stack[free_top[0]] = pid
            free_top[0] += 1
        # 4. statistics
        if meas:
            counters[C_M_BACKLOG] += counters[C_LIVE]
            blk_backlog[blk] += counters[C_LIVE]
        if (t + 1) % trace_interval == 0:
            trace[(t + 1) // trace_interval - 1] = counters[C_LIVE]
        # 5. mobility
        for i in range(N):
            row = pos[i]
            x = u_move[s, i]
            lo = 0
            hi = C - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[row, mid] > x:
                    hi = mid
                else:
                    lo = mid + 1
            if lo > last[row]:
                lo = last[row]
            pos[i] = lo
    return ERR_NONE


class InvariantViolation(RuntimeError):
    pass


@dataclass
class SimConfig:
    topology: CellTopology
    mobility: MobilityModel
    radio: RadioParams
    n_users: int
    lam: float
    params: SchedulerParams
    slots: int
    seed: int = 0
    warmup: int | None = None
    saturated: bool = False
    trace_interval: int | None = None
    n_blocks: int = DEFAULT_BLOCKS

    def __post_init__(self):
        if self.n_users < 2 or self.n_users % 2:
            raise ValueError("number of users must be even and at least 2")
        if self.mobility.n_cells != self.topology.n_cells:
            raise ValueError("mobility and topology disagree on the number of cells")
        if not 0.0 <= self.lam <= self.radio.A_max:
            raise ValueError("lambda must lie in [0, A_max]")
        if self.slots < 1:
            raise ValueError("slots must be positive")
        if self.warmup is None:
            self.warmup = int(self.slots * DEFAULT_WARMUP_FRACTION)
        if not 0 <= self.warmup < self.slots:
            raise ValueError("warmup must lie in [0, slots)")
        if self.trace_interval is None:
            self.trace_interval = max(1, self.slots // 1000)
        if self.n_blocks < 2:
            raise ValueError("need at least two blocks")


def _batch_se(values: np.ndarray) -> float:
    if values.size < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(values.size))


@dataclass
class SimStats:
    slots: int
    warmup: int
    n_users: int
    lam: float
    seed: int
    created: int
    delivered_total: int
    final_backlog: int
    arrivals: int
    delivered: int
    delay_sum: int
    backlog_sum: int
    energy: int
    energy_scheduled: int
    hop1: int
    hop2: int
    kind_scheduled: dict
    kind_active: dict
    kind_packets: dict
    delivered_by_src: np.ndarray = field(repr=False)
    relay_deliver: np.ndarray = field(repr=False)
    trace: np.ndarray = field(repr=False)
    trace_interval: int = 1
    blocks: dict = field(default_factory=dict, repr=False)
    error: int = ERR_NONE

    @property
    def measured(self) -> int:
        return self.slots - self.warmup

    @property
    def delivered_rate(self) -> float:
        """Delivered packets per node per slot."""
        return self.delivered / (self.measured * self.n_users)

    @property
    def per_node_throughput(self) -> np.ndarray:
        return self.delivered_by_src / self.measured

    @property
    def avg_delay(self) -> float:
        return self.delay_sum / self.delivered if self.delivered else math.nan

    @property
    def avg_backlog(self) -> float:
        return self.backlog_sum / self.measured

    @property
    def avg_energy(self) -> float:
        """Transmissions that moved at least one packet, per node per slot."""
        return self.energy / (self.measured * self.n_users)

    @property
    def avg_energy_scheduled(self) -> float:
        """Scheduled (non-idle) opportunities per node per slot, whether or not a packet moved."""
        return self.energy_scheduled / (self.measured * self.n_users)

    def rate_per_node(self, kind: Kind, what: str = "packets") -> float:
        table = {"packets": self.kind_packets, "active": self.kind_active, "scheduled": self.kind_scheduled}[what]
        return table[kind.name] / (self.measured * self.n_users)

    def backlog_at(self, slot: int) -> int:
        """Total backlog after ``slot`` slots have run (slot must be a multiple of the trace interval)."""
        if slot % self.trace_interval:
            raise ValueError(f"slot {slot} is not on the trace grid (interval {self.trace_interval})")
        return int(self.trace[slot // self.trace_interval - 1])

    def block_means(self, name: str) -> np.ndarray:
        return self.blocks[name] / self.blocks["length"]

    def second_half_backlog(self) -> float:
        b = self.blocks
        h = b["length"].size // 2
        return float(b["backlog"][h:].sum() / b["length"][h:].sum())

    def se(self, name: str) -> float:
        """Batch-means standard error of a per-slot block quantity."""
        return _batch_se(self.block_means(name))

    def delay_se(self) -> float:
        b = self.blocks
        ok = b["delivered"] > 0
        return _batch_se(b["delay"][ok] / b["delivered"][ok])

    def little_ratio(self) -> float:
        """(lambda * D) / (backlog per node); close to 1 in steady state."""
        return self.arrivals / (self.measured * self.n_users) * self.avg_delay / (self.avg_backlog / self.n_users)

    def relay_type_counts(self) -> np.ndarray:
        """Relay deliveries broken out by destination (the N-2 commodities of every relay)."""
        return self.relay_deliver.sum(axis=0)

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "seed": self.seed,
            "slots": self.slots,
            "warmup": self.warmup,
            "delivered_rate": self.delivered_rate,
            "avg_delay": self.avg_delay,
            "avg_backlog": self.avg_backlog,
            "avg_energy": self.avg_energy,
            "avg_energy_scheduled": self.avg_energy_scheduled,
            **{f"n_{k}": v for k, v in self.kind_active.items()},
        }


def _grow(pool: dict, needed: int) -> None:
    free = pool["free_top"][0]
    if free >= needed:
        return
    cap = pool["birth"].size
    new_cap = max(2 * cap, cap + needed - free)
    for name, dtype in (("birth", np.int64), ("hops", np.int64), ("src", np.int64), ("nxt", np.int64)):
        arr = np.zeros(new_cap, dtype=dtype)
        arr[:cap] = pool[name]
        pool[name] = arr
    stack = np.empty(new_cap, dtype=np.int64)
    stack[:free] = pool["free_stack"][:free]
    stack[free:free + new_cap - cap] = np.arange(cap, new_cap)
    pool["free_stack"] = stack
    pool["free_top"][0] = free + new_cap - cap


def run(cfg: SimConfig, raise_on_violation: bool = True) -> SimStats:
    N, C = cfg.n_users, cfg.topology.n_cells
    radio = cfg.radio
    r_arr = substream(cfg.seed, STREAM_ARRIVALS)
    r_mob = substream(cfg.seed, STREAM_MOBILITY)
    r_sch = substream(cfg.seed, STREAM_SCHEDULING)
    pos = sample_stationary(cfg.mobility, N, substream(cfg.seed, STREAM_PLACEMENT))
    partner = np.arange(N, dtype=np.int64) ^ 1
    adj_ptr, adj_idx = cfg.topology.csr()
    cdf, last = cfg.mobility.cdf()
    cdf = np.ascontiguousarray(cdf)

    init = 1024
    pool = {
        "birth": np.zeros(init, dtype=np.int64),
        "hops": np.zeros(init, dtype=np.int64),
        "src": np.zeros(init, dtype=np.int64),
        "nxt": np.zeros(init, dtype=np.int64),
        "free_stack": np.arange(init, dtype=np.int64)[::-1].copy(),
        "free_top": np.array([init], dtype=np.int64),
    }
    qhead = np.full(N * N, -1, dtype=np.int64)
    qtail = np.full(N * N, -1, dtype=np.int64)
    qlen = np.zeros(N * N, dtype=np.int64)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    kind_sched = np.zeros(len(Kind), dtype=np.int64)
    kind_active = np.zeros(len(Kind), dtype=np.int64)
    kind_packets = np.zeros(len(Kind), dtype=np.int64)
    relay_deliver = np.zeros((N, N), dtype=np.int64)
    delivered_by_src = np.zeros(N, dtype=np.int64)
    nb = cfg.n_blocks
    blk = {k: np.zeros(nb, dtype=np.int64) for k in ("arrivals", "delivered", "delay", "energy", "backlog")}
    trace = np.zeros(cfg.slots // cfg.trace_interval, dtype=np.int64)
    measured = cfg.slots - cfg.warmup
    per_slot_new = N * (radio.R1 if cfg.saturated else radio.A_max)
    p_arr = cfg.lam / radio.A_max
    p = cfg.params

    err = ERR_NONE
    t0 = 0
    while t0 < cfg.slots:
        n = min(CHUNK, cfg.slots - t0)
        if cfg.saturated or cfg.lam == 0:
            arrivals = np.zeros((n, N), dtype=np.int64)
        else:
            arrivals = r_arr.binomial(radio.A_max, p_arr, size=(n, N)).astype(np.int64)
        u_sched = r_sch.random((n, C, 4))
        u_move = r_mob.random((n, N))
        _grow(pool, n * per_slot_new)
        err = _simulate_chunk(
            t0, n, cfg.warmup, measured, nb, cfg.trace_interval,
            pos, partner, adj_ptr, adj_idx, cdf, last,
            arrivals, u_sched, u_move,
            p.delta, p.g_relay, p.g_adj_direct, p.g_adj_relay, p.adjacent_first,
            radio.R1, radio.R2, cfg.saturated,
            pool["birth"], pool["hops"], pool["src"], pool["nxt"], pool["free_stack"], pool["free_top"],
            qhead, qtail, qlen,
            counters, kind_sched, kind_active, kind_packets,
            relay_deliver, delivered_by_src,
            blk["arrivals"], blk["delivered"], blk["delay"], blk["energy"], blk["backlog"],
            trace,
        )
        if err == ERR_NONE and counters[C_CREATED] != counters[C_DELIVERED] + qlen.sum():
            err = ERR_CONSERVATION
        if err != ERR_NONE:
            if raise_on_violation:
                raise InvariantViolation(ERROR_TEXT[err])
            break
        t0 += n

    blocks = {k: v.astype(float) for k, v in blk.items()}
    # block b holds the slots with b*measured <= (t - warmup)*nb < (b+1)*measured
    blocks["length"] = np.diff([-(-b * measured // nb) for b in range(nb + 1)]).astype(float)
    names = [k.name for k in Kind]
    return SimStats(
        slots=cfg.slots,
        warmup=cfg.warmup,
        n_users=N,
        lam=cfg.lam,
        seed=cfg.seed,
        created=int(counters[C_CREATED]),
        delivered_total=int(counters[C_DELIVERED]),
        final_backlog=int(counters[C_LIVE]),
        arrivals=int(counters[C_M_ARRIVALS]),
        delivered=int(counters[C_M_DELIVERED]),
        delay_sum=int(counters[C_M_DELAY]),
        backlog_sum=int(counters[C_M_BACKLOG]),
        energy=int(counters[C_M_ENERGY]),
        energy_scheduled=int(counters[C_M_ENERGY_SCHED]),
        hop1=int(counters[C_M_HOP1]),
        hop2=int(counters[C_M_HOP2]),
        kind_scheduled=dict(zip(names, kind_sched.tolist())),
        kind_active=dict(zip(names, kind_active.tolist())),
        kind_packets=dict(zip(names, kind_packets.tolist())),
        delivered_by_src=delivered_by_src,
        relay_deliver=relay_deliver,
        trace=trace,
        trace_interval=cfg.trace_interval,
        blocks=blocks,
        error=err,
    )


def report_for(cfg: SimConfig) -> CapacityReport:
    return capacity(cfg.topology, cfg.mobility.pi, cfg.n_users, cfg.radio)


def _run_job(job):
    build, lam, seed = job
    return lam, seed, run(build(lam, seed))


def sweep_threads() -> int:
    try:
        return max(1, int(os.environ.get("DTNLAB_THREADS", "1")))
    except ValueError:
        return 1


def sweep(build, lambdas, seeds, threads: int | None = None) -> list[tuple[float, int, SimStats]]:
    """One independent run per (lambda, seed); ``build(lam, seed)`` returns a SimConfig.

    ``build`` must be picklable when more than one worker is used.
    """
    lambdas = [float(x) for x in lambdas]
    if any(x <= 0 for x in lambdas):
        raise ValueError("sweep lambdas must be positive")
    jobs = [(build, lam, int(s)) for lam in lambdas for s in seeds]
    threads = sweep_threads() if threads is None else threads
    if threads <= 1 or len(jobs) == 1:
        return [_run_job(j) for j in jobs]
    with cf.ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_run_job, jobs))


def aggregate(results: list[tuple[float, int, SimStats]], field_names=("delivered_rate", "avg_delay", "avg_backlog", "avg_energy")) -> list[dict]:
    """Mean and 95% normal-approximation half-width per lambda across seeds."""
    by_lam: dict[float, list[SimStats]] = {}
    for lam, _, st in results:
        by_lam.setdefault(lam, []).append(st)
    rows = []
    for lam in sorted(by_lam):
        runs = by_lam[lam]
        row = {"lambda": lam, "runs": len(runs)}
        for f in field_names:
            v = np.array([getattr(s, f) for s in runs], dtype=float)
            row[f"{f}_mean"] = float(v.mean())
            row[f"{f}_ci95"] = float(1.96 * v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
        rows.append(row)
    return rows
