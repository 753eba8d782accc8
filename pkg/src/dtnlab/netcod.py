"""XOR relaying at a common relay node in a 6-node, 4-cell network.

Nodes are 0-indexed here: pairs (0,1), (2,3), (4,5), and node 4 is the relay
that codes.  Only same-cell links exist (R1 = 1, R2 = 0), placement is i.i.d.
uniform over the 2x2 grid every slot, and all sources are saturated.

A configuration is active when node 4 shares its cell with exactly one of the
four pairs below and nobody else:

====== ========= =====================
config members   (1-based)
====== ========= =====================
I      0, 3, 4   1, 4, 5
II     1, 2, 4   2, 3, 5
III    1, 3, 4   2, 4, 5
IV     0, 2, 4   1, 3, 5
====== ========= =====================

When a member sends a fresh packet to node 4, the other member overhears and
keeps a copy.  That packet waits in one of eight coded queues until node 4 meets
its destination together with the overhearing node; node 4 then broadcasts the
XOR of one packet for each of them and both decode with their stored copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .mobility import iid_matrix
from .scheduler import decide_core, occupancy
from .topology import build_grid

N_NODES = 6
N_CELLS = 4
RELAY = 4
CONFIG_NAMES = ("I", "II", "III", "IV")
CONFIG_PAIRS = np.array([[0, 3], [1, 2], [1, 3], [0, 2]], dtype=np.int64)
NU = 4 * 0.25**3 * 0.75**3
CHUNK = 1 << 16
CODED_CAP = 1 << 16

ERR_NONE = 0
ERR_DECODE = 1
ERR_CODED_OVERFLOW = 2
ERR_COPY_POOL = 3


def _arrival_table() -> np.ndarray:
    """[config, sender side] -> (target config, target side) for a fresh packet sent to the relay."""
    table = np.zeros((4, 2, 2), dtype=np.int64)
    partner = np.arange(N_NODES) ^ 1
    for k, (a, b) in enumerate(CONFIG_PAIRS):
        for side, (sender, hearer) in enumerate(((a, b), (b, a))):
            dst = partner[sender]
            for k2, pair in enumerate(CONFIG_PAIRS):
                if set(pair) == {dst, hearer}:
                    table[k, side] = (k2, int(np.flatnonzero(pair == dst)[0]))
    return table


ARRIVAL_TABLE = _arrival_table()


@njit(cache=True)
def _detect(pos):
    c = pos[RELAY]
    if pos[RELAY ^ 1] == c:
        return -1, c
    a = -1
    b = -1
    for i in range(4):
        if pos[i] == c:
            if a < 0:
                a = i
            elif b < 0:
                b = i
            else:
                return -1, c
    if b < 0:
        return -1, c
    for k in range(4):
        if CONFIG_PAIRS[k, 0] == a and CONFIG_PAIRS[k, 1] == b:
            return k, c
        if CONFIG_PAIRS[k, 0] == b and CONFIG_PAIRS[k, 1] == a:
            return k, c
    return -1, c


@njit(cache=True)
def _payload(cid):
    # splitmix64 finalizer: a stand-in for packet contents
    z = np.uint64(cid) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _nc_chunk(
    t0, n_slots, half, u_move, u_cell, delta, eps, arrival_table,
    rel_base, rel_enh, inj, dlv,
    ring, ring_head, ring_len, cq_sum, cq_sum_late, cq_max,
    copy_holder, copy_payload, coded_dst, next_cid,
    cfg_count, cfg_actions, xor_stats,
):
    N = N_NODES
    partner = np.arange(N) ^ 1
    adj_ptr = np.zeros(N_CELLS + 1, dtype=np.int64)
    adj_idx = np.zeros(1, dtype=np.int64)
    pos = np.zeros(N, dtype=np.int64)
    occ_start = np.zeros(N_CELLS + 1, dtype=np.int64)
    occ = np.zeros(N, dtype=np.int64)
    u = np.empty(4)
    p_new = (1.0 - eps) / 3.0
    for s in range(n_slots):
        t = t0 + s
        for i in range(N):
            c = int(u_move[s, i] * N_CELLS)
            pos[i] = c if c < N_CELLS else N_CELLS - 1
        occupancy(pos, N_CELLS, occ_start, occ)
        k_cfg, c_cfg = _detect(pos)
        if k_cfg >= 0:
            cfg_count[k_cfg] += 1
        for c in range(N_CELLS):
            for j in range(4):
                u[j] = u_cell[s, c, j]
            kind, tx, rx, rate = decide_core(
                c, occ_start, occ, pos, partner, adj_ptr, adj_idx, u,
                delta, 1.0, 1.0, 1.0, False, 1, 0,
            )
            if kind == 0:
                continue
            # baseline: plain 2-hop relay with saturated sources
            if kind == 1 or kind == 2:
                inj[0, tx] += 1
                if kind == 1:
                    dlv[0, tx] += 1
                else:
                    rel_base[rx, partner[tx]] += 1
            elif rel_base[tx, rx] > 0:
                rel_base[tx, rx] -= 1
                dlv[0, partner[rx]] += 1
            # enhanced: identical except for the four relay decisions touching node 4 in a configuration cell
            modified = c == c_cfg and k_cfg >= 0 and ((kind == 2 and rx == RELAY) or (kind == 3 and tx == RELAY))
            if not modified:
                if kind == 1 or kind == 2:
                    inj[1, tx] += 1
                    if kind == 1:
                        dlv[1, tx] += 1
                    else:
                        rel_enh[rx, partner[tx]] += 1
                elif rel_enh[tx, rx] > 0:
                    rel_enh[tx, rx] -= 1
                    dlv[1, partner[rx]] += 1
                continue
            a = CONFIG_PAIRS[k_cfg, 0]
            b = CONFIG_PAIRS[k_cfg, 1]
            v = u_cell[s, c, 4]
            if v < 2.0 * p_new:
                side = 0 if v < p_new else 1
                cfg_actions[k_cfg, side] += 1
                sender = a if side == 0 else b
                hearer = b if side == 0 else a
                inj[1, sender] += 1
                cid = next_cid[0]
                if cid >= copy_holder.size:
                    return ERR_COPY_POOL
                next_cid[0] += 1
                coded_dst[cid] = partner[sender]
                copy_holder[cid] = hearer
                copy_payload[cid] = _payload(cid)
                k2 = arrival_table[k_cfg, side, 0]
                q = 2 * k2 + arrival_table[k_cfg, side, 1]
                if ring_len[q] >= ring.shape[1]:
                    return ERR_CODED_OVERFLOW
                ring[q, (ring_head[q] + ring_len[q]) % ring.shape[1]] = cid
                ring_len[q] += 1
                continue
            # type C: node 4 serves the coded queues of this configuration
            cfg_actions[k_cfg, 2] += 1
            qa = 2 * k_cfg
            qb = qa + 1
            if ring_len[qa] > 0 and ring_len[qb] > 0:
                x = ring[qa, ring_head[qa]]
                y = ring[qb, ring_head[qb]]
                ring_head[qa] = (ring_head[qa] + 1) % ring.shape[1]
                ring_head[qb] = (ring_head[qb] + 1) % ring.shape[1]
                ring_len[qa] -= 1
                ring_len[qb] -= 1
                coded = _payload(x) ^ _payload(y)
                # each receiver must hold the other packet from an earlier overhearing
                if copy_holder[y] != a or copy_holder[x] != b:
                    return ERR_DECODE
                if coded_dst[x] != a or coded_dst[y] != b:
                    return ERR_DECODE
                if (coded ^ copy_payload[y]) != _payload(x) or (coded ^ copy_payload[x]) != _payload(y):
                    return ERR_DECODE
                xor_stats[0] += 1
                dlv[1, partner[a]] += 1
                dlv[1, partner[b]] += 1
            elif ring_len[qa] > 0 or ring_len[qb] > 0:
                q = qa if ring_len[qa] > 0 else qb
                x = ring[q, ring_head[q]]
                ring_head[q] = (ring_head[q] + 1) % ring.shape[1]
                ring_len[q] -= 1
                xor_stats[1] += 1
                dlv[1, partner[coded_dst[x]]] += 1
            else:
                r = a if u[1] < 0.5 else b
                if rel_enh[RELAY, r] > 0:
                    rel_enh[RELAY, r] -= 1
                    dlv[1, partner[r]] += 1
                    xor_stats[2] += 1
                else:
                    xor_stats[3] += 1
        for q in range(8):
            cq_sum[q] += ring_len[q]
            if t >= half:
                cq_sum_late[q] += ring_len[q]
            if ring_len[q] > cq_max[q]:
                cq_max[q] = ring_len[q]
    return ERR_NONE


class DecodeFailure(RuntimeError):
    pass


def detect_configuration(positions) -> tuple[int, str] | None:
    """(cell, config name) if node 4 shares its cell with exactly one configuration pair, else None."""
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != (N_NODES,):
        raise ValueError("need the positions of exactly six nodes")
    k, c = _detect(pos)
    return None if k < 0 else (int(c), CONFIG_NAMES[k])


def analytic_gain(epsilon: float, delta: float = 0.0) -> float:
    """Extra per-node throughput of nodes 0..3: 2[(1-eps)/9 - (1-delta)/12] nu."""
    return 2.0 * ((1.0 - epsilon) / 9.0 - (1.0 - delta) / 12.0) * NU


def instance_capacity() -> float:
    """Routing-only capacity (q + p)/(2 theta) of this instance."""
    theta = N_NODES / N_CELLS
    q = 1.0 - (1.0 - 1.0 / 16.0) ** 3
    p = 1.0 - 0.75**6 - 1.5 * 0.75**5
    return (q + p) / (2.0 * theta)


def action_probabilities(epsilon: float) -> tuple[float, float, float]:
    """Per-configuration-cell probabilities of (fresh a->4, fresh b->4, node-4 coded delivery)."""
    return (1 - epsilon) / 9, (1 - epsilon) / 9, (1 + 2 * epsilon) / 9


@dataclass
class NcResult:
    epsilon: float
    delta: float
    slots: int
    seed: int
    injected: np.ndarray = field(repr=False)
    delivered: np.ndarray = field(repr=False)
    config_counts: np.ndarray = field(repr=False)
    config_actions: np.ndarray = field(repr=False)
    xor_sent: int = 0
    coded_single: int = 0
    regular_fallback: int = 0
    idle_fallback: int = 0
    coded_mean: np.ndarray = field(default=None, repr=False)
    coded_mean_late: np.ndarray = field(default=None, repr=False)
    coded_max: np.ndarray = field(default=None, repr=False)
    coded_final: np.ndarray = field(default=None, repr=False)
    copies_stored: int = 0
    batch_gains: np.ndarray = field(default=None, repr=False)

    @property
    def config_frequency(self) -> np.ndarray:
        return self.config_counts / self.slots

    @property
    def config_se(self) -> float:
        return math.sqrt(NU * (1 - NU) / self.slots)

    def throughput(self, which: str = "injected") -> np.ndarray:
        """Per-node rates, row 0 baseline, row 1 enhanced."""
        return (self.injected if which == "injected" else self.delivered) / self.slots

    def gain(self, which: str = "injected") -> float:
        th = self.throughput(which)
        return float((th[1, :4] - th[0, :4]).mean())

    def gain_se(self) -> float:
        """Batch-means standard error of the injected-rate gain (one batch per chunk)."""
        b = self.batch_gains
        if b is None or b.size < 2:
            return math.nan
        return float(b.std(ddof=1) / math.sqrt(b.size))

    @property
    def analytic_gain(self) -> float:
        return analytic_gain(self.epsilon, self.delta)

    def action_frequencies(self) -> np.ndarray:
        """Empirical (fresh a, fresh b, coded delivery) probabilities per configuration-cell slot."""
        return self.config_actions.sum(axis=0) / self.config_counts.sum()

    def table(self) -> list[dict]:
        th_i = self.throughput("injected")
        th_d = self.throughput("delivered")
        return [
            {
                "node": i + 1,
                "baseline_injected": float(th_i[0, i]),
                "enhanced_injected": float(th_i[1, i]),
                "baseline_delivered": float(th_d[0, i]),
                "enhanced_delivered": float(th_d[1, i]),
            }
            for i in range(N_NODES)
        ]


def run_nc_experiment(epsilon: float, slots: int, seed: int, delta: float = 0.0) -> NcResult:
    """Baseline 2-hop relay and its coded variant on common random numbers."""
    if not 0.0 < epsilon < 0.25:
        raise ValueError("epsilon must lie in (0, 1/4)")
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if slots < 1:
        raise ValueError("slots must be positive")
    ss = np.random.SeedSequence(seed)
    r_mob, r_sch = (np.random.default_rng(s) for s in ss.spawn(2))
    rel_base = np.zeros((N_NODES, N_NODES), dtype=np.int64)
    rel_enh = np.zeros((N_NODES, N_NODES), dtype=np.int64)
    inj = np.zeros((2, N_NODES), dtype=np.int64)
    dlv = np.zeros((2, N_NODES), dtype=np.int64)
    ring = np.zeros((8, CODED_CAP), dtype=np.int64)
    ring_head = np.zeros(8, dtype=np.int64)
    ring_len = np.zeros(8, dtype=np.int64)
    cq_sum = np.zeros(8, dtype=np.int64)
    cq_late = np.zeros(8, dtype=np.int64)
    cq_max = np.zeros(8, dtype=np.int64)
    cap = 1 << 14
    copy_holder = np.full(cap, -1, dtype=np.int64)
    copy_payload = np.zeros(cap, dtype=np.uint64)
    coded_dst = np.zeros(cap, dtype=np.int64)
    next_cid = np.zeros(1, dtype=np.int64)
    cfg_count = np.zeros(4, dtype=np.int64)
    cfg_actions = np.zeros((4, 3), dtype=np.int64)
    xor_stats = np.zeros(4, dtype=np.int64)
    half = slots // 2
    batches = []
    prev = np.zeros(2, dtype=np.int64)
    t0 = 0
    while t0 < slots:
        n = min(CHUNK, slots - t0)
        if copy_holder.size - next_cid[0] < n:
            new = max(2 * copy_holder.size, next_cid[0] + n)
            copy_holder = np.concatenate([copy_holder, np.full(new - copy_holder.size, -1, dtype=np.int64)])
            copy_payload = np.concatenate([copy_payload, np.zeros(new - copy_payload.size, dtype=np.uint64)])
            coded_dst = np.concatenate([coded_dst, np.zeros(new - coded_dst.size, dtype=np.int64)])
        err = _nc_chunk(
            t0, n, half, r_mob.random((n, N_NODES)), r_sch.random((n, N_CELLS, 5)), delta, epsilon, ARRIVAL_TABLE,
            rel_base, rel_enh, inj, dlv,
            ring, ring_head, ring_len, cq_sum, cq_late, cq_max,
            copy_holder, copy_payload, coded_dst, next_cid,
            cfg_count, cfg_actions, xor_stats,
        )
        if err == ERR_DECODE:
            raise DecodeFailure("XOR decode without matching side information")
        if err != ERR_NONE:
            raise RuntimeError(f"coded-queue capacity exceeded (code {err})")
        now = inj[:, :4].sum(axis=1)
        if n == CHUNK:
            batches.append(((now[1] - now[0]) - (prev[1] - prev[0])) / (4.0 * n))
        prev = now
        t0 += n
    return NcResult(
        epsilon=epsilon,
        delta=delta,
        slots=slots,
        seed=seed,
        injected=inj,
        delivered=dlv,
        config_counts=cfg_count,
        config_actions=cfg_actions,
        xor_sent=int(xor_stats[0]),
        coded_single=int(xor_stats[1]),
        regular_fallback=int(xor_stats[2]),
        idle_fallback=int(xor_stats[3]),
        coded_mean=cq_sum / slots,
        coded_mean_late=cq_late / (slots - half) if slots > half else cq_late.astype(float),
        coded_max=cq_max,
        coded_final=ring_len.copy(),
        copies_stored=int(next_cid[0]),
        batch_gains=np.array(batches),
    )


def instance():
    """Topology and mobility of the fixed instance (2x2 grid, uniform i.i.d. placement)."""
    topo = build_grid(2, 2)
    return topo, iid_matrix(np.full(N_CELLS, 1.0 / N_CELLS))
