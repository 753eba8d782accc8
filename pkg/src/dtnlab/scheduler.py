"""Per-cell scheduling decisions for the 2-hop relay and minimum energy algorithms.

The decision core works on flat arrays so the simulation kernel can call it
slot after slot; the Python wrappers below exist for inspection and testing.
Each decision consumes exactly four uniforms:

* ``u[0]`` picks the sender (or the pair),
* ``u[1]`` picks the receiver,
* ``u[2]`` is the relay coin (``< (1-delta)/2`` means "send a new packet"),
* ``u[3]`` is the activation gate of the chosen opportunity class.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .analysis import (
    REGIME_SAME_CELL,
    CapacityReport,
    RadioParams,
    UnsupportedRegime,
    energy_function,
)
from .topology import CellTopology

FALLBACK_DELTA = 0.01


class Kind(enum.IntEnum):
    Idle = 0
    SameCellDirect = 1
    SameCellRelayNew = 2
    SameCellRelayDeliver = 3
    AdjDirect = 4
    AdjRelayNew = 5
    AdjRelayDeliver = 6


SAME_CELL_KINDS = (Kind.SameCellDirect, Kind.SameCellRelayNew, Kind.SameCellRelayDeliver)
ADJ_KINDS = (Kind.AdjDirect, Kind.AdjRelayNew, Kind.AdjRelayDeliver)
NEW_RELAY_KINDS = (Kind.SameCellRelayNew, Kind.AdjRelayNew)
DELIVER_RELAY_KINDS = (Kind.SameCellRelayDeliver, Kind.AdjRelayDeliver)


@njit(cache=True)
def _pick(u, n):
    k = int(u * n)
    return n - 1 if k >= n else k


@njit(cache=True)
def _is_adjacent(c, other, adj_ptr, adj_idx):
    for k in range(adj_ptr[c], adj_ptr[c + 1]):
        if adj_idx[k] == other:
            return True
    return False


@njit(cache=True)
def decide_core(
    c, occ_start, occ, pos, partner, adj_ptr, adj_idx, u,
    delta, g_relay, g_adj_direct, g_adj_relay, adjacent_first, r1, r2,
):
    """Return (kind, tx, rx, rate) for cell ``c``; tx = rx = -1 when idle."""
    lo = occ_start[c]
    n = occ_start[c + 1] - lo
    if n == 0:
        return 0, -1, -1, 0
    # step 1: a source-destination pair inside the cell, chosen uniformly over ordered pairs
    m = 0
    for k in range(lo, lo + n):
        if pos[partner[occ[k]]] == c:
            m += 1
    if m > 0:
        j = _pick(u[0], m)
        for k in range(lo, lo + n):
            i = occ[k]
            if pos[partner[i]] == c:
                if j == 0:
                    return 1, i, partner[i], r1
                j -= 1
    use_adj = r2 > 0
    # preference swap for 2 R2 > R1: adjacent-cell direct before same-cell relay
    if adjacent_first and use_adj:
        m = 0
        for k in range(lo, lo + n):
            if _is_adjacent(c, pos[partner[occ[k]]], adj_ptr, adj_idx):
                m += 1
        if m > 0:
            if u[3] >= g_adj_direct:
                return 0, -1, -1, 0
            j = _pick(u[0], m)
            for k in range(lo, lo + n):
                i = occ[k]
                if _is_adjacent(c, pos[partner[i]], adj_ptr, adj_idx):
                    if j == 0:
                        return 4, i, partner[i], r2
                    j -= 1
    # step 2: same-cell relay between a uniformly chosen ordered pair
    if n >= 2:
        if u[3] >= g_relay:
            return 0, -1, -1, 0
        a = _pick(u[0], n)
        b = _pick(u[1], n - 1)
        if b >= a:
            b += 1
        tx = occ[lo + a]
        rx = occ[lo + b]
        if u[2] < (1.0 - delta) / 2.0:
            return 2, tx, rx, r1
        return 3, tx, rx, r1
    if not use_adj:
        return 0, -1, -1, 0
    i = occ[lo]
    # step 3: lone user whose destination sits in an adjacent cell
    if _is_adjacent(c, pos[partner[i]], adj_ptr, adj_idx):
        if u[3] >= g_adj_direct:
            return 0, -1, -1, 0
        return 4, i, partner[i], r2
    # step 4: lone user relays to any user of any adjacent cell
    total = 0
    for k in range(adj_ptr[c], adj_ptr[c + 1]):
        nb = adj_idx[k]
        total += occ_start[nb + 1] - occ_start[nb]
    if total == 0:
        return 0, -1, -1, 0
    if u[3] >= g_adj_relay:
        return 0, -1, -1, 0
    j = _pick(u[1], total)
    rx = -1
    for k in range(adj_ptr[c], adj_ptr[c + 1]):
        nb = adj_idx[k]
        cnt = occ_start[nb + 1] - occ_start[nb]
        if j < cnt:
            rx = occ[occ_start[nb] + j]
            break
        j -= cnt
    if u[2] < (1.0 - delta) / 2.0:
        return 5, i, rx, r2
    return 6, i, rx, r2


@njit(cache=True)
def occupancy(pos, n_cells, occ_start, occ):
    """Counting sort of nodes by cell (nodes stay in id order within a cell)."""
    for c in range(n_cells + 1):
        occ_start[c] = 0
    for i in range(pos.size):
        occ_start[pos[i] + 1] += 1
    for c in range(n_cells):
        occ_start[c + 1] += occ_start[c]
    fill = occ_start[:n_cells].copy()
    for i in range(pos.size):
        c = pos[i]
        occ[fill[c]] = i
        fill[c] += 1


@dataclass(frozen=True)
class SchedulerParams:
    """Coin bias, load and activation gates of one scheduling policy.

    ``g_*`` are the probabilities of actually using a feasible opportunity of
    that class; the 2-hop relay algorithm has all gates at 1.
    """

    algorithm: str
    delta: float
    rho: float | None = None
    beta: float | None = None
    piece: int | None = None
    adjacent_first: bool = False
    g_relay: float = 1.0
    g_adj_direct: float = 1.0
    g_adj_relay: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ("two_hop_relay", "min_energy"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        for g in (self.g_relay, self.g_adj_direct, self.g_adj_relay):
            if not 0.0 <= g <= 1.0:
                raise ValueError("activation gates must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def two_hop_params(report: CapacityReport, radio: RadioParams, lam: float | None = None, delta: float | None = None) -> SchedulerParams:
    """2-hop relay with delta = (1 - rho)/4 by default, rho = lam/mu.

    At or above capacity that default is not positive, so a small fixed bias is used.
    """
    rho = None if lam is None else lam / report.mu
    if delta is None:
        if rho is None:
            raise ValueError("need lambda or an explicit delta")
        delta = (1.0 - rho) / 4.0 if rho < 1.0 else FALLBACK_DELTA
    return SchedulerParams(
        algorithm="two_hop_relay",
        delta=float(delta),
        rho=rho,
        adjacent_first=radio.regime != REGIME_SAME_CELL,
    )


def min_energy_params(
    report: CapacityReport,
    radio: RadioParams,
    lam: float,
    beta: float | None = None,
    delta: float | None = None,
) -> SchedulerParams:
    """Minimum energy policy for the piece of the energy curve containing ``lam``.

    The marginal opportunity class of the piece is switched on with probability
    beta * rho, rho being the fraction of the piece's rate interval below ``lam``.
    """
    if radio.regime != REGIME_SAME_CELL:
        raise UnsupportedRegime("the minimum energy algorithm needs R1 >= 2 R2")
    curve = energy_function(report, radio)
    piece = curve.regime(lam)
    if piece == 1:
        # only same-cell direct transmissions; beta and delta play no role
        return SchedulerParams(
            algorithm="min_energy", delta=0.5 if delta is None else float(delta),
            rho=lam / curve.breakpoints[1] if curve.breakpoints[1] > 0 else 0.0, beta=beta,
            piece=1, g_relay=0.0, g_adj_direct=0.0, g_adj_relay=0.0,
        )
    lo, hi = curve.breakpoints[piece - 1], curve.breakpoints[piece]
    rho = (lam - lo) / (hi - lo)
    if beta is None:
        raise ValueError("beta is required outside the first piece")
    if not (rho > 0.0 and 1.0 < beta < 1.0 / rho):
        raise ValueError(f"beta={beta} must lie in (1, 1/rho) with rho={rho:.6g}")
    if delta is None:
        delta = (beta - 1.0) / (2.0 * beta)
    gate = beta * rho
    gates = {
        2: (gate, 0.0, 0.0),
        3: (1.0, gate, 0.0),
        4: (1.0, 1.0, gate),
    }[piece]
    return SchedulerParams(
        algorithm="min_energy", delta=float(delta), rho=rho, beta=beta, piece=piece,
        g_relay=gates[0], g_adj_direct=gates[1], g_adj_relay=gates[2],
    )


def params_from_config(cfg: dict, report: CapacityReport, radio: RadioParams, lam: float | None) -> SchedulerParams:
    kind = cfg.get("type", "two_hop_relay")
    delta = cfg.get("delta")
    if kind == "two_hop_relay":
        if lam is None and delta is None and cfg.get("rho") is not None:
            delta = (1.0 - cfg["rho"]) / 4.0
        return two_hop_params(report, radio, lam, delta)
    if kind == "min_energy":
        if lam is None:
            raise ValueError("the minimum energy algorithm needs lambda")
        return min_energy_params(report, radio, lam, cfg.get("beta"), delta)
    raise ValueError(f"unknown algorithm type {kind!r}")


@dataclass(frozen=True)
class CellDecision:
    kind: Kind
    tx: int = -1
    rx: int = -1
    rate: int = 0

    @property
    def idle(self) -> bool:
        return self.kind == Kind.Idle


IDLE = CellDecision(Kind.Idle)


class DecisionContext:
    """Frozen per-slot snapshot (positions, occupancy, adjacency) for the Python-level deciders."""

    def __init__(self, topology: CellTopology, positions, radio: RadioParams):
        self.topology = topology
        self.radio = radio
        self.pos = np.asarray(positions, dtype=np.int64)
        n = self.pos.size
        if n % 2:
            raise ValueError("number of users must be even")
        if ((self.pos < 0) | (self.pos >= topology.n_cells)).any():
            raise ValueError("position outside the topology")
        self.partner = np.arange(n, dtype=np.int64) ^ 1
        self.adj_ptr, self.adj_idx = topology.csr()
        self.occ_start = np.zeros(topology.n_cells + 1, dtype=np.int64)
        self.occ = np.zeros(n, dtype=np.int64)
        occupancy(self.pos, topology.n_cells, self.occ_start, self.occ)

    def occupants(self, c: int) -> np.ndarray:
        return self.occ[self.occ_start[c]:self.occ_start[c + 1]]


def eligible(decision: CellDecision, partner: np.ndarray, queue_len) -> bool:
    """Does the sender hold a packet the decision may move?

    ``queue_len(holder, dst)`` gives the backlog of packets at ``holder`` destined to ``dst``.
    Own packets live under (i, partner(i)); relay packets under (i, d) with d != partner(i).
    """
    if decision.idle:
        return False
    if decision.kind in DELIVER_RELAY_KINDS:
        return queue_len(decision.tx, decision.rx) > 0
    return queue_len(decision.tx, int(partner[decision.tx])) > 0


def decide(
    ctx: DecisionContext,
    c: int,
    params: SchedulerParams,
    rng: np.random.Generator,
    queue_len=None,
) -> CellDecision:
    """Scheduled decision for cell ``c``; Idle if ``queue_len`` shows nothing to send."""
    u = rng.random(4)
    kind, tx, rx, rate = decide_core(
        c, ctx.occ_start, ctx.occ, ctx.pos, ctx.partner, ctx.adj_ptr, ctx.adj_idx, u,
        params.delta, params.g_relay, params.g_adj_direct, params.g_adj_relay,
        params.adjacent_first, ctx.radio.R1, ctx.radio.R2,
    )
    d = CellDecision(Kind(kind), int(tx), int(rx), int(rate))
    if queue_len is not None and not d.idle and not eligible(d, ctx.partner, queue_len):
        return IDLE
    return d


def two_hop_relay_decide(ctx, c, params, rng, queue_len=None) -> CellDecision:
    if ctx.radio.regime != REGIME_SAME_CELL:
        raise ValueError("use two_hop_relay_decide_alt when 2 R2 > R1")
    return decide(ctx, c, params, rng, queue_len)


def two_hop_relay_decide_alt(ctx, c, params, rng, queue_len=None) -> CellDecision:
    if ctx.radio.regime == REGIME_SAME_CELL:
        raise ValueError("the adjacent-first order applies only when 2 R2 > R1")
    if not params.adjacent_first:
        params = SchedulerParams(**{**params.to_dict(), "adjacent_first": True})
    return decide(ctx, c, params, rng, queue_len)


def min_energy_decide(ctx, c, params, rng, queue_len=None) -> CellDecision:
    if params.algorithm != "min_energy":
        raise ValueError("params are not minimum energy parameters")
    return decide(ctx, c, params, rng, queue_len)


def expected_rates_two_hop(report: CapacityReport, delta: float) -> tuple[float, float, float]:
    """Per-node scheduling rates (direct, relay-new, relay-deliver) at saturation."""
    mu, kappa = report.mu, report.kappa
    return mu * (1 - kappa), mu * kappa * (1 - delta), mu * kappa * (1 + delta)


def expected_rates_min_energy(report: CapacityReport, radio: RadioParams, params: SchedulerParams) -> tuple[float, float, float]:
    """Per-node scheduling rates at saturation on the same-cell relay piece."""
    if params.piece != 2:
        raise UnsupportedRegime("closed-form rates are given for the second piece only")
    R1, p, q, th = radio.R1, report.p, report.q, report.theta
    g = params.g_relay
    return (
        R1 * q / th,
        R1 * (p - q) * (1 - params.delta) * g / (2 * th),
        R1 * (p - q) * (1 + params.delta) * g / (2 * th),
    )

