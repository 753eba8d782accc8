"""Brute-force validators for the closed forms.

Every event here is evaluated per placement from its verbal definition
(who is in which cell, who is whose destination).  Nothing in this module
calls into :mod:`dtnlab.analysis`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mobility import MobilityModel, estimate_alpha
from .topology import CellTopology

ENUMERATION_BUDGET = 1_000_000
EVENTS = ("q", "p", "q_prime", "p_prime", "q_dprime", "p_dprime")


class BudgetExceeded(ValueError):
    pass


class PreconditionError(ValueError):
    pass


def partners(n_users: int) -> np.ndarray:
    """Destination of each user under the pairing 0<->1, 2<->3, ..."""
    return np.arange(n_users) ^ 1


def all_placements(n_cells: int, n_users: int) -> np.ndarray:
    total = n_cells**n_users
    if total > ENUMERATION_BUDGET:
        raise BudgetExceeded(f"{n_cells}^{n_users} = {total} placements exceeds budget {ENUMERATION_BUDGET}")
    idx = np.arange(total, dtype=np.int64)
    out = np.empty((total, n_users), dtype=np.int64)
    for k in range(n_users):
        out[:, k] = (idx // n_cells ** (n_users - 1 - k)) % n_cells
    return out


def placement_weights(placements: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return np.prod(np.asarray(pi, dtype=float)[placements], axis=1)


@dataclass
class _CellEvents:
    pair: np.ndarray  # some user and its destination both in c
    count: np.ndarray  # users in c
    cross: np.ndarray  # some user in c has its destination in an adjacent cell
    any_adj: np.ndarray  # at least one user in an adjacent cell


def _cell_events(placements: np.ndarray, topology: CellTopology, c: int) -> _CellEvents:
    partner = partners(placements.shape[1])
    in_c = placements == c
    in_adj = np.isin(placements, list(topology.neighbors(c)))
    return _CellEvents(
        pair=(in_c & in_c[:, partner]).any(axis=1),
        count=in_c.sum(axis=1),
        cross=(in_c & in_adj[:, partner]).any(axis=1),
        any_adj=in_adj.any(axis=1),
    )


def _event_indicators(ev: _CellEvents) -> dict[str, np.ndarray]:
    alone = ev.count == 1
    return {
        "q": ev.pair,
        "p": ev.count >= 2,
        "q_prime": alone & ev.cross,
        "p_prime": alone & ev.any_adj,
        "q_dprime": ~ev.pair & ev.cross,
        "p_dprime": ~ev.pair & ~ev.cross & (ev.count >= 2),
    }


def enumerate_probabilities(topology: CellTopology, pi, n_users: int) -> dict[str, float]:
    """Exact cell-averaged event probabilities by summing over all C^N joint placements."""
    pi = np.asarray(pi, dtype=float)
    placements = all_placements(topology.n_cells, n_users)
    w = placement_weights(placements, pi)
    totals = dict.fromkeys(EVENTS, 0.0)
    for c in range(topology.n_cells):
        for name, ind in _event_indicators(_cell_events(placements, topology, c)).items():
            totals[name] += float(w[ind].sum())
    return {k: v / topology.n_cells for k, v in totals.items()}


def _preference(R1: int, R2: int) -> list[tuple[str, int]]:
    if R1 >= 2 * R2:
        return [("I1", 2 * R1), ("I2", R1), ("I3", 2 * R2), ("I4", R2)]
    return [("I1", 2 * R1), ("I3", 2 * R2), ("I2", R1), ("I4", R2)]


def cell_z(ev: _CellEvents, R1: int, R2: int) -> np.ndarray:
    """Z_c per placement: the value of the most preferred feasible decision in the cell."""
    feasible = {
        "I1": ev.pair,
        "I2": ev.count >= 2,
        "I3": ev.cross,
        "I4": (ev.count >= 1) & ev.any_adj,
    }
    z = np.zeros(ev.count.shape, dtype=float)
    decided = np.zeros(ev.count.shape, dtype=bool)
    for name, value in _preference(R1, R2):
        take = feasible[name] & ~decided
        z[take] = value
        decided |= take
    return z


def expected_Z(topology: CellTopology, pi, n_users: int, R1: int, R2: int) -> float:
    """sum_c E[Z_c] / (2N): the per-user throughput upper bound from the preference order."""
    pi = np.asarray(pi, dtype=float)
    placements = all_placements(topology.n_cells, n_users)
    w = placement_weights(placements, pi)
    total = 0.0
    for c in range(topology.n_cells):
        total += float(w @ cell_z(_cell_events(placements, topology, c), R1, R2))
    return total / (2 * n_users)


@dataclass(frozen=True)
class McEstimate:
    value: float
    se: float
    half_width_99: float


_Z99 = 2.5758293035489004


def monte_carlo_probabilities(
    model: MobilityModel,
    topology: CellTopology,
    n_users: int,
    samples: int,
    rng: np.random.Generator,
    chunk: int = 200_000,
) -> dict[str, McEstimate]:
    """Estimate the six probabilities from i.i.d. placements drawn from pi^N."""
    if samples < 10_000:
        raise ValueError("need at least 10^4 samples")
    pi = np.asarray(model.pi)
    cdf = np.cumsum(pi)
    last = np.flatnonzero(pi > 0)[-1]
    C = topology.n_cells
    # per-sample statistic is the cell average, so its variance is estimated directly
    s1 = dict.fromkeys(EVENTS, 0.0)
    s2 = dict.fromkeys(EVENTS, 0.0)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        pl = np.minimum(np.searchsorted(cdf, rng.random((m, n_users)), side="right"), last)
        per = {k: np.zeros(m) for k in EVENTS}
        for c in range(C):
            for name, ind in _event_indicators(_cell_events(pl, topology, c)).items():
                per[name] += ind
        for k in EVENTS:
            v = per[k] / C
            s1[k] += float(v.sum())
            s2[k] += float((v * v).sum())
        done += m
    out = {}
    for k in EVENTS:
        mean = s1[k] / samples
        var = max(s2[k] / samples - mean * mean, 0.0) * samples / (samples - 1)
        se = (var / samples) ** 0.5
        out[k] = McEstimate(mean, se, _Z99 * se)
    return out


def joint_kernel(Pd: np.ndarray, n_users: int) -> np.ndarray:
    """Transition matrix of the joint placement chain over d slots (users independent)."""
    K = np.ones((1, 1))
    for _ in range(n_users):
        K = np.kron(K, Pd)
    return K


@dataclass(frozen=True)
class ConditionalMeanCheck:
    ok: bool
    f_av: float
    lower: float
    upper: float
    min_conditional: float
    max_conditional: float


def verify_lemma1(
    model: MobilityModel,
    n_users: int,
    d: int,
    f: Callable[[np.ndarray], np.ndarray],
    alpha: float | None = None,
) -> ConditionalMeanCheck:
    """Check f_av(1 - 2N a g^d) <= E[f(chi(t+d)) | chi(t)] <= f_av(1 + 2N a g^d) for every start.

    ``f`` maps an (M, N) array of joint placements to M non-negative values.
    """
    if alpha is None:
        alpha = estimate_alpha(model)
    eps = alpha * model.gamma**d
    if eps > 1.0 / n_users**2:
        raise PreconditionError(f"alpha*gamma^d = {eps:.3g} exceeds 1/N^2")
    placements = all_placements(model.n_cells, n_users)
    fv = np.asarray(f(placements), dtype=float)
    if (fv < 0).any():
        raise PreconditionError("f must be non-negative")
    Pd = np.linalg.matrix_power(np.asarray(model.P), d)
    cond = joint_kernel(Pd, n_users) @ fv
    f_av = float(placement_weights(placements, model.pi) @ fv)
    lo = f_av * (1 - 2 * n_users * eps)
    hi = f_av * (1 + 2 * n_users * eps)
    slack = 1e-12 * max(1.0, abs(f_av))
    ok = bool((cond >= lo - slack).all() and (cond <= hi + slack).all())
    return ConditionalMeanCheck(ok, f_av, lo, hi, float(cond.min()), float(cond.max()))


def mixing_sandwich_holds(model: MobilityModel, alpha: float, d: int, rtol: float = 1e-12) -> bool:
    """pi_c (1 - a g^d) <= P^d[i, c] <= pi_c (1 + a g^d) for every (i, c)."""
    Pd = np.linalg.matrix_power(np.asarray(model.P), d)
    pi = np.asarray(model.pi)
    eps = alpha * model.gamma**d
    slack = rtol * pi
    return bool(((Pd >= pi * (1 - eps) - slack) & (Pd <= pi * (1 + eps) + slack)).all())


def product_inequalities(alpha: float, gamma: float, d: int, n_users: int) -> tuple[bool, bool]:
    """(1 - e)^N >= 1 - 2N e and (1 + e)^N <= 1 + 2N e for e = alpha gamma^d <= 1/N^2."""
    e = alpha * gamma**d
    if e > 1.0 / n_users**2:
        raise PreconditionError("needs alpha gamma^d <= 1/N^2")
    return (1 - e) ** n_users >= 1 - 2 * n_users * e, (1 + e) ** n_users <= 1 + 2 * n_users * e
