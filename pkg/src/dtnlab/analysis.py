"""Closed-form capacity, minimum-energy curve and delay bounds."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import mobility
from .topology import CellTopology

REGIME_SAME_CELL = "R1>=2R2"
REGIME_ADJACENT = "2R2>R1>=R2"

# binomial terms switch to log space above this many users
_LOG_SPACE_N = 50


class UnstableRate(ValueError):
    """Requested input rate is at or beyond capacity."""


class UnsupportedRegime(ValueError):
    pass


@dataclass(frozen=True)
class RadioParams:
    """Packets per slot for same-cell (R1) and adjacent-cell (R2) links, and the arrival cap."""

    R1: int
    R2: int
    A_max: int = 1

    def __post_init__(self):
        for name in ("R1", "R2", "A_max"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"{name} must be an integer")
        if self.R1 < 1:
            raise ValueError("R1 must be >= 1")
        if not 0 <= self.R2 <= self.R1:
            raise ValueError("need R1 >= R2 >= 0")
        if self.A_max < 1:
            raise ValueError("A_max must be >= 1")

    @property
    def regime(self) -> str:
        return REGIME_SAME_CELL if self.R1 >= 2 * self.R2 else REGIME_ADJACENT


class Probabilities(NamedTuple):
    q: float
    p: float
    q_prime: float
    p_prime: float
    q_dprime: float
    p_dprime: float


@dataclass(frozen=True)
class CapacityReport:
    q: float
    p: float
    q_prime: float
    p_prime: float
    q_dprime: float
    p_dprime: float
    theta: float
    mu: float
    regime: str
    kappa: float
    n_users: int
    n_cells: int
    pi_adj: tuple[float, ...] = field(default=())

    @property
    def probabilities(self) -> Probabilities:
        return Probabilities(self.q, self.p, self.q_prime, self.p_prime, self.q_dprime, self.p_dprime)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pi_adj"] = list(self.pi_adj)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CapacityReport":
        d = dict(d)
        d["pi_adj"] = tuple(d.get("pi_adj", ()))
        return cls(**d)


def pi_adj(topology: CellTopology, pi: Sequence[float], c: int) -> float:
    """P(user in a cell adjacent to c | user not in c)."""
    pi = np.asarray(pi, dtype=float)
    nbrs = topology.neighbors(c)
    if not nbrs:
        return 0.0
    if pi[c] >= 1.0:
        raise ValueError(f"pi_{c} = 1 contradicts a non-empty adjacency set")
    return math.fsum(pi[i] for i in nbrs) / (1.0 - pi[c])


def _binom_terms(n_pairs: int, n_users: int, pc: float, start: int) -> np.ndarray:
    """2^i C(N/2, i) pc^i (1-pc)^(N-i) for i = start..N/2."""
    i = np.arange(start, n_pairs + 1)
    if i.size == 0:
        return np.zeros(0)
    if pc <= 0.0:
        return np.zeros(i.size)
    if n_users <= _LOG_SPACE_N:
        comb = np.array([math.comb(n_pairs, int(k)) for k in i], dtype=float)
        return (2.0**i) * comb * pc**i * (1.0 - pc) ** (n_users - i)
    if pc >= 1.0:
        return np.zeros(i.size)
    logc = np.array([math.lgamma(n_pairs + 1) - math.lgamma(k + 1) - math.lgamma(n_pairs - k + 1) for k in i])
    log = i * math.log(2.0) + logc + i * math.log(pc) + (n_users - i) * math.log1p(-pc)
    return np.exp(log)


def probabilities(topology: CellTopology, pi: Sequence[float], n_users: int) -> Probabilities:
    """The six cell-averaged steady-state event probabilities, in closed form."""
    N = int(n_users)
    if N < 2 or N % 2:
        raise ValueError("number of users must be even and >= 2")
    pi = np.asarray(pi, dtype=float)
    C = topology.n_cells
    if pi.size != C:
        raise ValueError("pi does not match the number of cells")
    half = N // 2
    acc: dict[str, list[float]] = {k: [] for k in Probabilities._fields}
    for c in range(C):
        pc = float(pi[c])
        pa = pi_adj(topology, pi, c)
        lone = N * pc * (1.0 - pc) ** (N - 1)
        acc["q"].append(1.0 - (1.0 - pc * pc) ** half)
        acc["p"].append(1.0 - (1.0 - pc) ** N - lone)
        acc["q_prime"].append(pa * lone)
        acc["p_prime"].append((1.0 - (1.0 - pa) ** (N - 1)) * lone)
        t1 = _binom_terms(half, N, pc, 1)
        acc["q_dprime"].append(math.fsum(t1 * (1.0 - (1.0 - pa) ** np.arange(1, half + 1))))
        t2 = _binom_terms(half, N, pc, 2)
        acc["p_dprime"].append(math.fsum(t2 * (1.0 - pa) ** np.arange(2, half + 1)))
    return Probabilities(**{k: math.fsum(v) / C for k, v in acc.items()})


def capacity(topology: CellTopology, pi: Sequence[float], n_users: int, radio: RadioParams) -> CapacityReport:
    """Maximum stable symmetric per-user rate and the quantities it is built from."""
    probs = probabilities(topology, pi, n_users)
    q, p, q1, p1, q2, p2 = probs
    R1, R2 = radio.R1, radio.R2
    theta = n_users / topology.n_cells
    if radio.regime == REGIME_SAME_CELL:
        mu = (R1 * q + R1 * p + R2 * q1 + R2 * p1) / (2.0 * theta)
    else:
        mu = (2 * R1 * q + 2 * R2 * q2 + R1 * p2 + R2 * (p1 - q1)) / (2.0 * theta)
    total = R1 * p + R2 * p1 + R1 * q + R2 * q1
    kappa = (R1 * p + R2 * p1 - R1 * q - R2 * q1) / total if total > 0 else 0.0
    return CapacityReport(
        *probs,
        theta=theta,
        mu=mu,
        regime=radio.regime,
        kappa=kappa,
        n_users=int(n_users),
        n_cells=topology.n_cells,
        pi_adj=tuple(pi_adj(topology, pi, c) for c in range(topology.n_cells)),
    )


def b_constant(radio: RadioParams, J: int) -> int:
    """Per-slot drift constant: (A_max + R1 + J R2)^2 + R1^2."""
    return (radio.A_max + radio.R1 + J * radio.R2) ** 2 + radio.R1**2


@dataclass(frozen=True)
class DelayBound:
    value: float
    rho: float
    d: int
    B: int
    alpha: float
    gamma: float
    empirical: bool = True


def delay_bound(
    report: CapacityReport,
    radio: RadioParams,
    n_users: int,
    lam: float,
    alpha: float,
    gamma: float,
    J: int,
) -> DelayBound:
    """Average-delay bound of the 2-hop relay algorithm: B N (2d+1) / (lam mu kappa (1-rho))."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if lam >= report.mu:
        raise UnstableRate(f"lambda={lam} is not below capacity mu={report.mu:.6g}")
    if report.kappa <= 0:
        raise ValueError("kappa must be positive for the relay delay bound")
    rho = lam / report.mu
    d = mobility.mixing_lag(alpha, gamma, n_users, rho)
    B = b_constant(radio, J)
    value = B * n_users * (2 * d + 1) / (lam * report.mu * report.kappa * (1.0 - rho))
    return DelayBound(value=value, rho=rho, d=d, B=B, alpha=alpha, gamma=gamma, empirical=gamma > 0)


@dataclass(frozen=True)
class EnergyCurve:
    """Piecewise-linear minimum energy per user per slot over [0, mu)."""

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    values: tuple[float, ...]

    @property
    def mu(self) -> float:
        return self.breakpoints[-1]

    def regime(self, lam: float) -> int:
        """Index 1..4 of the piece containing ``lam``."""
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        if lam >= self.mu:
            raise UnstableRate(f"lambda={lam} is not below capacity mu={self.mu:.6g}")
        for k in range(4, 0, -1):
            if lam >= self.breakpoints[k - 1] and self.breakpoints[k - 1] < self.breakpoints[k]:
                return k
        return 1

    def __call__(self, lam: float) -> float:
        k = self.regime(lam)
        return self.values[k - 1] + self.slopes[k - 1] * (lam - self.breakpoints[k - 1])

    def piece(self, k: int, lam: float) -> float:
        """Evaluate the k-th linear piece (1-based) at ``lam`` regardless of its interval."""
        return self.values[k - 1] + self.slopes[k - 1] * (lam - self.breakpoints[k - 1])

    def to_dict(self) -> dict:
        return {
            "breakpoints": list(self.breakpoints),
            "slopes": [s if math.isfinite(s) else None for s in self.slopes],
            "values": list(self.values),
        }


def energy_function(report: CapacityReport, radio: RadioParams) -> EnergyCurve:
    if radio.regime != REGIME_SAME_CELL:
        raise UnsupportedRegime("minimum energy curve is only available for R1 >= 2 R2")
    R1, R2 = radio.R1, radio.R2
    q, p, q1, theta = report.q, report.p, report.q_prime, report.theta
    b1 = R1 * q / theta
    b2 = R1 * (p + q) / (2 * theta)
    b3 = (R1 * (p + q) + 2 * R2 * q1) / (2 * theta)
    inv_r2 = 1.0 / R2 if R2 > 0 else math.inf
    return EnergyCurve(
        breakpoints=(0.0, b1, b2, b3, report.mu),
        slopes=(1.0 / R1, 2.0 / R1, inv_r2, 2.0 * inv_r2),
        values=(0.0, q / theta, p / theta, (p + q1) / theta),
    )


def lower_bound_lines(report: CapacityReport, radio: RadioParams, lam: float) -> tuple[float, ...]:
    """The four linear energy lower bounds, each valid for every stabilizing policy."""
    R1, R2 = radio.R1, radio.R2
    q, p, q1, theta = report.q, report.p, report.q_prime, report.theta
    lines = [lam / R1, 2 * lam / R1 - q / theta]
    if R2 > 0:
        lines.append(lam / R2 + p / theta - R1 * (p + q) / (2 * theta * R2))
        lines.append(2 * lam / R2 + (p + q1) / theta - (R1 * (p + q) + 2 * R2 * q1) / (theta * R2))
    return tuple(lines)


def relay_load(report: CapacityReport, radio: RadioParams, lam: float) -> float:
    """rho with lam = R1 q/theta + rho R1 (p-q)/(2 theta) (the same-cell relay piece)."""
    base = radio.R1 * report.q / report.theta
    span = radio.R1 * (report.p - report.q) / (2 * report.theta)
    return (lam - base) / span


@dataclass(frozen=True)
class EnergyBounds:
    e_bar: float
    delay_bound: float
    phi: float
    rho: float
    beta: float
    d: int
    B: int
    alpha: float
    gamma: float


def energy_bounds(
    report: CapacityReport,
    radio: RadioParams,
    n_users: int,
    lam: float,
    beta: float,
    alpha: float,
    gamma: float,
    J: int,
) -> EnergyBounds:
    """Energy and delay of the minimum energy algorithm on the same-cell relay piece."""
    curve = energy_function(report, radio)
    if curve.regime(lam) != 2 or lam == curve.breakpoints[1]:
        raise UnsupportedRegime("energy/delay bounds are only available strictly inside the second piece")
    rho = relay_load(report, radio, lam)
    if not 1.0 < beta < 1.0 / rho:
        raise ValueError(f"beta must lie in (1, 1/rho) = (1, {1 / rho:.6g})")
    p, q, theta = report.p, report.q, report.theta
    phi = curve(lam)
    e_bar = phi + (beta - 1.0) * rho * (p - q) / theta
    d = mobility.mixing_lag_energy(alpha, gamma, n_users, p, q, rho, beta)
    B = b_constant(radio, J)
    dbound = 4 * B * n_users * theta * (2 * d + 1) / (lam * radio.R1 * (p - q) * rho * (beta - 1.0))
    return EnergyBounds(e_bar=e_bar, delay_bound=dbound, phi=phi, rho=rho, beta=beta, d=d, B=B, alpha=alpha, gamma=gamma)


def phi_grid(curve: EnergyCurve, points: int = 200) -> list[tuple[float, float]]:
    lams = np.linspace(0.0, curve.mu, points, endpoint=False)
    return [(float(x), curve(float(x))) for x in lams]
