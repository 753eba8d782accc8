"""Per-user Markov mobility: transition matrices, stationary law, mixing quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import CellTopology


class MobilityError(ValueError):
    pass


STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-12
POWER_ITER_CAP = 1_000_000
DEFAULT_ALPHA_HORIZON = 200
# Below this, |P^d - pi| is dominated by rounding and says nothing about gamma^d.
_NOISE_FLOOR = 1e-11


@dataclass(frozen=True, eq=False)
class MobilityModel:
    """A row-stochastic transition matrix together with its stationary law and SLEM."""

    P: np.ndarray
    pi: np.ndarray
    gamma: float
    unconstrained: bool = False
    ergodic: bool = True
    kind: str = "custom"
    move_prob: float | None = None

    @property
    def n_cells(self) -> int:
        return self.P.shape[0]

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-wise cumulative transition probabilities and the last positive column per row.

        The second array is used to clip sampled indices against round-off in the cumsum.
        """
        cdf = np.cumsum(self.P, axis=1)
        last = np.array([np.flatnonzero(row > 0)[-1] for row in self.P], dtype=np.int64)
        return cdf, last

    def to_dict(self) -> dict:
        if self.kind == "random_walk":
            return {"type": "random_walk", "move_prob": self.move_prob}
        if self.kind == "iid":
            return {"type": "iid", "pi": self.pi.tolist()}
        return {"type": "custom", "matrix": self.P.tolist()}


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_stochastic(P: np.ndarray) -> None:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise MobilityError("transition matrix must be square")
    if (P < 0).any():
        raise MobilityError("negative transition probability")
    if np.abs(P.sum(axis=1) - 1.0).max() > STOCHASTIC_TOL:
        raise MobilityError("rows of the transition matrix must sum to 1")


def _strongly_connected(P: np.ndarray) -> bool:
    support = P > 0
    n = P.shape[0]
    for mat in (support, support.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            nxt = mat[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        if not seen.all():
            return False
    return True


def is_ergodic(P: np.ndarray) -> bool:
    """Irreducible support graph plus aperiodicity (a self-loop, or SLEM < 1)."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 1:
        return True
    if not _strongly_connected(P):
        return False
    if (np.diag(P) > 0).any():
        return True
    return slem(P) < 1.0 - 1e-9


def stationary_distribution(P: np.ndarray, tol: float = STATIONARY_TOL, max_iter: int = POWER_ITER_CAP) -> np.ndarray:
    """Stationary vector by power iteration, falling back to a dense solve for small chains."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() <= tol * 0.1:
            pi = nxt
            break
        pi = nxt
    else:
        if n > 5000:
            raise MobilityError("power iteration did not converge; chain is likely not ergodic")
        pi = _solve_stationary(P)
    if np.abs(pi @ P - pi).max() > tol:
        pi = _solve_stationary(P)
        if np.abs(pi @ P - pi).max() > tol:
            raise MobilityError("no stationary distribution within tolerance")
    return pi


def _solve_stationary(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    a = P.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def slem(P: np.ndarray) -> float:
    """Second-largest eigenvalue modulus."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 1:
        return 0.0
    ev = np.linalg.eigvals(P)
    # drop the Perron eigenvalue (the one closest to 1)
    k = int(np.argmin(np.abs(ev - 1.0)))
    rest = np.delete(ev, k)
    return float(np.abs(rest).max())


def _model(P, *, unconstrained=False, kind="custom", move_prob=None, pi=None, gamma=None) -> MobilityModel:
    P = np.asarray(P, dtype=float)
    check_stochastic(P)
    ergodic = is_ergodic(P)
    if pi is None:
        if ergodic:
            pi = stationary_distribution(P)
        else:
            # any distribution is stationary for P = I; keep the uniform one
            pi = np.full(P.shape[0], 1.0 / P.shape[0])
    if gamma is None:
        gamma = slem(P) if ergodic else 1.0
    return MobilityModel(
        P=_freeze(P),
        pi=_freeze(pi),
        gamma=float(gamma),
        unconstrained=unconstrained,
        ergodic=ergodic,
        kind=kind,
        move_prob=move_prob,
    )


def random_walk_matrix(topology: CellTopology, move_prob: float) -> MobilityModel:
    """Lazy nearest-neighbor walk: stay w.p. 1-x, else step N/W/S/E uniformly.

    A step toward a missing cell (border or gap) leaves the user in place.  For
    adjacency-list layouts without directions each of the J possible moves gets x/J.
    """
    x = float(move_prob)
    if not 0.0 <= x < 1.0:
        raise MobilityError("move probability must lie in [0, 1)")
    C = topology.n_cells
    P = np.zeros((C, C))
    if topology.is_grid:
        for c, (r, col) in enumerate(topology.coords):
            for rc in ((r - 1, col), (r + 1, col), (r, col - 1), (r, col + 1)):
                dest = topology.cell_at(*rc) if _in_grid(topology, rc) else None
                P[c, c if dest is None else dest] += x / 4.0
            P[c, c] += 1.0 - x
    else:
        share = x / max(topology.max_degree, 1)
        for c, b in enumerate(topology.adjacency):
            for other in b:
                P[c, other] += share
            P[c, c] += 1.0 - share * len(b)
    return _model(P, kind="random_walk", move_prob=x)


def _in_grid(topology: CellTopology, rc: tuple[int, int]) -> bool:
    return 0 <= rc[0] < topology.rows and 0 <= rc[1] < topology.cols


def iid_matrix(pi, n_cells: int | None = None) -> MobilityModel:
    """Teleporting model: every row of P equals ``pi`` (positions i.i.d. across slots)."""
    pi = np.asarray(pi, dtype=float).ravel()
    if n_cells is not None and pi.size != n_cells:
        raise MobilityError(f"pi has {pi.size} entries, expected {n_cells}")
    if (pi <= 0).any():
        raise MobilityError("i.i.d. mobility needs pi_c > 0 in every cell")
    if abs(pi.sum() - 1.0) > 1e-12:
        raise MobilityError("pi must sum to 1")
    P = np.tile(pi, (pi.size, 1))
    return _model(P, unconstrained=True, kind="iid", pi=pi, gamma=0.0)


def custom_matrix(topology: CellTopology | None, matrix) -> MobilityModel:
    P = np.asarray(matrix, dtype=float)
    if topology is not None:
        if P.shape != (topology.n_cells, topology.n_cells):
            raise MobilityError("matrix shape does not match the topology")
        allowed = topology.adjacency_matrix() | np.eye(topology.n_cells, dtype=bool)
        if ((P > 0) & ~allowed).any():
            raise MobilityError("transition to a non-adjacent cell")
    return _model(P)


def from_config(cfg: dict, topology: CellTopology) -> MobilityModel:
    kind = cfg.get("type")
    if kind == "random_walk":
        return random_walk_matrix(topology, cfg["move_prob"])
    if kind == "iid":
        pi = cfg.get("pi")
        if pi is None:
            pi = np.full(topology.n_cells, 1.0 / topology.n_cells)
        return iid_matrix(pi, topology.n_cells)
    if kind == "custom":
        return custom_matrix(topology, cfg["matrix"])
    raise MobilityError(f"unknown mobility type {kind!r}")


def estimate_alpha(model: MobilityModel, horizon: int = DEFAULT_ALPHA_HORIZON) -> float:
    """Smallest alpha (at least 1) making the multiplicative mixing sandwich hold for d <= horizon.

    max over d, i, c of |P^d[i, c] - pi_c| / (pi_c * gamma^d).  Horizons where
    gamma^d sinks below the floating-point noise floor are skipped.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not model.ergodic:
        raise MobilityError("alpha is undefined for a non-ergodic chain")
    gamma = model.gamma
    if gamma <= 0.0:
        return 1.0
    P = np.asarray(model.P)
    pi = np.asarray(model.pi)
    Pd = np.eye(model.n_cells)
    best = 1.0
    for d in range(1, horizon + 1):
        Pd = Pd @ P
        gd = gamma**d
        if gd < _NOISE_FLOOR:
            break
        best = max(best, float((np.abs(Pd - pi) / (pi * gd)).max()))
    return best


def _ceil_lag(alpha: float, gamma: float, target: float) -> int:
    # smallest d >= 0 with alpha * gamma^d <= target
    if gamma <= 0.0:
        return 0
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    d = max(0, math.ceil(math.log(alpha / target) / math.log(1.0 / gamma)))
    while alpha * gamma**d > target:
        d += 1
    while d > 0 and alpha * gamma ** (d - 1) <= target:
        d -= 1
    return d


def mixing_lag(alpha: float, gamma: float, n_users: int, rho: float) -> int:
    """Lag d for the relay-delay bound: ceil(log(8 N^2 alpha / (1-rho)) / log(1/gamma))."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    return _ceil_lag(alpha, gamma, (1.0 - rho) / (8.0 * n_users**2))


def mixing_lag_energy(alpha: float, gamma: float, n_users: int, p: float, q: float, rho: float, beta: float) -> int:
    """Lag d for the minimum-energy delay bound."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if not 1.0 < beta < 1.0 / rho:
        raise ValueError("beta must lie in (1, 1/rho)")
    if p <= q:
        raise ValueError("need p > q")
    target = (p - q) * rho * (beta - 1.0) / (4.0 * beta * (p + q) * n_users**2)
    return _ceil_lag(alpha, gamma, target)


def sample_stationary(model: MobilityModel, n: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(model.pi)
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(idx, np.flatnonzero(model.pi > 0)[-1]).astype(np.int64)


def step(positions: np.ndarray, model: MobilityModel, rng: np.random.Generator) -> np.ndarray:
    """Move every user one slot: row ``positions[i]`` of P gives node i's next-cell law."""
    positions = np.asarray(positions, dtype=np.int64)
    cdf, last = model.cdf()
    u = rng.random(positions.size)
    return advance(positions, cdf, last, u)


def advance(positions: np.ndarray, cdf: np.ndarray, last: np.ndarray, u: np.ndarray) -> np.ndarray:
    rows = cdf[positions]
    idx = (rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, last[positions])
