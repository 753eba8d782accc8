"""Cell-partitioned geography: valid cells, the adjacency relation and gaps."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class TopologyError(ValueError):
    """Raised when a cell layout violates the model's structural assumptions."""


@dataclass(frozen=True)
class CellTopology:
    """Cells ``0..C-1`` with a symmetric, loop-free adjacency relation.

    Grid-built topologies also carry ``rows``, ``cols``, ``gaps`` and the
    (row, col) coordinate of every valid cell, indexed in row-major order.
    """

    adjacency: tuple[frozenset[int], ...]
    rows: int | None = None
    cols: int | None = None
    gaps: tuple[tuple[int, int], ...] = ()
    coords: tuple[tuple[int, int], ...] | None = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.adjacency)

    @property
    def max_degree(self) -> int:
        """J: the largest adjacency set."""
        return max((len(b) for b in self.adjacency), default=0)

    @property
    def is_grid(self) -> bool:
        return self.coords is not None

    def neighbors(self, c: int) -> frozenset[int]:
        return self.adjacency[c]

    def degrees(self) -> np.ndarray:
        return np.array([len(b) for b in self.adjacency], dtype=np.int64)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Adjacency as (indptr, indices) with neighbors sorted ascending."""
        indptr = np.zeros(self.n_cells + 1, dtype=np.int64)
        indices: list[int] = []
        for c, b in enumerate(self.adjacency):
            indices.extend(sorted(b))
            indptr[c + 1] = len(indices)
        return indptr, np.asarray(indices, dtype=np.int64)

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n_cells, self.n_cells), dtype=bool)
        for c, b in enumerate(self.adjacency):
            a[c, list(b)] = True
        return a

    def cell_at(self, row: int, col: int) -> int | None:
        if self.coords is None:
            raise TopologyError("topology has no grid coordinates")
        try:
            return self.coords.index((row, col))
        except ValueError:
            return None

    def to_dict(self) -> dict:
        if self.is_grid:
            return {"rows": self.rows, "cols": self.cols, "gaps": [list(g) for g in self.gaps]}
        return {"adjacency": [sorted(b) for b in self.adjacency]}


def _connected(adjacency: Sequence[Iterable[int]]) -> bool:
    n = len(adjacency)
    if n == 0:
        return False
    seen = {0}
    todo = deque([0])
    while todo:
        c = todo.popleft()
        for b in adjacency[c]:
            if b not in seen:
                seen.add(b)
                todo.append(b)
    return len(seen) == n


def validate(topology: CellTopology) -> None:
    """Check every structural invariant; raise :class:`TopologyError` on the first violation."""
    adj = topology.adjacency
    n = len(adj)
    if n < 1:
        raise TopologyError("topology must contain at least one cell")
    for c, b in enumerate(adj):
        if c in b:
            raise TopologyError(f"self-adjacency: cell {c} lists itself")
        for other in b:
            if not 0 <= other < n:
                raise TopologyError(f"cell {c} lists unknown neighbor {other}")
            if c not in adj[other]:
                raise TopologyError(f"asymmetric adjacency: {other} in B_{c} but {c} not in B_{other}")
    if not _connected(adj):
        raise TopologyError("disconnected: gaps or missing edges partition the cells")


def build_grid(rows: int, cols: int, gaps: Iterable[Sequence[int]] = ()) -> CellTopology:
    """Rectangular grid with edge-sharing (4-neighbor) adjacency and optional gap cells."""
    if rows < 1 or cols < 1:
        raise TopologyError("rows and cols must be positive")
    gap_list = [tuple(int(v) for v in g) for g in gaps]
    for g in gap_list:
        if len(g) != 2 or not (0 <= g[0] < rows and 0 <= g[1] < cols):
            raise TopologyError(f"gap {g} outside the {rows}x{cols} grid")
    if len(set(gap_list)) != len(gap_list):
        raise TopologyError("duplicate gaps")
    gap_set = set(gap_list)
    coords = tuple((r, c) for r in range(rows) for c in range(cols) if (r, c) not in gap_set)
    if not coords:
        raise TopologyError("every cell is a gap")
    index = {rc: i for i, rc in enumerate(coords)}
    adjacency = []
    for r, c in coords:
        nbrs = (index.get(rc) for rc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)))
        adjacency.append(frozenset(i for i in nbrs if i is not None))
    topo = CellTopology(
        adjacency=tuple(adjacency),
        rows=rows,
        cols=cols,
        gaps=tuple(sorted(gap_set)),
        coords=coords,
    )
    validate(topo)
    return topo


def from_adjacency(adjacency: Sequence[Iterable[int]]) -> CellTopology:
    """Arbitrary (non-grid) layout given as one neighbor list per cell."""
    topo = CellTopology(adjacency=tuple(frozenset(int(v) for v in b) for b in adjacency))
    validate(topo)
    return topo


def ring(n_cells: int) -> CellTopology:
    if n_cells < 3:
        raise TopologyError("a ring needs at least three cells")
    return from_adjacency([((c - 1) % n_cells, (c + 1) % n_cells) for c in range(n_cells)])


def from_config(cfg: dict) -> CellTopology:
    if "adjacency" in cfg:
        return from_adjacency(cfg["adjacency"])
    try:
        return build_grid(int(cfg["rows"]), int(cfg["cols"]), cfg.get("gaps", []))
    except KeyError as exc:
        raise TopologyError(f"topology config missing {exc}") from None
