import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnlab.topology import (
    CellTopology,
    TopologyError,
    build_grid,
    from_adjacency,
    from_config,
    ring,
    validate,
)


def test_grid_4x4_degrees():
    t = build_grid(4, 4)
    assert t.n_cells == 16
    assert t.max_degree == 4
    assert sorted(t.degrees().tolist()) == [2] * 4 + [3] * 8 + [4] * 4


def test_grid_row_major_neighbors():
    t = build_grid(2, 3)
    # cells 0 1 2 / 3 4 5
    assert t.neighbors(0) == {1, 3}
    assert t.neighbors(4) == {1, 3, 5}


def test_gap_removes_cell_and_edges():
    t = build_grid(3, 3, gaps=[(1, 1)])
    assert t.n_cells == 8
    assert t.cell_at(1, 1) is None
    assert t.max_degree == 2


def test_gap_that_disconnects_is_rejected():
    with pytest.raises(TopologyError, match="disconnected"):
        build_grid(1, 3, gaps=[(0, 1)])


def test_all_gaps_rejected():
    with pytest.raises(TopologyError):
        build_grid(1, 1, gaps=[(0, 0)])


@pytest.mark.parametrize("gaps", [[(5, 0)], [(0, 0), (0, 0)]])
def test_bad_gaps(gaps):
    with pytest.raises(TopologyError):
        build_grid(2, 2, gaps=gaps)


def test_asymmetric_adjacency_rejected():
    with pytest.raises(TopologyError, match="asymmetric"):
        from_adjacency([[1], []])


def test_self_adjacency_rejected():
    with pytest.raises(TopologyError, match="self"):
        validate(CellTopology(adjacency=(frozenset({0}),)))


def test_unknown_neighbor_rejected():
    with pytest.raises(TopologyError, match="unknown"):
        from_adjacency([[3], [0]])


def test_single_cell_has_no_neighbors():
    t = build_grid(1, 1)
    assert t.max_degree == 0


def test_ring_and_config_round_trip():
    r = ring(5)
    assert r.max_degree == 2
    assert from_config(r.to_dict()).adjacency == r.adjacency
    g = build_grid(3, 2, gaps=[(0, 0)])
    assert from_config(g.to_dict()).adjacency == g.adjacency


def test_csr_sorted():
    ptr, idx = build_grid(3, 3).csr()
    for c in range(9):
        seg = idx[ptr[c]:ptr[c + 1]].tolist()
        assert seg == sorted(seg)


@st.composite
def grids(draw):
    rows = draw(st.integers(1, 5))
    cols = draw(st.integers(1, 5))
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    gaps = draw(st.lists(st.sampled_from(cells), unique=True, max_size=len(cells) - 1))
    return rows, cols, gaps


@settings(max_examples=150, deadline=None)
@given(grids())
def test_grid_build_is_valid_or_rejected(case):
    rows, cols, gaps = case
    try:
        t = build_grid(rows, cols, gaps)
    except TopologyError as exc:
        assert "disconnected" in str(exc)
        return
    a = t.adjacency_matrix()
    assert (a == a.T).all()
    assert not a.diagonal().any()
    assert t.n_cells == rows * cols - len(gaps)
    assert t.max_degree <= 4
