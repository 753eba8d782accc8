import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnlab.analysis import RadioParams, capacity
from dtnlab.engine import SimConfig, run
from dtnlab.mobility import iid_matrix
from dtnlab.scheduler import (
    ADJ_KINDS,
    DecisionContext,
    Kind,
    SchedulerParams,
    expected_rates_min_energy,
    expected_rates_two_hop,
    min_energy_decide,
    min_energy_params,
    two_hop_params,
    two_hop_relay_decide,
    two_hop_relay_decide_alt,
)
from dtnlab.topology import build_grid

GRID = build_grid(2, 2)  # cells 0 1 / 2 3; 0 is adjacent to 1 and 2
R21 = RadioParams(2, 1)
R32 = RadioParams(3, 2)
UNIFORM16 = np.full(16, 1 / 16)


def params(delta=0.25, **kw):
    return SchedulerParams(algorithm="two_hop_relay", delta=delta, **kw)


def test_pair_in_cell_goes_direct_both_ways():
    ctx = DecisionContext(GRID, [0, 0, 3, 3], R21)
    rng = np.random.default_rng(0)
    seen = {(0, 1): 0, (1, 0): 0}
    for _ in range(2000):
        d = two_hop_relay_decide(ctx, 0, params(), rng)
        assert d.kind == Kind.SameCellDirect and d.rate == 2
        seen[(d.tx, d.rx)] += 1
    assert abs(seen[(0, 1)] - 1000) < 4 * np.sqrt(500)


def test_lone_user_with_adjacent_destination():
    ctx = DecisionContext(GRID, [0, 1, 3, 3], R21)
    d = two_hop_relay_decide(ctx, 0, params(), np.random.default_rng(1))
    assert (d.kind, d.tx, d.rx, d.rate) == (Kind.AdjDirect, 0, 1, 1)


def test_empty_cell_is_idle():
    ctx = DecisionContext(GRID, [0, 0, 0, 0], R21)
    assert two_hop_relay_decide(ctx, 3, params(), np.random.default_rng(0)).idle


def test_lone_user_relays_to_adjacent_users():
    # node 0 alone in cell 0, its destination in cell 3 (not adjacent), nodes 2 and 3 in cell 1
    ctx = DecisionContext(GRID, [0, 3, 1, 1], R21)
    rng = np.random.default_rng(2)
    kinds = set()
    for _ in range(500):
        d = two_hop_relay_decide(ctx, 0, params(), rng)
        assert d.tx == 0 and d.rx in (2, 3) and d.rate == 1
        kinds.add(d.kind)
    assert kinds == {Kind.AdjRelayNew, Kind.AdjRelayDeliver}


def test_relay_coin_bias():
    ctx = DecisionContext(GRID, [0, 3, 0, 1], R21)  # nodes 0 and 2 share cell 0, no pair
    rng = np.random.default_rng(3)
    delta = 0.4
    n = 20_000
    new = sum(two_hop_relay_decide(ctx, 0, params(delta), rng).kind == Kind.SameCellRelayNew for _ in range(n))
    p = (1 - delta) / 2
    assert abs(new / n - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_adjacent_first_order():
    # nodes 0 and 2 in cell 0 (no pair), node 1 (destination of 0) in adjacent cell 1
    ctx = DecisionContext(GRID, [0, 1, 0, 3], R32)
    d = two_hop_relay_decide_alt(ctx, 0, params(), np.random.default_rng(0))
    assert (d.kind, d.tx, d.rx, d.rate) == (Kind.AdjDirect, 0, 1, 2)
    ctx21 = DecisionContext(GRID, [0, 1, 0, 3], R21)
    d = two_hop_relay_decide(ctx21, 0, params(), np.random.default_rng(0))
    assert d.kind in (Kind.SameCellRelayNew, Kind.SameCellRelayDeliver)


def test_wrong_order_for_regime_is_rejected():
    ctx = DecisionContext(GRID, [0, 1, 0, 3], R32)
    with pytest.raises(ValueError):
        two_hop_relay_decide(ctx, 0, params(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        two_hop_relay_decide_alt(DecisionContext(GRID, [0, 1, 0, 3], R21), 0, params(), np.random.default_rng(0))


def test_queue_view_idles_empty_sender():
    ctx = DecisionContext(GRID, [0, 0, 3, 3], R21)
    d = two_hop_relay_decide(ctx, 0, params(), np.random.default_rng(0), queue_len=lambda h, dst: 0)
    assert d.idle


def test_deliver_needs_relay_packets_for_receiver():
    ctx = DecisionContext(GRID, [0, 3, 0, 1], R21)
    rng = np.random.default_rng(5)
    for _ in range(200):
        # only own packets are queued: every relay-deliver decision must collapse to idle
        d = two_hop_relay_decide(ctx, 0, params(0.9), rng, queue_len=lambda h, dst: int(dst == (h ^ 1)))
        assert d.kind != Kind.SameCellRelayDeliver


@pytest.fixture(scope="module")
def grid_report():
    return capacity(build_grid(4, 4), UNIFORM16, 20, R21)


def test_min_energy_first_piece_uses_pairs_only(grid_report):
    p = min_energy_params(grid_report, R21, 0.03)
    assert p.piece == 1
    ctx = DecisionContext(GRID, [0, 0, 1, 2], R21)
    rng = np.random.default_rng(0)
    assert min_energy_decide(ctx, 0, p, rng).kind == Kind.SameCellDirect
    ctx = DecisionContext(GRID, [0, 3, 0, 1], R21)
    assert all(min_energy_decide(ctx, 0, p, rng).idle for _ in range(50))


def test_min_energy_gate_leaves_cell_idle(grid_report):
    p = min_energy_params(grid_report, R21, 0.2, beta=1.5)
    assert p.piece == 2
    assert p.delta == pytest.approx(0.5 / 3.0)
    ctx = DecisionContext(GRID, [0, 3, 0, 3, 0, 2], R21)  # three users in cell 0, no pair there
    rng = np.random.default_rng(4)
    n = 20_000
    idle = sum(min_energy_decide(ctx, 0, p, rng).idle for _ in range(n))
    q = 1 - p.g_relay
    assert abs(idle / n - q) < 4 * np.sqrt(q * (1 - q) / n)


def test_min_energy_beta_domain(grid_report):
    with pytest.raises(ValueError):
        min_energy_params(grid_report, R21, 0.2, beta=1.0)
    with pytest.raises(ValueError):
        min_energy_params(grid_report, R21, 0.2, beta=2.0)


def test_params_validation():
    with pytest.raises(ValueError):
        SchedulerParams(algorithm="two_hop_relay", delta=0.0)
    with pytest.raises(ValueError):
        SchedulerParams(algorithm="flood", delta=0.1)


def test_two_hop_delta_default(grid_report):
    p = two_hop_params(grid_report, R21, 0.25)
    assert p.delta == pytest.approx((1 - 0.25 / grid_report.mu) / 4)
    assert two_hop_params(grid_report, R21, 0.6).delta == 0.01


@st.composite
def snapshots(draw):
    n = draw(st.sampled_from([2, 4, 6, 8]))
    pos = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    return pos, draw(st.integers(0, 2**32 - 1))


@settings(max_examples=200, deadline=None)
@given(snapshots(), st.sampled_from(["two_hop", "alt", "me1", "me2"]))
def test_decision_invariants(snap, policy):
    pos, seed = snap
    radio = R32 if policy == "alt" else R21
    ctx = DecisionContext(GRID, pos, radio)
    rng = np.random.default_rng(seed)
    if policy.startswith("me"):
        p = SchedulerParams(algorithm="min_energy", delta=0.2, piece=int(policy[-1]),
                            g_relay=0.0 if policy == "me1" else 0.6, g_adj_direct=0.0, g_adj_relay=0.0)
    else:
        p = params(0.3, adjacent_first=policy == "alt")
    for c in range(4):
        d = (two_hop_relay_decide_alt if policy == "alt" else
             min_energy_decide if policy.startswith("me") else two_hop_relay_decide)(ctx, c, p, rng)
        if d.idle:
            continue
        assert pos[d.tx] == c
        assert d.rx != d.tx
        if d.kind in ADJ_KINDS:
            assert pos[d.rx] in GRID.neighbors(c)
            assert d.rate == radio.R2
            assert not policy.startswith("me")
        else:
            assert pos[d.rx] == c
            assert d.rate == radio.R1
        if d.kind in (Kind.SameCellDirect, Kind.AdjDirect):
            assert d.rx == d.tx ^ 1
        if d.kind in (Kind.SameCellRelayNew, Kind.AdjRelayNew):
            assert d.rx != d.tx ^ 1


def _saturated(report, params, slots, seed=0):
    t = build_grid(4, 4)
    cfg = SimConfig(t, iid_matrix(UNIFORM16), R21, 20, 0.0, params, slots, seed=seed, saturated=True)
    return run(cfg)


def _sched_rates(st):
    n = st.measured * st.n_users
    k = st.kind_scheduled
    return (
        (2 * k["SameCellDirect"] + k["AdjDirect"]) / n,
        (2 * k["SameCellRelayNew"] + k["AdjRelayNew"]) / n,
        (2 * k["SameCellRelayDeliver"] + k["AdjRelayDeliver"]) / n,
    )


def test_two_hop_rates_at_saturation(grid_report):
    delta = (1 - 0.5) / 4
    st = _saturated(grid_report, params(delta), 200_000)
    for got, want in zip(_sched_rates(st), expected_rates_two_hop(grid_report, delta)):
        assert got == pytest.approx(want, rel=0.02)


def test_min_energy_rates_at_saturation(grid_report):
    p = min_energy_params(grid_report, R21, 0.2, beta=1.5)
    st = _saturated(grid_report, p, 1_000_000, seed=1)
    assert st.kind_scheduled["AdjDirect"] == st.kind_scheduled["AdjRelayNew"] == 0
    for got, want in zip(_sched_rates(st), expected_rates_min_energy(grid_report, R21, p)):
        assert got == pytest.approx(want, rel=0.02)


def test_relay_types_are_uniform():
    # relay 0 delivering: every destination other than 0 and its partner should be equally likely
    grid = build_grid(4, 4)
    rng = np.random.default_rng(7)
    counts = np.zeros(20, dtype=np.int64)
    p = params(0.125)
    while counts.sum() < 20_000:
        pos = rng.integers(0, 16, size=20)
        ctx = DecisionContext(grid, pos, R21)
        d = two_hop_relay_decide(ctx, int(pos[0]), p, rng)
        if d.kind == Kind.SameCellRelayDeliver and d.tx == 0:
            counts[d.rx] += 1
    assert counts[0] == counts[1] == 0
    row = counts[2:].astype(float)
    exp = row.sum() / row.size
    chi2_crit_17_999 = 40.79
    assert ((row - exp) ** 2 / exp).sum() < chi2_crit_17_999
