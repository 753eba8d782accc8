import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dtnlab.mobility import (
    MobilityError,
    advance,
    custom_matrix,
    estimate_alpha,
    iid_matrix,
    mixing_lag,
    mixing_lag_energy,
    random_walk_matrix,
    sample_stationary,
    slem,
    stationary_distribution,
)
from dtnlab.topology import build_grid, ring


def test_walk_rows_and_folding():
    t = build_grid(4, 4)
    m = random_walk_matrix(t, 0.3)
    assert np.allclose(m.P.sum(axis=1), 1.0)
    # corner: two of the four moves hit the border and stay
    assert m.P[0, 0] == pytest.approx(0.7 + 0.15)
    assert m.P[0, 1] == pytest.approx(0.075)
    # interior cell 5 has all four neighbors
    assert m.P[5, 5] == pytest.approx(0.7)


def test_walk_on_grid_has_uniform_stationary_law():
    m = random_walk_matrix(build_grid(4, 4), 0.3)
    assert np.allclose(m.pi, 1 / 16, atol=1e-12)
    assert 0 < m.gamma < 1


def test_walk_slem_closed_form():
    # lazy walk on a 4x4 grid with reflecting borders: 1 - x/2 (1 - cos(pi/4))
    m = random_walk_matrix(build_grid(4, 4), 0.3)
    assert m.gamma == pytest.approx(1 - 0.15 * (1 - math.cos(math.pi / 4)), abs=1e-12)


def test_x_zero_is_not_ergodic():
    m = random_walk_matrix(build_grid(2, 2), 0.0)
    assert not m.ergodic
    assert m.gamma == 1.0
    with pytest.raises(MobilityError):
        estimate_alpha(m)


def test_move_prob_range():
    with pytest.raises(MobilityError):
        random_walk_matrix(build_grid(2, 2), 1.0)


def test_iid_model():
    pi = [0.5, 0.25, 0.25]
    m = iid_matrix(pi)
    assert m.gamma == 0.0
    assert m.unconstrained
    assert estimate_alpha(m) == 1.0
    with pytest.raises(MobilityError):
        iid_matrix([1.0, 0.0])


def test_custom_rejects_nonadjacent_jump():
    t = build_grid(1, 3)
    P = np.array([[0.5, 0, 0.5], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    with pytest.raises(MobilityError, match="non-adjacent"):
        custom_matrix(t, P)


def test_custom_rejects_nonstochastic():
    with pytest.raises(MobilityError):
        custom_matrix(None, [[0.5, 0.4], [0.5, 0.5]])


def test_nonuniform_stationary():
    t = ring(4)
    P = np.array([
        [0.5, 0.25, 0, 0.25],
        [0.25, 0.5, 0.25, 0],
        [0, 0.25, 0.5, 0.25],
        [0.5, 0, 0, 0.5],
    ])
    m = custom_matrix(t, P)
    assert np.allclose(m.pi @ m.P, m.pi, atol=1e-12)
    assert m.pi.sum() == pytest.approx(1.0)
    assert m.ergodic and m.pi.std() > 0.01


def test_periodic_chain_needs_solver():
    # period-2 chain: power iteration oscillates, the linear solve rescues it
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    pi = stationary_distribution(P, max_iter=50)
    assert np.allclose(pi, [0.5, 0.5])
    assert slem(P) == pytest.approx(1.0)


def test_alpha_makes_sandwich_hold():
    m = random_walk_matrix(build_grid(3, 3), 0.5)
    a = estimate_alpha(m)
    Pd = np.eye(9)
    for d in range(1, 60):
        Pd = Pd @ m.P
        eps = a * m.gamma**d
        assert (np.abs(Pd - m.pi) <= m.pi * eps * (1 + 1e-9) + 1e-15).all()


def test_mixing_lag_is_smallest():
    a, g, n, rho = 13.0, 0.95, 20, 0.5
    d = mixing_lag(a, g, n, rho)
    target = (1 - rho) / (8 * n * n)
    assert a * g**d <= target < a * g ** (d - 1)
    assert mixing_lag(a, 0.0, n, rho) == 0


def test_mixing_lag_energy_target():
    a, g, n = 2.0, 0.8, 20
    p, q, rho, beta = 0.35, 0.04, 0.5, 1.5
    d = mixing_lag_energy(a, g, n, p, q, rho, beta)
    target = (p - q) * rho * (beta - 1) / (4 * beta * (p + q) * n * n)
    assert a * g**d <= target < a * g ** (d - 1)
    with pytest.raises(ValueError):
        mixing_lag_energy(a, g, n, p, q, rho, 2.5)


def test_sampling_follows_pi():
    m = iid_matrix([0.5, 0.25, 0.25])
    x = sample_stationary(m, 200_000, np.random.default_rng(1))
    freq = np.bincount(x, minlength=3) / x.size
    assert np.allclose(freq, m.pi, atol=0.005)


def test_advance_clips_roundoff():
    cdf = np.array([[0.5, 1.0 - 1e-17, 1.0 - 1e-17]])
    last = np.array([1])
    out = advance(np.array([0]), cdf, last, np.array([0.9999999999999999]))
    assert out[0] == 1


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(0.01, 1.0)))
def test_stationary_is_fixed_point(w):
    P = w / w.sum(axis=1, keepdims=True)
    pi = stationary_distribution(P)
    assert np.allclose(pi @ P, pi, atol=1e-12)
    assert (pi >= 0).all() and pi.sum() == pytest.approx(1.0)
    assert slem(P) < 1.0
