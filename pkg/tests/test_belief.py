import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hirec import seir
from hirec.belief import BeliefState, one_step_update
from hirec.netgen import GraphGenConfig, generate_scale_free
from hirec.seir import EpidemicParams


def scalar_update(p, q, G, beta, gamma):
    """Term-by-term evaluation of the recursion, one node at a time."""
    n = len(p)
    out = []
    for i in range(n):
        escape = 1.0
        for j in range(n):
            escape *= 1.0 - G[i][j] * beta * p[j]
        out.append((1 - p[i]) * q[i] * (1 - escape) + (1 - gamma * (1 - q[i])) * p[i])
    return out


def test_zero_mass_stays_zero():
    G = np.ones((4, 4)) - np.eye(4)
    assert np.all(one_step_update(np.zeros(4), np.ones(4), G, 0.3, 0.1) == 0)


def test_isolated_recovering_node():
    out = one_step_update([0.4], [0.0], np.zeros((1, 1)), 0.5, 0.1)
    assert out[0] == pytest.approx(0.4 * 0.9)


def test_path_graph_example():
    G = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    p, q = [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]
    expected = scalar_update(p, q, G.tolist(), 0.5, 0.1)
    assert expected == pytest.approx([0.5, 0.9, 0.5], abs=1e-15)
    assert one_step_update(p, q, G, 0.5, 0.1) == pytest.approx([0.5, 0.9, 0.5], abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        one_step_update(np.zeros(3), np.ones(2), np.zeros((3, 3)), 0.1, 0.1)


def test_fuzz_outputs_in_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(1, 12))
        p = rng.random(n) * (rng.random() < 0.8) + (rng.random(n) < 0.1)
        p = np.clip(p, 0, 1)
        q = (rng.random(n) < 0.7).astype(float)
        G = np.triu(rng.random((n, n)) < rng.random(), 1)
        G = (G | G.T).astype(float)
        beta, gamma = rng.choice([0.0, 1.0, rng.random()]), rng.choice([0.0, 1.0, rng.random()])
        out = one_step_update(p, q, G, beta, gamma)
        assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= 1))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_matches_scalar_oracle(data):
    n = data.draw(st.integers(1, 8))
    p = data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))
    q = data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=n, max_size=n))
    bits = data.draw(st.lists(st.booleans(), min_size=n * n, max_size=n * n))
    G = np.array(bits, dtype=float).reshape(n, n)
    G = np.triu(G, 1)
    G = G + G.T
    beta = data.draw(st.floats(0, 1))
    gamma = data.draw(st.floats(0, 1))
    got = one_step_update(p, q, G, beta, gamma)
    assert got == pytest.approx(scalar_update(p, q, G.tolist(), beta, gamma), abs=1e-12)


def test_recovery_decay_is_geometric():
    b = BeliefState(3, beta=0.3, gamma=0.2, t0=2)
    known = np.zeros((3, 3), dtype=bool)
    none = np.zeros(3, dtype=bool)
    b.advance(known, none, new_onsets=[1])
    vals = [b.current_beliefs()[0][1]]
    for _ in range(6):
        vals.append(b.advance(known, none)[1])
    # held at 1 through the onset, then (1 - gamma) per step
    assert vals[0] == 1.0
    ratios = np.array(vals[2:]) / np.array(vals[1:-1])
    assert ratios == pytest.approx(0.8)


def test_adding_an_edge_never_lowers_susceptible_belief():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = 7
        p = rng.random(n) * (rng.random(n) < 0.6)
        q = (rng.random(n) < 0.7).astype(float)
        G = np.triu(rng.random((n, n)) < 0.3, 1)
        G = (G | G.T).astype(float)
        i, j = rng.choice(n, 2, replace=False)
        if q[i] != 1 or p[j] == 0:
            continue
        G2 = G.copy()
        G2[i, j] = G2[j, i] = 1
        beta, gamma = rng.random(), rng.random()
        assert one_step_update(p, q, G2, beta, gamma)[i] >= one_step_update(p, q, G, beta, gamma)[i] - 1e-15


def test_initial_state():
    b = BeliefState(5, 0.1, 0.1, 3)
    p, q = b.current_beliefs()
    assert np.all(p == 0) and np.all(q == 1)


def test_onset_sets_belief_to_one_and_q_to_zero():
    b = BeliefState(4, 0.1, 0.1, 3)
    known = np.ones((4, 4), dtype=bool) & ~np.eye(4, dtype=bool)
    none = np.zeros(4, dtype=bool)
    b.advance(known, none)
    p = b.advance(known, none, new_onsets=[2])
    assert p[2] == 1.0
    assert b.current_beliefs()[1][2] == 0
    with pytest.raises(ValueError):
        b.advance(known, none, new_onsets=[2])


def test_out_of_order_update_rejected():
    b = BeliefState(3, 0.1, 0.1, 3)
    none = np.zeros(3, dtype=bool)
    b.advance(np.zeros((3, 3), dtype=bool), none, step_index=0)
    with pytest.raises(ValueError):
        b.advance(np.zeros((3, 3), dtype=bool), none, step_index=5)


def test_quiet_window_equals_single_update():
    rng = np.random.default_rng(1)
    n = 10
    G = np.triu(rng.random((n, n)) < 0.3, 1)
    G = G | G.T
    b = BeliefState(n, 0.2, 0.1, 4)
    none = np.zeros(n, dtype=bool)
    b.advance(G, none, new_onsets=[0, 3])
    for _ in range(3):
        b.advance(G, none)
    p, q = b.current_beliefs()
    nxt = b.advance(G, none)
    assert np.array_equal(nxt, one_step_update(p, q, G, 0.2, 0.1))


def test_window_invariant_for_onsets():
    net = generate_scale_free(GraphGenConfig(40, 4, seed=3))
    params = EpidemicParams(beta=0.2, gamma=0.05, t0=4, horizon=40, n_seeds=3)
    state = seir.init_epidemic(net, params, 5)
    b = BeliefState(net.n, params.beta, params.gamma, params.t0)
    while state.t < params.horizon:
        r = seir.step(state, net)
        b.advance(net.true_adj, net.removed, r.newly_infected)
        lo, hi = b.window()
        for i in np.flatnonzero(b.onset_time >= 0):
            t_i = b.onset_time[i]
            for tau in range(max(lo, t_i - params.t0), min(hi, t_i) + 1):
                assert b.history[tau][i] == 1.0
        assert all(np.all((h >= 0) & (h <= 1)) for h in b.history)


def test_exploration_revises_neighbors_upward():
    # path 0-1-2-3; node 0 turns symptomatic, node 1 is explored later
    from hirec.netgen import ContactNetwork

    def run(explore):
        net = ContactNetwork(4, [(0, 1), (1, 2), (2, 3)])
        b = BeliefState(4, beta=0.3, gamma=0.1, t0=3)
        b.advance(net.known_adj, net.removed)
        b.advance(net.known_adj, net.removed, new_onsets=[0])
        if explore:
            net.explore_node(1)
        return b.advance(net.known_adj, net.removed)

    with_edge, without = run(True), run(False)
    assert without[1] == 0.0
    assert with_edge[1] > without[1]
    # direct recomputation: node 0 is forced abnormal on belief times 0..2 and
    # only the edges revealed by exploring node 1 are visible
    G = [[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]]
    p = [1.0, 0.0, 0.0, 0.0]
    for tau in range(3):
        p[0] = 1.0
        q = [0.0 if tau >= 2 else 1.0, 1.0, 1.0, 1.0]
        p = scalar_update(p, q, G, 0.3, 0.1)
    assert with_edge == pytest.approx(p, abs=1e-12)
