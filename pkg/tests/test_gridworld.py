import numpy as np
import pytest

from mvi.gridworld import GridSpec, build, random_projection_features, sample_trajectory
from mvi.policy_eval import MdpError, compile_vi, exact_value, induce_chain


def test_single_improving_direction():
    spec = GridSpec(width=2, height=1, beta=0.9, seed=0, n_traps=0, goal=(1, 0),
                    p_toward=1.0)
    mdp, policy = build(spec)
    # from cell 0 the only improving action is "right" (action 3)
    assert policy.nu[0, 3] == pytest.approx(1.0)


def test_two_improving_directions_probabilities():
    # goal at (1,1), agent at (0,0): down and right improve; the exploring
    # share spreads over all four directions
    spec = GridSpec(width=2, height=2, beta=0.9, seed=0, n_traps=0, goal=(1, 1))
    _mdp, policy = build(spec)
    nu = policy.nu[0]
    assert nu[1] == pytest.approx(0.95 / 2 + 0.05 / 4)  # down
    assert nu[3] == pytest.approx(0.95 / 2 + 0.05 / 4)  # right
    assert nu[0] == pytest.approx(0.05 / 4)             # up (stays in place)
    assert nu[2] == pytest.approx(0.05 / 4)             # left
    assert nu.sum() == pytest.approx(1.0)


def test_policy_uniform_at_goal():
    spec = GridSpec(width=3, height=3, beta=0.9, seed=1, n_traps=0, goal=(1, 1))
    _mdp, policy = build(spec)
    assert np.allclose(policy.nu[4], 0.25)


def test_default_spec_is_row_stochastic_400_states():
    spec = GridSpec(beta=0.9, seed=5)
    mdp, policy = build(spec)
    assert mdp.n_states == 400
    assert np.allclose(mdp.trans.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(policy.nu.sum(axis=1), 1.0, atol=1e-12)


def test_rewards_attach_to_entering():
    spec = GridSpec(width=3, height=1, beta=0.9, seed=0, n_traps=1,
                    goal=(2, 0), traps=frozenset({(0, 0)}))
    mdp, _policy = build(spec)
    # moving right from the middle cell enters the goal
    assert mdp.reward[1, 2, 3] == pytest.approx(1.0)
    # moving left from the middle cell enters the trap
    assert mdp.reward[1, 0, 2] == pytest.approx(-0.2)
    # goal teleports uniformly and pays the entered cell's reward
    assert np.allclose(mdp.trans[2, :, 0], 1.0 / 3)
    assert mdp.reward[2, 0, 0] == pytest.approx(-0.2)


def test_goal_not_a_trap_and_bounds_validation():
    with pytest.raises(MdpError):
        GridSpec(width=2, height=2, n_traps=1, goal=(0, 0),
                 traps=frozenset({(0, 0)})).resolve_layout()
    with pytest.raises(MdpError):
        GridSpec(width=2, height=2, goal=(5, 5)).resolve_layout()
    with pytest.raises(MdpError):
        GridSpec(width=2, height=2, n_traps=9)


def test_layout_deterministic_per_seed():
    a = GridSpec(beta=0.9, seed=3).resolve_layout()
    b = GridSpec(beta=0.9, seed=3).resolve_layout()
    c = GridSpec(beta=0.9, seed=4).resolve_layout()
    assert a == b
    assert a != c
    assert len(a[1]) == 30 and a[0] not in a[1]


def test_ergodic_across_default_regression_seeds():
    for seed in range(10):
        spec = GridSpec(width=8, height=8, beta=0.9, seed=seed, n_traps=6)
        mdp, policy = build(spec)
        chain = induce_chain(mdp, policy)  # raises if not single ergodic class
        assert chain.pi.min() > 0


def test_values_peak_next_to_goal_on_trap_free_grid():
    # entering the goal pays the reward and teleports, so the maximum value
    # sits on the cells about to enter the goal; the goal itself still beats
    # the far corners
    spec = GridSpec(width=6, height=6, beta=0.95, seed=2, n_traps=0, goal=(3, 3))
    mdp, policy = build(spec)
    chain = induce_chain(mdp, policy)
    v = exact_value(chain, 0.95)
    goal_idx = spec.cell_index((3, 3))
    adjacent = [spec.cell_index(c) for c in ((2, 3), (4, 3), (3, 2), (3, 4))]
    assert np.all(v >= 0)
    assert v.argmax() in adjacent
    assert v[goal_idx] > v[spec.cell_index((0, 0))]


def test_trajectory_empty_and_lazy():
    spec = GridSpec(width=3, height=3, beta=0.9, seed=1, n_traps=1)
    chain = induce_chain(*build(spec))
    assert list(sample_trajectory(chain, 0, 0, seed=0)) == []


def test_trajectory_frequencies_match_kernel():
    spec = GridSpec(width=3, height=3, beta=0.9, seed=1, n_traps=1)
    chain = induce_chain(*build(spec))
    n = chain.P.shape[0]
    steps = 200_000
    counts = np.zeros((n, n))
    rewards = np.zeros(n)
    visits = np.zeros(n)
    for s, s2, r in sample_trajectory(chain, 0, steps, seed=9):
        counts[s, s2] += 1
        rewards[s] += r
        visits[s] += 1
    rows = counts.sum(axis=1, keepdims=True)
    emp = counts / np.maximum(rows, 1)
    # multinomial 3-sigma envelope per row entry
    for s in range(n):
        ns = rows[s, 0]
        sd = np.sqrt(np.maximum(chain.P[s] * (1 - chain.P[s]), 1e-12) / max(ns, 1))
        assert np.all(np.abs(emp[s] - chain.P[s]) <= 3.5 * sd + 2.0 / max(ns, 1))
    # conditional mean rewards reproduce R
    mean_r = rewards / np.maximum(visits, 1)
    assert np.abs(mean_r - chain.R).max() <= 0.02


def test_trajectory_deterministic_per_seed():
    spec = GridSpec(width=4, height=4, beta=0.9, seed=2, n_traps=2)
    chain = induce_chain(*build(spec))
    a = list(sample_trajectory(chain, 3, 500, seed=5))
    b = list(sample_trajectory(chain, 3, 500, seed=5))
    assert a == b


def test_random_projection_features_orthonormal():
    phi = random_projection_features(20, 6, seed=1)
    assert phi.shape == (20, 6)
    assert np.allclose(phi.T @ phi, np.eye(6), atol=1e-12)
    spec = GridSpec(width=4, height=5, beta=0.9, seed=3, n_traps=2)
    chain = induce_chain(*build(spec))
    vi = compile_vi(chain, random_projection_features(20, 6, seed=1), 0.9)
    assert vi.mu > 0
