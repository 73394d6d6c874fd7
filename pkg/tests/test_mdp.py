"""Occupancy machinery, rollout sampling, and the gridworld family."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from relaxdice.mdp import (
    Gridworld,
    GridworldSpec,
    TabularMDP,
    TabularPolicy,
    exact_return,
    flow_residual,
    make_gridworld,
    occupancy_of_policy,
    policy_of_occupancy,
    random_mdp,
    sample_trajectories,
)


def _chain_mdp():
    # two states, one action, 0 -> 1 -> 1; gamma 0.5, start at 0
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 1] = 1.0
    transition[1, 0, 1] = 1.0
    return TabularMDP(transition=transition, p0=np.array([1.0, 0.0]), gamma=0.5)


def test_mdp_validation():
    good = _chain_mdp()
    assert good.num_states == 2 and good.num_actions == 1
    with pytest.raises(ValueError):
        TabularMDP(transition=np.ones((2, 1, 2)), p0=np.array([1.0, 0.0]),
                   gamma=0.5)  # rows not stochastic
    with pytest.raises(ValueError):
        TabularMDP(transition=good.transition, p0=np.array([0.5, 0.4]),
                   gamma=0.5)  # p0 not normalized
    with pytest.raises(ValueError):
        TabularMDP(transition=good.transition, p0=good.p0, gamma=1.0)
    with pytest.raises(ValueError):
        TabularMDP(transition=good.transition, p0=good.p0, gamma=-0.1)


def test_policy_validation_and_uniform():
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.6], [0.5, 0.5]]))
    uni = TabularPolicy.uniform(3, 4)
    assert_allclose(uni.probs, np.full((3, 4), 0.25))


def test_two_state_chain_occupancy_frozen():
    occ = occupancy_of_policy(_chain_mdp(), TabularPolicy(np.ones((2, 1))))
    assert_allclose(occ.d[:, 0], [0.5, 0.5], atol=1e-12)
    assert occ.max_flow_residual < 1e-12


def test_occupancy_flow_residual_random_mdps():
    rng = np.random.default_rng(0)
    for seed in range(10):
        s = int(rng.integers(3, 12))
        a = int(rng.integers(2, 5))
        mdp = random_mdp(s, a, float(rng.uniform(0.3, 0.99)), seed=seed)
        policy = TabularPolicy(rng.dirichlet(np.ones(a), size=s))
        occ = occupancy_of_policy(mdp, policy)
        assert occ.max_flow_residual <= 1e-10
        assert abs(occ.d.sum() - 1.0) < 1e-10
        assert np.all(occ.d >= -1e-12)


def test_policy_occupancy_round_trip():
    rng = np.random.default_rng(1)
    for seed in range(10):
        mdp = random_mdp(6, 3, 0.9, seed=100 + seed)
        probs = rng.dirichlet(np.ones(3), size=6)
        policy = TabularPolicy(probs)
        occ = occupancy_of_policy(mdp, policy)
        back = policy_of_occupancy(occ)
        visited = occ.state_marginal > 1e-12
        assert np.max(np.abs(back.probs[visited] - probs[visited])) <= 1e-9


def test_policy_of_occupancy_uniform_on_zero_marginal():
    d = np.array([[0.6, 0.4], [0.0, 0.0]])
    policy = policy_of_occupancy(d)
    assert_allclose(policy.probs[1], [0.5, 0.5])


def test_flow_residual_detects_non_occupancy():
    mdp = _chain_mdp()
    bogus = np.array([[0.9], [0.1]])
    assert np.max(np.abs(flow_residual(mdp, bogus))) > 0.1


def test_exact_return_matches_occupancy_dot_reward():
    rng = np.random.default_rng(2)
    mdp = random_mdp(7, 3, 0.9, seed=3)
    policy = TabularPolicy(rng.dirichlet(np.ones(3), size=7))
    reward_sa = rng.uniform(0.0, 1.0, size=(7, 3))
    occ = occupancy_of_policy(mdp, policy)
    expected = float((occ.d * reward_sa).sum()) / (1.0 - mdp.gamma)
    assert_allclose(exact_return(mdp, policy, reward_sa), expected, rtol=1e-10)
    reward_s = rng.uniform(0.0, 1.0, size=7)
    expected_s = float(occ.state_marginal @ reward_s) / (1.0 - mdp.gamma)
    assert_allclose(exact_return(mdp, policy, reward_s), expected_s, rtol=1e-10)


def test_sampler_matches_exact_occupancy():
    mdp = random_mdp(5, 2, 0.9, seed=4)
    rng = np.random.default_rng(3)
    policy = TabularPolicy(rng.dirichlet(np.ones(2), size=5))
    exact = occupancy_of_policy(mdp, policy)
    data = sample_trajectories(mdp, policy, num_steps=200_000, seed=9)
    emp = np.zeros((5, 2))
    np.add.at(emp, (data.states, data.actions), 1.0)
    emp /= emp.sum()
    assert np.abs(emp - exact.d).sum() <= 0.02
    # every recorded initial state is a p0 atom
    assert set(np.unique(data.initial_states)) <= set(np.nonzero(mdp.p0)[0])


def test_sampler_determinism_and_truncation():
    mdp = random_mdp(4, 2, 0.8, seed=5)
    policy = TabularPolicy.uniform(4, 2)
    a = sample_trajectories(mdp, policy, num_steps=501, seed=7)
    b = sample_trajectories(mdp, policy, num_steps=501, seed=7)
    assert a == b
    assert len(a) == 501
    c = sample_trajectories(mdp, policy, num_steps=501, seed=8)
    assert c != a


def test_sampler_fixed_horizon():
    mdp = random_mdp(4, 2, 0.8, seed=6)
    policy = TabularPolicy.uniform(4, 2)
    data = sample_trajectories(mdp, policy, num_steps=60, seed=1,
                               termination="fixed-horizon", horizon=20)
    assert len(data) == 60
    # lockstep batching may start more episodes than strictly needed; the
    # pool records every start, and at least ceil(60 / 20) were consumed
    assert len(data.initial_states) >= 3
    assert data.provenance["gamma"] == mdp.gamma


def test_random_mdp_start_modes():
    spread = random_mdp(5, 2, 0.9, seed=0)
    point = random_mdp(5, 2, 0.9, seed=0, deterministic_start=True)
    assert np.count_nonzero(point.p0) == 1
    assert abs(spread.p0.sum() - 1.0) < 1e-12


def _small_grid(slip=0.1):
    return make_gridworld(GridworldSpec(width=4, height=4, slip=slip, gamma=0.95))


def test_gridworld_layout():
    grid = _small_grid()
    assert isinstance(grid, Gridworld)
    assert grid.mdp.num_states == 17  # 16 cells + absorbing sink
    assert grid.goal_state == 15
    assert grid.absorbing_state == 16
    # all goal-cell actions lead to the sink, which self-loops
    assert_allclose(grid.mdp.transition[15, :, 16], 1.0)
    assert_allclose(grid.mdp.transition[16, :, 16], 1.0)
    assert grid.reward[grid.goal_state] == 1.0
    assert grid.reward[grid.absorbing_state] == 1.0


def test_gridworld_deterministic_when_slip_zero():
    grid = _small_grid(slip=0.0)
    # moving right from the start cell lands exactly one cell over
    assert_allclose(grid.mdp.transition[0, 3, 1], 1.0)


def test_gridworld_expert_beats_uniform():
    grid = _small_grid()
    expert = exact_return(grid.mdp, grid.expert, grid.reward)
    uniform = exact_return(grid.mdp, grid.uniform, grid.reward)
    assert expert > uniform * 1.5


def test_gridworld_distances_decrease_toward_goal():
    grid = _small_grid()
    assert grid.distances[grid.goal_state] == 0
    assert grid.distances[0] == 6  # Manhattan distance on a 4x4 grid


def test_gridworld_spec_validation():
    with pytest.raises(ValueError):
        GridworldSpec(width=0, height=3)
    with pytest.raises(ValueError):
        GridworldSpec(width=3, height=3, slip=1.5)
    with pytest.raises(ValueError):
        GridworldSpec(width=3, height=3, start=(2, 2), goal=(2, 2))
    with pytest.raises(ValueError):
        GridworldSpec(width=3, height=3, expert_temperature=0.0)
