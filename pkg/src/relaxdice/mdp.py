"""Tabular MDPs, policies, and discounted occupancy measures.

The normalized occupancy measure of a policy pi is

    d_pi(s, a) = (1 - gamma) * sum_t gamma^t Pr(s_t = s, a_t = a),

the unique solution of the Bellman flow constraints

    sum_a d(s, a) = (1 - gamma) p0(s) + gamma * sum_{s', a'} T(s | s', a') d(s', a').

Policies and occupancy measures are in one-to-one correspondence: the state
marginal solves a linear system, and conditioning d on its state marginal
recovers the policy.  Everything here is exact dense linear algebra except
the rollout sampler, which exists to build datasets.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .datasets import TransitionDataset, tabular_space


@dataclass
class TabularMDP:
    """Finite reward-free MDP: transition[s, a, s'] = P(s' | s, a)."""

    transition: np.ndarray
    p0: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        self.transition = np.asarray(self.transition, dtype=float)
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError(
                f"transition must have shape (S, A, S), got {self.transition.shape}"
            )
        if self.p0.shape != (self.transition.shape[0],):
            raise ValueError(
                f"p0 has shape {self.p0.shape}, expected ({self.transition.shape[0]},)"
            )
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(self.transition < 0.0) or np.any(self.p0 < 0.0):
            raise ValueError("probabilities must be nonnegative")
        rows = self.transition.sum(axis=2)
        if not np.allclose(rows, 1.0, atol=1e-9):
            bad = np.unravel_index(int(np.argmax(np.abs(rows - 1.0))), rows.shape)
            raise ValueError(f"transition row {bad} sums to {rows[bad]!r}, not 1")
        if not np.isclose(self.p0.sum(), 1.0, atol=1e-9):
            raise ValueError(f"p0 sums to {self.p0.sum()!r}, not 1")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


@dataclass
class TabularPolicy:
    """Conditional action distribution probs[s, a] = pi(a | s)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise ValueError("policy table must be 2-d (states by actions)")
        if np.any(self.probs < 0.0):
            raise ValueError("policy probabilities must be nonnegative")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("policy rows must sum to 1")

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))


@dataclass
class OccupancyMeasure:
    """Joint distribution d[s, a] with its Bellman-flow residual per state."""

    d: np.ndarray
    flow_residual: np.ndarray

    @property
    def max_flow_residual(self) -> float:
        return float(np.max(np.abs(self.flow_residual)))

    @property
    def state_marginal(self) -> np.ndarray:
        return self.d.sum(axis=1)


def policy_transition(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """State-to-state transition P_pi[s, s'] = sum_a pi(a | s) T(s' | s, a)."""
    return np.einsum("sa,sap->sp", policy.probs, mdp.transition)


def occupancy_of_policy(mdp: TabularMDP, policy: TabularPolicy) -> OccupancyMeasure:
    """Exact occupancy via the flow linear system.

    The state marginal solves (I - gamma P_pi^T) d_s = (1 - gamma) p0, then
    d(s, a) = d_s(s) pi(a | s).  The system is nonsingular for gamma < 1;
    a singular solve is re-raised with context, defensively.
    """
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("policy shape does not match the MDP")
    p = policy_transition(mdp, policy)
    s = mdp.num_states
    try:
        d_s = np.linalg.solve(
            np.eye(s) - mdp.gamma * p.T, (1.0 - mdp.gamma) * mdp.p0
        )
    except np.linalg.LinAlgError as exc:  # unreachable for gamma < 1
        raise np.linalg.LinAlgError(f"flow system is singular: {exc}") from exc
    d = d_s[:, None] * policy.probs
    return OccupancyMeasure(d=d, flow_residual=flow_residual(mdp, d))


def flow_residual(mdp: TabularMDP, d: np.ndarray) -> np.ndarray:
    """Per-state violation of the Bellman flow constraints (affine in d)."""
    d = np.asarray(d, dtype=float)
    if d.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"d has shape {d.shape}, expected "
                         f"({mdp.num_states}, {mdp.num_actions})")
    inflow = np.einsum("xas,xa->s", mdp.transition, d)
    return d.sum(axis=1) - (1.0 - mdp.gamma) * mdp.p0 - mdp.gamma * inflow


def policy_of_occupancy(d) -> TabularPolicy:
    """Conditional policy of an occupancy; uniform on zero-marginal states."""
    mat = d.d if isinstance(d, OccupancyMeasure) else np.asarray(d, dtype=float)
    mat = np.maximum(mat, 0.0)
    marginal = mat.sum(axis=1)
    num_actions = mat.shape[1]
    probs = np.full_like(mat, 1.0 / num_actions)
    pos = marginal > 0.0
    probs[pos] = mat[pos] / marginal[pos, None]
    return TabularPolicy(probs)


def exact_return(mdp: TabularMDP, policy: TabularPolicy, reward: np.ndarray) -> float:
    """Discounted return E[sum_t gamma^t r_t], by solving for the value function.

    The reward may be per state (S,) or per state-action (S, A).
    """
    reward = np.asarray(reward, dtype=float)
    if reward.ndim == 2:
        r_pi = np.einsum("sa,sa->s", policy.probs, reward)
    elif reward.shape == (mdp.num_states,):
        r_pi = reward
    else:
        raise ValueError(f"reward has shape {reward.shape}")
    p = policy_transition(mdp, policy)
    v = np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * p, r_pi)
    return float(mdp.p0 @ v)


def _categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # One draw per row; cdf inversion keeps it vectorized across rows.
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    idx = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_trajectories(
    mdp: TabularMDP,
    policy: TabularPolicy,
    num_steps: int,
    seed: int,
    termination: str = "geometric",
    horizon: int | None = None,
) -> TransitionDataset:
    """Roll out episodes until num_steps records are collected.

    Geometric termination continues each episode with probability gamma after
    every recorded step, so empirical (s, a) frequencies converge to the
    discounted occupancy d_pi.  Fixed-horizon mode runs episodes of exactly
    `horizon` steps.  Every episode start is appended to the initial-state
    pool.  Episodes are simulated in lockstep batches; records are stored
    episode-major, and the final partial episode is truncated at num_steps.
    """
    if num_steps <= 0:
        raise ValueError("num_steps must be positive")
    if termination not in ("geometric", "fixed-horizon"):
        raise ValueError(f"unknown termination mode {termination!r}")
    if termination == "fixed-horizon":
        if horizon is None or horizon <= 0:
            raise ValueError("fixed-horizon termination needs a positive horizon")
    rng = np.random.default_rng(seed)
    mean_len = horizon if termination == "fixed-horizon" else 1.0 / (1.0 - mdp.gamma)

    s_parts: list[np.ndarray] = []
    a_parts: list[np.ndarray] = []
    n_parts: list[np.ndarray] = []
    starts_parts: list[np.ndarray] = []
    collected = 0
    while collected < num_steps:
        remaining = num_steps - collected
        episodes = max(16, int(np.ceil(remaining / mean_len * 1.1)))
        if termination == "geometric":
            lengths = rng.geometric(1.0 - mdp.gamma, size=episodes)
        else:
            lengths = np.full(episodes, horizon, dtype=np.int64)
        total = int(lengths.sum())
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        s_buf = np.empty(total, dtype=np.int64)
        a_buf = np.empty(total, dtype=np.int64)
        n_buf = np.empty(total, dtype=np.int64)
        starts = _categorical_rows(
            np.broadcast_to(mdp.p0, (episodes, mdp.num_states)), rng)
        states = starts.copy()
        for t in range(int(lengths.max())):
            active = np.nonzero(lengths > t)[0]
            if active.size == 0:
                break
            cur = states[active]
            acts = _categorical_rows(policy.probs[cur], rng)
            nxt = _categorical_rows(mdp.transition[cur, acts], rng)
            put = offsets[active] + t
            s_buf[put] = cur
            a_buf[put] = acts
            n_buf[put] = nxt
            states[active] = nxt
        s_parts.append(s_buf)
        a_parts.append(a_buf)
        n_parts.append(n_buf)
        starts_parts.append(starts)
        collected += total

    states_all = np.concatenate(s_parts)[:num_steps]
    actions_all = np.concatenate(a_parts)[:num_steps]
    nexts_all = np.concatenate(n_parts)[:num_steps]
    return TransitionDataset(
        space=tabular_space(mdp.num_states, mdp.num_actions),
        states=states_all,
        actions=actions_all,
        next_states=nexts_all,
        initial_states=np.concatenate(starts_parts),
        provenance={
            "kind": "rollout",
            "termination": termination,
            "num_steps": num_steps,
            "seed": seed,
            "gamma": mdp.gamma,
        },
    )


def random_mdp(
    num_states: int,
    num_actions: int,
    gamma: float,
    seed: int,
    concentration: float = 1.0,
    deterministic_start: bool = False,
) -> TabularMDP:
    """Garnet-style random MDP with Dirichlet transition rows."""
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(
        np.full(num_states, concentration), size=(num_states, num_actions))
    if deterministic_start:
        p0 = np.zeros(num_states)
        p0[0] = 1.0
    else:
        p0 = rng.dirichlet(np.full(num_states, concentration))
    return TabularMDP(transition=transition, p0=p0, gamma=gamma)


# Gridworld actions move up, down, left, right on the (x, y) lattice.
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
GRID_ACTIONS = 4


@dataclass(frozen=True)
class GridworldSpec:
    """Layout of a slippery gridworld with a goal-absorbing sink state."""

    width: int
    height: int
    slip: float = 0.0
    gamma: float = 0.99
    goal: tuple[int, int] | None = None  # default: bottom-right cell
    start: tuple[int, int] | None = (0, 0)  # None: uniform over non-goal cells
    expert_temperature: float = 0.4

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1 x 1")
        if not (0.0 <= self.slip <= 1.0):
            raise ValueError(f"slip must lie in [0, 1], got {self.slip}")
        if self.expert_temperature <= 0.0:
            raise ValueError("expert_temperature must be positive")
        goal = self.goal if self.goal is not None else (self.width - 1, self.height - 1)
        for name, cell in (("goal", goal), ("start", self.start)):
            if cell is None:
                continue
            x, y = cell
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"{name} cell {cell} lies outside the grid")
        if self.start is not None and self.start == goal:
            raise ValueError("start and goal cells must differ")


@dataclass
class Gridworld:
    """A gridworld MDP with its goal annotation and reference policies.

    The MDP itself is reward-free; `reward` is the evaluation signal implied
    by the goal annotation (1 at the goal cell and in the absorbing sink).
    """

    mdp: TabularMDP
    spec: GridworldSpec
    goal_state: int
    absorbing_state: int
    reward: np.ndarray
    expert: TabularPolicy
    uniform: TabularPolicy
    distances: np.ndarray = field(repr=False, default=None)


def make_gridworld(spec: GridworldSpec) -> Gridworld:
    """Build the gridworld MDP, its goal annotation, and reference policies.

    Cells index row-major; one extra absorbing state sits at the end.  A move
    goes in the intended direction with probability 1 - slip and in a
    uniformly random direction otherwise; walls bounce back.  All actions in
    the goal cell lead to the absorbing sink, which self-loops.  The expert is
    a softmax over the decrease in BFS distance to the goal; the uniform
    policy is the random baseline.
    """
    w, h = spec.width, spec.height
    cells = w * h
    num_states = cells + 1
    absorbing = cells
    gx, gy = spec.goal if spec.goal is not None else (w - 1, h - 1)
    goal = gy * w + gx

    def step_cell(cell: int, move: int) -> int:
        x, y = cell % w, cell // w
        dx, dy = _MOVES[move]
        nx, ny = min(max(x + dx, 0), w - 1), min(max(y + dy, 0), h - 1)
        return ny * w + nx

    transition = np.zeros((num_states, GRID_ACTIONS, num_states))
    for cell in range(cells):
        if cell == goal:
            transition[cell, :, absorbing] = 1.0
            continue
        for action in range(GRID_ACTIONS):
            for move in range(GRID_ACTIONS):
                p = spec.slip / GRID_ACTIONS + (1.0 - spec.slip) * (move == action)
                transition[cell, action, step_cell(cell, move)] += p
    transition[absorbing, :, absorbing] = 1.0

    if spec.start is not None:
        p0 = np.zeros(num_states)
        p0[spec.start[1] * w + spec.start[0]] = 1.0
    else:
        p0 = np.zeros(num_states)
        p0[:cells] = 1.0
        p0[goal] = 0.0
        p0 /= p0.sum()

    reward = np.zeros(num_states)
    reward[goal] = 1.0
    reward[absorbing] = 1.0

    # BFS distance to the goal over intended moves, for the expert preference.
    distances = np.full(num_states, np.inf)
    distances[goal] = 0.0
    distances[absorbing] = 0.0
    queue = deque([goal])
    neighbors_in = [[] for _ in range(cells)]
    for cell in range(cells):
        for move in range(GRID_ACTIONS):
            nxt = step_cell(cell, move)
            if nxt != cell:
                neighbors_in[nxt].append(cell)
    while queue:
        cur = queue.popleft()
        for prev in neighbors_in[cur]:
            if np.isinf(distances[prev]):
                distances[prev] = distances[cur] + 1.0
                queue.append(prev)

    expert_probs = np.full((num_states, GRID_ACTIONS), 1.0 / GRID_ACTIONS)
    for cell in range(cells):
        if cell == goal:
            continue
        next_dist = np.array(
            [distances[step_cell(cell, a)] for a in range(GRID_ACTIONS)])
        logits = -(next_dist - next_dist.min()) / spec.expert_temperature
        weights = np.exp(logits)
        expert_probs[cell] = weights / weights.sum()

    mdp = TabularMDP(transition=transition, p0=p0, gamma=spec.gamma)
    return Gridworld(
        mdp=mdp,
        spec=spec,
        goal_state=goal,
        absorbing_state=absorbing,
        reward=reward,
        expert=TabularPolicy(expert_probs),
        uniform=TabularPolicy.uniform(num_states, GRID_ACTIONS),
        distances=distances,
    )
